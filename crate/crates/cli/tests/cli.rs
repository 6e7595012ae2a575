use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deconflict(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deconflict"))
        .args(args)
        .env_remove("DECONFLICT_OUT")
        .output()
        .unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out];
    args.extend_from_slice(extra);
    if !extra.contains(&"--trials") {
        args.extend(["--trials", "3"]);
    }
    deconflict(&args)
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn repeated_runs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run_into(d.path(), &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"summary.csv".to_owned()));
    assert!(names.contains(&"trajectory_mediated_002.csv".to_owned()));
    for name in &names {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn stdout_reports_metrics_per_mode() {
    let d = tempfile::tempdir().unwrap();
    let o = run_into(d.path(), &["--mode", "procedural"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("initial_centroid"));
    assert!(text.contains("procedural"));
    assert!(!text.contains("bilateral"));
}

#[test]
fn exclusivity_and_pareto_files_are_opt_in() {
    let d = tempfile::tempdir().unwrap();
    let o = run_into(
        d.path(),
        &["--mode", "bilateral", "--exclusivity", "--pareto"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["exclusive_cost.csv", "exclusive_resilience.csv"] {
        let text = String::from_utf8(read(d.path(), name)).unwrap();
        assert_eq!(text.lines().count(), 25, "{name}");
    }
    let pareto = String::from_utf8(read(d.path(), "pareto.csv")).unwrap();
    assert_eq!(pareto.lines().count(), 8);

    let plain = tempfile::tempdir().unwrap();
    assert!(run_into(plain.path(), &["--mode", "bilateral"])
        .status
        .success());
    assert!(!plain.path().join("pareto.csv").exists());
}

#[test]
fn bad_config_exits_with_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "trials = 0\n").unwrap();
    let o = deconflict(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));

    let o = run_into(d.path(), &["--mode", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_scenario_exits_with_4() {
    let d = tempfile::tempdir().unwrap();
    let scenario = d.path().join("scenario.toml");
    fs::write(&scenario, "not a scenario = [").unwrap();
    let o = run_into(d.path(), &["--scenario", scenario.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn subprocess_agent_matches_in_process_agent() {
    let bin = env!("CARGO_BIN_EXE_deconflict");
    let endpoint = format!("resilience=exec:{bin} agent --role resilience");
    let (local, remote) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flat = ["--perturbation", "0", "--trials", "2"];
    let o = run_into(local.path(), &flat);
    assert!(o.status.success());
    let mut args = flat.to_vec();
    args.extend(["--external", endpoint.as_str()]);
    let o = run_into(remote.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        read(local.path(), "summary.csv"),
        read(remote.path(), "summary.csv")
    );
    assert_eq!(
        read(local.path(), "transcript_mediated_001.jsonl"),
        read(remote.path(), "transcript_mediated_001.jsonl")
    );
}

#[test]
fn failing_subprocess_agent_exits_with_3() {
    let d = tempfile::tempdir().unwrap();
    let o = run_into(
        d.path(),
        &[
            "--mode",
            "procedural",
            "--external",
            "cost=exec:/nonexistent/agent",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
