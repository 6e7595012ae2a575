//! Trial batches: builds the agents of every session, runs the selected
//! modes and writes the CSV and transcript artifacts.

mod config;
pub mod output;

pub use config::{parse_modes, AgentSpec, GameConfig, StrategyKind};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consensus::weighted_centroid;
use crate::domain::{build_feasible_set, DeviceKind, FeasibleBox, Scenario, Setpoints};
use crate::evaluation::{
    consistency, fairness, normalize_all, pareto_front, success_metric, TrialOutcome,
};
use crate::objectives::{optimal_setpoints, simulate_exclusive, Application, LinearObjective};
use crate::protocol::wire::ExternalAgent;
use crate::protocol::{run_session, SessionResult};
use crate::strategy::{
    Agent, AgentId, FlexibilitySchedule, Mode, ScheduledFlexibility, Strategy, Stubborn,
    ThresholdGuard,
};
use crate::{Error, Result};

use output::{ExclusiveRow, MetricsRow, ParetoRow, SummaryRow, TrajectoryRow};

/// One finished session of a batch.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub session: SessionResult<f64>,
    pub outcome: TrialOutcome<f64>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub feasible: FeasibleBox<f64>,
    pub objectives: BTreeMap<AgentId, LinearObjective<f64>>,
    /// Agents in config order.
    pub agents: Vec<AgentId>,
    pub initial_centroid: Setpoints<f64>,
    pub runs: Vec<TrialRun>,
}

impl Batch {
    pub fn outcomes(&self, mode: Mode) -> Vec<TrialOutcome<f64>> {
        self.runs
            .iter()
            .filter(|r| r.outcome.mode == mode)
            .map(|r| r.outcome.clone())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub batch: Batch,
    pub metrics: Vec<MetricsRow>,
    pub files: Vec<PathBuf>,
}

pub fn load_scenario(config: &GameConfig) -> Result<Scenario> {
    match &config.scenario {
        Some(path) => Scenario::from_path(path),
        None => Ok(Scenario::bundled()),
    }
}

/// Runs the batch and writes every artifact into `config.output_dir`.
pub fn run(config: &GameConfig) -> Result<RunReport> {
    config.validate()?;
    let scenario = load_scenario(config)?;
    let batch = execute(config, &scenario)?;
    let metrics = metrics(&batch)?;
    let files = write_outputs(config, &scenario, &batch, &metrics)?;
    Ok(RunReport {
        batch,
        metrics,
        files,
    })
}

/// Per-trial schedules, drawn once per trial and shared by all modes.
pub fn trial_schedules(config: &GameConfig, trial: usize) -> Vec<FlexibilitySchedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64);
    config
        .agents
        .iter()
        .map(|a| a.schedule().perturbed(&mut rng, config.perturbation))
        .collect()
}

/// Runs every trial of every selected mode, in order, without writing files.
pub fn execute(config: &GameConfig, scenario: &Scenario) -> Result<Batch> {
    config.validate()?;
    let feasible = build_feasible_set(scenario, config.hour, &scenario.initial_state())?;
    let mut objectives = BTreeMap::new();
    for a in &config.agents {
        objectives.insert(
            a.id.clone(),
            a.application.objective::<f64>(scenario, config.hour)?,
        );
    }
    let agents: Vec<AgentId> = config.agents.iter().map(|a| a.id.clone()).collect();
    let initial_centroid = initial_centroid(&objectives, &feasible)?;
    let params = config.params();
    let mut runs = Vec::new();
    for mode in &config.modes {
        for trial in 0..config.trials {
            let schedules = trial_schedules(config, trial);
            let session_id = format!("{mode}-{trial:03}");
            let mut participants = config
                .agents
                .iter()
                .zip(schedules)
                .map(|(spec, schedule)| {
                    build_agent(config, spec, &objectives[&spec.id], schedule, &session_id)
                })
                .collect::<Result<Vec<_>>>()?;
            let session = run_session(*mode, &mut participants, &feasible, &params, &session_id)?;
            let normalized = normalize_all(&objectives, &feasible, &session.resolution)?;
            let outcome = TrialOutcome {
                trial,
                mode: *mode,
                resolution: session.resolution.clone(),
                normalized,
                rounds_used: session.rounds_used,
                converged: session.converged,
            };
            runs.push(TrialRun { session, outcome });
        }
    }
    Ok(Batch {
        feasible,
        objectives,
        agents,
        initial_centroid,
        runs,
    })
}

/// Equal-weight centroid of every agent's box optimum.
pub fn initial_centroid(
    objectives: &BTreeMap<AgentId, LinearObjective<f64>>,
    fs: &FeasibleBox<f64>,
) -> Result<Setpoints<f64>> {
    let mut proposals = BTreeMap::new();
    for (a, obj) in objectives {
        proposals.insert(a.clone(), optimal_setpoints(obj, fs)?);
    }
    let ones = proposals.keys().map(|a| (a.clone(), 1.0)).collect();
    weighted_centroid(&proposals, &ones)
}

fn build_agent(
    config: &GameConfig,
    spec: &AgentSpec,
    objective: &LinearObjective<f64>,
    schedule: FlexibilitySchedule,
    session_id: &str,
) -> Result<Agent<f64>> {
    let acceptance = spec.acceptance.unwrap_or(config.acceptance);
    let base: Box<dyn Strategy<f64> + Send> = match spec.strategy {
        StrategyKind::Scheduled => Box::new(
            ScheduledFlexibility::new(objective.clone(), schedule).with_acceptance(acceptance),
        ),
        StrategyKind::Stubborn => Box::new(Stubborn::new(objective.clone())),
        StrategyKind::External => {
            let transport = spec
                .endpoint()?
                .connect(config.timeout)
                .map_err(|e| Error::agent(&spec.id, e.into()))?;
            Box::new(
                ExternalAgent::new(spec.id.clone(), session_id, transport)
                    .with_timeout(config.timeout),
            )
        }
    };
    let strategy: Box<dyn Strategy<f64> + Send> = match spec.guard {
        Some(sign) => Box::new(ThresholdGuard::boxed(base, DeviceKind::Bess, sign)),
        None => base,
    };
    Ok(Agent {
        id: spec.id.clone(),
        strategy,
    })
}

/// Table of success, variance, fairness and rounds per mode, preceded by the
/// initial-centroid baseline.
pub fn metrics(batch: &Batch) -> Result<Vec<MetricsRow>> {
    let (a, b) = (&batch.agents[0], &batch.agents[1]);
    let baseline = normalize_all(&batch.objectives, &batch.feasible, &batch.initial_centroid)?;
    let mut rows = vec![MetricsRow {
        label: "initial_centroid".into(),
        trials: 1,
        success: baseline.iter().map(|(k, v)| (k.clone(), 1.0 - v)).collect(),
        variance: baseline.keys().map(|k| (k.clone(), 0.0)).collect(),
        fairness: (baseline[a] - baseline[b]).abs() / 2f64.sqrt(),
        mean_rounds: None,
        converged_fraction: None,
    }];
    let mut modes: Vec<Mode> = Vec::new();
    for r in &batch.runs {
        if !modes.contains(&r.outcome.mode) {
            modes.push(r.outcome.mode);
        }
    }
    for mode in modes {
        let outcomes = batch.outcomes(mode);
        let n = outcomes.len() as f64;
        let mut success = BTreeMap::new();
        for agent in batch.objectives.keys() {
            success.insert(agent.clone(), success_metric(&outcomes, agent)?);
        }
        let mut fair = 0.0;
        for o in &outcomes {
            fair += fairness(o, a, b)?;
        }
        rows.push(MetricsRow {
            label: mode.to_string(),
            trials: outcomes.len(),
            success,
            variance: consistency(&outcomes)?,
            fairness: fair / n,
            mean_rounds: Some(
                outcomes
                    .iter()
                    .map(|o| f64::from(o.rounds_used))
                    .sum::<f64>()
                    / n,
            ),
            converged_fraction: Some(outcomes.iter().filter(|o| o.converged).count() as f64 / n),
        });
    }
    Ok(rows)
}

fn write_outputs(
    config: &GameConfig,
    scenario: &Scenario,
    batch: &Batch,
    metrics: &[MetricsRow],
) -> Result<Vec<PathBuf>> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        output::write_atomic(&path, &bytes)?;
        files.push(path);
        Ok(())
    };

    for run in &batch.runs {
        let stem = format!("{}_{:03}", run.outcome.mode, run.outcome.trial);
        put(
            format!("trajectory_{stem}.csv"),
            output::trajectory_csv(&TrajectoryRow::from_session(&run.session))?,
        )?;
        put(
            format!("transcript_{stem}.jsonl"),
            output::transcript_jsonl(&run.session.transcript)?,
        )?;
    }
    let summary: Vec<_> = batch
        .runs
        .iter()
        .map(|r| SummaryRow::from_outcome(&r.outcome, &r.session))
        .collect();
    put("summary.csv".into(), output::summary_csv(&summary)?)?;
    put("scatter.csv".into(), output::scatter_csv(&summary)?)?;
    put("metrics.csv".into(), output::metrics_csv(metrics)?)?;

    if config.pareto {
        let (a, b) = (&batch.agents[0], &batch.agents[1]);
        let front = pareto_front(
            &batch.objectives[a],
            &batch.objectives[b],
            &batch.feasible,
            config.n_weights,
        )?;
        let rows: Vec<_> = front.iter().map(ParetoRow::from_point).collect();
        put("pareto.csv".into(), output::pareto_csv(a, b, &rows)?)?;
    }
    if config.exclusivity {
        for app in [Application::Cost, Application::Resilience] {
            let steps = simulate_exclusive::<f64>(scenario, app)?;
            let rows: Vec<_> = steps.iter().map(ExclusiveRow::from_step).collect();
            put(
                format!("exclusive_{}.csv", app.name()),
                output::exclusive_csv(&rows)?,
            )?;
        }
    }
    Ok(files)
}

/// Output directory with the environment override applied.
pub fn output_dir_from_env(default: &Path) -> PathBuf {
    std::env::var_os("DECONFLICT_OUT").map_or_else(|| default.to_path_buf(), PathBuf::from)
}
