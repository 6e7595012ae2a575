use std::io;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deconflict::domain::Scenario;
use deconflict::objectives::Application;
use deconflict::protocol::wire::{serve_external_agent, serve_tcp};
use deconflict::runner::{self, parse_modes, GameConfig, StrategyKind};
use deconflict::strategy::{
    FlexibilitySchedule, ScheduledFlexibility, Strategy, Stubborn, DEFAULT_ACCEPTANCE,
};
use deconflict::Error;

#[derive(Parser)]
#[command(
    name = "deconflict",
    version,
    about = "Deconflict shared-DER setpoints among autonomous agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of sessions and write the CSV/JSONL artifacts.
    Run(RunArgs),
    /// Serve one scripted strategy over the wire protocol.
    Agent(AgentArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario TOML; defaults to the bundled fleet.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// bilateral, mediated, procedural or all.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    hour: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Relative per-trial jitter of the flexibility schedules.
    #[arg(long)]
    perturbation: Option<f64>,
    /// Also write the two 24-hour exclusive-control series.
    #[arg(long)]
    exclusivity: bool,
    /// Also write the Pareto front of the first two agents.
    #[arg(long)]
    pareto: bool,
    /// Attach an agent over the wire: `<agent-id>=tcp://host:port` or `<agent-id>=exec:command args`.
    #[arg(long = "external", value_name = "ID=ENDPOINT")]
    external: Vec<String>,
    /// Per-call timeout for external agents, in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long, env = "DECONFLICT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Cost,
    Resilience,
}

#[derive(Clone, Copy, ValueEnum)]
enum Behavior {
    Scheduled,
    Stubborn,
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, value_enum)]
    role: Role,
    #[arg(long, value_enum, default_value = "scheduled")]
    behavior: Behavior,
    /// Initial flexibility; defaults to the role's shipped schedule.
    #[arg(long)]
    initial: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ACCEPTANCE)]
    acceptance: f64,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 19)]
    hour: usize,
    /// Listen on this address instead of serving stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Agent { .. } => 3,
        Error::Scenario(_)
        | Error::HourOutOfRange(_)
        | Error::Infeasible { .. }
        | Error::KeyMismatch(_)
        | Error::UnknownDevice(_)
        | Error::ZeroWeights => 4,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}

fn build_config(args: RunArgs) -> Result<GameConfig, Error> {
    let mut c = match &args.config {
        Some(path) => GameConfig::from_path(path)?,
        None => GameConfig::default(),
    };
    if let Some(s) = args.scenario {
        c.scenario = Some(s);
    }
    if let Some(m) = &args.mode {
        c.modes = parse_modes(m)?;
    }
    c.hour = args.hour.unwrap_or(c.hour);
    c.trials = args.trials.unwrap_or(c.trials);
    c.seed = args.seed.unwrap_or(c.seed);
    c.max_rounds = args.max_rounds.unwrap_or(c.max_rounds);
    c.perturbation = args.perturbation.unwrap_or(c.perturbation);
    c.exclusivity |= args.exclusivity;
    c.pareto |= args.pareto;
    if let Some(t) = args.timeout_secs {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("timeout {t} must be positive")));
        }
        c.timeout = Duration::from_secs_f64(t);
    }
    for spec in &args.external {
        let (id, endpoint) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--external `{spec}` is not ID=ENDPOINT")))?;
        let agent = c
            .agents
            .iter_mut()
            .find(|a| a.id.as_str() == id)
            .ok_or_else(|| Error::Config(format!("--external names unknown agent `{id}`")))?;
        agent.strategy = StrategyKind::External;
        agent.endpoint = Some(endpoint.to_owned());
    }
    if let Some(out) = args.out {
        c.output_dir = out;
    }
    c.validate()?;
    Ok(c)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let config = build_config(args)?;
    let report = runner::run(&config)?;
    for row in &report.metrics {
        let success: Vec<String> = row
            .success
            .iter()
            .map(|(a, s)| format!("{a}={s:.4}"))
            .collect();
        let rounds = row
            .mean_rounds
            .map_or_else(|| "-".to_owned(), |r| format!("{r:.2}"));
        println!(
            "{:<17} success {}  fairness {:.4}  rounds {}",
            row.label,
            success.join(" "),
            row.fairness,
            rounds
        );
    }
    println!(
        "wrote {} files to {}",
        report.files.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn agent(args: AgentArgs) -> Result<(), Error> {
    let scenario = match &args.scenario {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::bundled(),
    };
    let application = match args.role {
        Role::Cost => Application::Cost,
        Role::Resilience => Application::Resilience,
    };
    let objective = application.objective::<f64>(&scenario, args.hour)?;
    let schedule = match (args.initial, args.decay, application) {
        (Some(initial), decay, _) => FlexibilitySchedule::Geometric {
            initial,
            decay: decay.unwrap_or(1.0),
        },
        (None, _, Application::Cost) => deconflict::strategy::cost_schedule(),
        (None, _, Application::Resilience) => deconflict::strategy::resilience_schedule(),
    };
    let behavior = args.behavior;
    let acceptance = args.acceptance;
    let make = move || -> Box<dyn Strategy<f64> + Send> {
        match behavior {
            Behavior::Scheduled => Box::new(
                ScheduledFlexibility::new(objective.clone(), schedule.clone())
                    .with_acceptance(acceptance),
            ),
            Behavior::Stubborn => Box::new(Stubborn::new(objective.clone())),
        }
    };
    match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(listener, make)?;
        }
        None => {
            let mut strategy = make();
            serve_external_agent(io::stdin().lock(), io::stdout().lock(), strategy.as_mut())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Agent(args) => agent(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
