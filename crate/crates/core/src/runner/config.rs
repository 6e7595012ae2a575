use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusParams;
use crate::objectives::Application;
use crate::protocol::wire::Endpoint;
use crate::strategy::{
    cost_schedule, resilience_schedule, AgentId, FlexibilitySchedule, GuardSign, Mode,
    DEFAULT_ACCEPTANCE,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Scheduled,
    Stubborn,
    External,
}

/// One participant of every session in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub application: Application,
    #[serde(default = "scheduled")]
    pub strategy: StrategyKind,
    /// Defaults to the shipped schedule of the application.
    #[serde(default)]
    pub schedule: Option<FlexibilitySchedule>,
    #[serde(default)]
    pub acceptance: Option<f64>,
    #[serde(default)]
    pub guard: Option<GuardSign>,
    /// `tcp://host:port` or `exec:command args`, for external agents.
    #[serde(default)]
    pub endpoint: Option<String>,
}

fn scheduled() -> StrategyKind {
    StrategyKind::Scheduled
}

impl AgentSpec {
    pub fn scheduled(id: &str, application: Application) -> Self {
        AgentSpec {
            id: AgentId::from(id),
            application,
            strategy: StrategyKind::Scheduled,
            schedule: None,
            acceptance: None,
            guard: None,
            endpoint: None,
        }
    }

    pub fn external(id: &str, application: Application, endpoint: &str) -> Self {
        AgentSpec {
            strategy: StrategyKind::External,
            endpoint: Some(endpoint.to_owned()),
            ..AgentSpec::scheduled(id, application)
        }
    }

    pub fn schedule(&self) -> FlexibilitySchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| match self.application {
                Application::Cost => cost_schedule(),
                Application::Resilience => resilience_schedule(),
            })
    }

    pub fn endpoint(&self) -> Result<Endpoint> {
        let text = self.endpoint.as_deref().ok_or_else(|| {
            Error::Config(format!("external agent `{}` has no endpoint", self.id))
        })?;
        text.parse().map_err(Error::Config)
    }
}

/// Everything a batch run needs besides the scenario itself.
#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    pub modes: Vec<Mode>,
    pub hour: usize,
    pub max_rounds: u32,
    pub eps_consensus: f64,
    pub eps_weight: f64,
    pub trials: usize,
    pub seed: u64,
    /// Relative jitter applied to the flexibility schedules per trial.
    pub perturbation: f64,
    pub acceptance: f64,
    pub agents: Vec<AgentSpec>,
    pub scenario: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub pareto: bool,
    pub exclusivity: bool,
    pub n_weights: usize,
    pub timeout: Duration,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            modes: Mode::ALL.to_vec(),
            hour: 19,
            max_rounds: 10,
            eps_consensus: 1e-3,
            eps_weight: 1e-6,
            trials: 20,
            seed: 7,
            perturbation: 0.1,
            acceptance: DEFAULT_ACCEPTANCE,
            agents: vec![
                AgentSpec::scheduled("cost", Application::Cost),
                AgentSpec::scheduled("resilience", Application::Resilience),
            ],
            scenario: None,
            output_dir: PathBuf::from("out"),
            pareto: false,
            exclusivity: false,
            n_weights: 101,
            timeout: crate::protocol::wire::DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    mode: Option<String>,
    hour: Option<usize>,
    max_rounds: Option<u32>,
    eps_consensus: Option<f64>,
    eps_weight: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    perturbation: Option<f64>,
    acceptance: Option<f64>,
    scenario: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    pareto: Option<bool>,
    exclusivity: Option<bool>,
    n_weights: Option<usize>,
    timeout_secs: Option<f64>,
    agents: Option<Vec<AgentSpec>>,
}

/// Parses `all` or a single mode name.
pub fn parse_modes(text: &str) -> Result<Vec<Mode>> {
    if text == "all" {
        Ok(Mode::ALL.to_vec())
    } else {
        Ok(vec![text.parse().map_err(Error::Config)?])
    }
}

impl GameConfig {
    /// Reads a TOML config. A relative `scenario` path is resolved against the
    /// config file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(s), Some(dir)) = (&config.scenario, path.parent()) {
            if s.is_relative() {
                config.scenario = Some(dir.join(s));
            }
        }
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = GameConfig::default();
        if let Some(m) = file.mode {
            c.modes = parse_modes(&m)?;
        }
        c.hour = file.hour.unwrap_or(c.hour);
        c.max_rounds = file.max_rounds.unwrap_or(c.max_rounds);
        c.eps_consensus = file.eps_consensus.unwrap_or(c.eps_consensus);
        c.eps_weight = file.eps_weight.unwrap_or(c.eps_weight);
        c.trials = file.trials.unwrap_or(c.trials);
        c.seed = file.seed.unwrap_or(c.seed);
        c.perturbation = file.perturbation.unwrap_or(c.perturbation);
        c.acceptance = file.acceptance.unwrap_or(c.acceptance);
        c.scenario = file.scenario.or(c.scenario);
        c.output_dir = file.output_dir.unwrap_or(c.output_dir);
        c.pareto = file.pareto.unwrap_or(c.pareto);
        c.exclusivity = file.exclusivity.unwrap_or(c.exclusivity);
        c.n_weights = file.n_weights.unwrap_or(c.n_weights);
        if let Some(t) = file.timeout_secs {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("timeout_secs {t} must be positive")));
            }
            c.timeout = Duration::from_secs_f64(t);
        }
        if let Some(agents) = file.agents {
            c.agents = agents;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn params(&self) -> ConsensusParams<f64> {
        ConsensusParams {
            max_rounds: self.max_rounds,
            eps_consensus: self.eps_consensus,
            eps_weight: self.eps_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.modes.is_empty() {
            return bad("no mode selected".into());
        }
        if self.hour >= crate::domain::HOURS {
            return bad(format!("hour {} outside 0..24", self.hour));
        }
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.eps_consensus.is_nan()
            || self.eps_consensus < 0.0
            || self.eps_weight.is_nan()
            || self.eps_weight <= 0.0
        {
            return bad("tolerances must be positive".into());
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return bad(format!("perturbation {} outside [0, 1)", self.perturbation));
        }
        if self.n_weights < 2 {
            return bad("n_weights must be at least 2".into());
        }
        if self.agents.len() < 2 {
            return bad("at least two agents are required".into());
        }
        if self.modes.contains(&Mode::Bilateral) && self.agents.len() != 2 {
            return bad("bilateral sessions take exactly two agents".into());
        }
        let ids: BTreeSet<_> = self.agents.iter().map(|a| &a.id).collect();
        if ids.len() != self.agents.len() {
            return bad("agent ids must be unique".into());
        }
        for a in &self.agents {
            if a.strategy == StrategyKind::External {
                a.endpoint()?;
            }
            if let Some(FlexibilitySchedule::Table { values }) = &a.schedule {
                if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad(format!("schedule of `{}` must hold values in [0, 1]", a.id));
                }
            }
        }
        Ok(())
    }
}
