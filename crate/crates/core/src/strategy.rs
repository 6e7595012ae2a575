//! Agent strategies: the interface the deconfliction engines talk to and the
//! deterministic scripted strategies shipped for experiments.
//!
//! A strategy only ever sees its own objective, the feasible box and the
//! points the engine sends it (consensus, counterpart offers). It never sees
//! the other agents' objectives or engine internals.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compromise::{balanced_compromise, flexibility_to_radius, CompromiseRequest};
use crate::domain::{aggregate, distance, DeviceKind, FeasibleBox, Setpoints};
use crate::error::AgentError;
use crate::evaluation::normalize_objective;
use crate::objectives::{optimal_setpoints, LinearObjective};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bilateral,
    Mediated,
    Procedural,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Bilateral, Mode::Mediated, Mode::Procedural];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bilateral => "bilateral",
            Mode::Mediated => "mediated",
            Mode::Procedural => "procedural",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilateral" => Ok(Mode::Bilateral),
            "mediated" => Ok(Mode::Mediated),
            "procedural" => Ok(Mode::Procedural),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// What an agent is told when asked for its opening proposal.
#[derive(Clone, Copy, Debug)]
pub struct Opening<'a, T> {
    pub mode: Mode,
    pub feasible: &'a FeasibleBox<T>,
}

/// What an agent is told in every later round.
#[derive(Clone, Copy, Debug)]
pub struct Turn<'a, T> {
    pub mode: Mode,
    pub round: u32,
    pub feasible: &'a FeasibleBox<T>,
    /// Point to compromise toward: the current centroid, or in bilateral
    /// mode the midpoint of the two latest offers.
    pub reference: &'a Setpoints<T>,
    /// Point the agent may accept: the counterpart's latest offer
    /// (bilateral) or the centroid (mediated). `None` in procedural mode.
    pub offer: Option<&'a Setpoints<T>>,
    /// The agent's own latest proposal.
    pub previous: &'a Setpoints<T>,
    /// Flexibility the mediator suggests for this agent.
    pub suggested_flexibility: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reply<T> {
    Accept,
    Counter {
        setpoints: Setpoints<T>,
        flexibility: T,
    },
}

pub trait Strategy<T: Scalar> {
    fn initial_proposal(&mut self, opening: &Opening<'_, T>) -> Result<Setpoints<T>, AgentError>;

    fn respond(&mut self, turn: &Turn<'_, T>) -> Result<Reply<T>, AgentError>;
}

/// A named participant in a session.
pub struct Agent<T> {
    pub id: AgentId,
    pub strategy: Box<dyn Strategy<T> + Send>,
}

impl<T: Scalar> Agent<T> {
    pub fn new(id: impl Into<AgentId>, strategy: impl Strategy<T> + Send + 'static) -> Self {
        Agent {
            id: id.into(),
            strategy: Box::new(strategy),
        }
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

impl<T> fmt::Debug for Agent<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

/// Per-round flexibility factor in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlexibilitySchedule {
    Constant {
        value: f64,
    },
    /// `initial * decay^round`
    Geometric {
        initial: f64,
        decay: f64,
    },
    /// Explicit per-round values starting at round 1; the last value repeats.
    Table {
        values: Vec<f64>,
    },
}

impl FlexibilitySchedule {
    pub fn at<T: Scalar>(&self, round: u32) -> T {
        let v = match self {
            FlexibilitySchedule::Constant { value } => *value,
            FlexibilitySchedule::Geometric { initial, decay } => initial * decay.powi(round as i32),
            FlexibilitySchedule::Table { values } => {
                let i = (round.max(1) as usize - 1).min(values.len().saturating_sub(1));
                values.get(i).copied().unwrap_or(0.0)
            }
        };
        T::of(v.clamp(0.0, 1.0))
    }

    /// Relative jitter of up to `spread` on the level and `spread / 10` on the
    /// decay rate, drawn from `rng`.
    pub fn perturbed(&self, rng: &mut impl Rng, spread: f64) -> Self {
        if spread <= 0.0 {
            return self.clone();
        }
        let mut jitter = |s: f64| 1.0 + rng.gen_range(-s..=s);
        match self {
            FlexibilitySchedule::Constant { value } => FlexibilitySchedule::Constant {
                value: (value * jitter(spread)).clamp(0.0, 1.0),
            },
            FlexibilitySchedule::Geometric { initial, decay } => {
                let initial = (initial * jitter(spread)).clamp(0.0, 1.0);
                let decay = (decay * jitter(spread / 10.0)).clamp(0.0, 1.0);
                FlexibilitySchedule::Geometric { initial, decay }
            }
            FlexibilitySchedule::Table { values } => FlexibilitySchedule::Table {
                values: values
                    .iter()
                    .map(|v| (v * jitter(spread)).clamp(0.0, 1.0))
                    .collect(),
            },
        }
    }
}

/// Acceptance threshold on the normalized objective.
pub const DEFAULT_ACCEPTANCE: f64 = 0.35;

/// Opens at its own optimum and in each round compromises toward the
/// reference point with the flexibility its schedule prescribes.
///
/// The ball radius is `(1 - f) * |previous - reference|`, capped by the
/// distance from the optimum to the reference. When a mediator suggests a
/// flexibility, the strategy uses the mean of that and its schedule.
/// An offer is accepted when its normalized objective is at most the
/// acceptance threshold.
#[derive(Clone, Debug)]
pub struct ScheduledFlexibility<T> {
    objective: LinearObjective<T>,
    schedule: FlexibilitySchedule,
    acceptance: T,
}

impl<T: Scalar> ScheduledFlexibility<T> {
    pub fn new(objective: LinearObjective<T>, schedule: FlexibilitySchedule) -> Self {
        ScheduledFlexibility {
            objective,
            schedule,
            acceptance: T::of(DEFAULT_ACCEPTANCE),
        }
    }

    pub fn with_acceptance(mut self, threshold: T) -> Self {
        self.acceptance = threshold;
        self
    }

    /// Never accepts; offers can still be reached through the centroid rule.
    pub fn never_accepting(self) -> Self {
        self.with_acceptance(-T::one())
    }

    pub fn objective(&self) -> &LinearObjective<T> {
        &self.objective
    }

    pub fn schedule(&self) -> &FlexibilitySchedule {
        &self.schedule
    }

    fn flexibility(&self, turn: &Turn<'_, T>) -> T {
        let own = self.schedule.at::<T>(turn.round);
        match turn.suggested_flexibility {
            Some(s) => T::of(0.5) * (own + s.max(T::zero()).min(T::one())),
            None => own,
        }
    }
}

fn failed(e: crate::Error) -> AgentError {
    AgentError::Failed(e.to_string())
}

impl<T: Scalar> Strategy<T> for ScheduledFlexibility<T> {
    fn initial_proposal(&mut self, opening: &Opening<'_, T>) -> Result<Setpoints<T>, AgentError> {
        optimal_setpoints(&self.objective, opening.feasible).map_err(failed)
    }

    fn respond(&mut self, turn: &Turn<'_, T>) -> Result<Reply<T>, AgentError> {
        if let Some(offer) = turn.offer {
            let score =
                normalize_objective(&self.objective, turn.feasible, offer).map_err(failed)?;
            if score <= self.acceptance {
                return Ok(Reply::Accept);
            }
        }
        let desired = optimal_setpoints(&self.objective, turn.feasible).map_err(failed)?;
        let flexibility = self.flexibility(turn);
        let to_desired = distance(&desired, turn.reference).map_err(failed)?;
        let to_previous = distance(turn.previous, turn.reference).map_err(failed)?;
        let radius = flexibility_to_radius(flexibility, to_previous)
            .map_err(failed)?
            .min(to_desired);
        let request = CompromiseRequest::new(
            self.objective.clone(),
            turn.feasible.clone(),
            turn.reference,
            &desired,
            radius,
        )
        .map_err(failed)?;
        let setpoints = balanced_compromise(&request).map_err(failed)?;
        Ok(Reply::Counter {
            setpoints,
            flexibility,
        })
    }
}

/// Always re-proposes its own optimum and never accepts.
#[derive(Clone, Debug)]
pub struct Stubborn<T> {
    objective: LinearObjective<T>,
}

impl<T: Scalar> Stubborn<T> {
    pub fn new(objective: LinearObjective<T>) -> Self {
        Stubborn { objective }
    }
}

impl<T: Scalar> Strategy<T> for Stubborn<T> {
    fn initial_proposal(&mut self, opening: &Opening<'_, T>) -> Result<Setpoints<T>, AgentError> {
        optimal_setpoints(&self.objective, opening.feasible).map_err(failed)
    }

    fn respond(&mut self, turn: &Turn<'_, T>) -> Result<Reply<T>, AgentError> {
        Ok(Reply::Counter {
            setpoints: optimal_setpoints(&self.objective, turn.feasible).map_err(failed)?,
            flexibility: T::zero(),
        })
    }
}

/// Sign the guarded aggregate must keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardSign {
    /// Aggregate at most zero (BESS charging or idle).
    NonPositive,
    /// Aggregate at least zero.
    NonNegative,
}

/// Wraps a strategy and keeps the aggregate of one device kind on one side of
/// zero. Offending components are clamped to zero; other kinds pass through.
pub struct ThresholdGuard<T> {
    inner: Box<dyn Strategy<T> + Send>,
    kind: DeviceKind,
    sign: GuardSign,
}

impl<T: Scalar> ThresholdGuard<T> {
    pub fn new(
        inner: impl Strategy<T> + Send + 'static,
        kind: DeviceKind,
        sign: GuardSign,
    ) -> Self {
        ThresholdGuard {
            inner: Box::new(inner),
            kind,
            sign,
        }
    }

    pub fn boxed(inner: Box<dyn Strategy<T> + Send>, kind: DeviceKind, sign: GuardSign) -> Self {
        ThresholdGuard { inner, kind, sign }
    }

    pub fn apply(&self, x: &Setpoints<T>, fs: &FeasibleBox<T>) -> Result<Setpoints<T>, AgentError> {
        let total: T = x
            .iter()
            .filter(|(_, kind, _)| *kind == self.kind)
            .map(|(_, _, v)| v)
            .sum();
        let violated = match self.sign {
            GuardSign::NonPositive => total > T::zero(),
            GuardSign::NonNegative => total < T::zero(),
        };
        if !violated {
            return Ok(x.clone());
        }
        let devices = x.devices().clone();
        let clamped = x.map(|i, v| {
            if devices.kind(i) != self.kind {
                return v;
            }
            match self.sign {
                GuardSign::NonPositive => v.min(T::zero()),
                GuardSign::NonNegative => v.max(T::zero()),
            }
        });
        fs.project(&clamped).map_err(failed)
    }
}

impl<T: Scalar> Strategy<T> for ThresholdGuard<T> {
    fn initial_proposal(&mut self, opening: &Opening<'_, T>) -> Result<Setpoints<T>, AgentError> {
        let x = self.inner.initial_proposal(opening)?;
        self.apply(&x, opening.feasible)
    }

    fn respond(&mut self, turn: &Turn<'_, T>) -> Result<Reply<T>, AgentError> {
        match self.inner.respond(turn)? {
            Reply::Accept => Ok(Reply::Accept),
            Reply::Counter {
                setpoints,
                flexibility,
            } => Ok(Reply::Counter {
                setpoints: self.apply(&setpoints, turn.feasible)?,
                flexibility,
            }),
        }
    }
}

/// Shipped flexibility schedule of the cost agent.
pub fn cost_schedule() -> FlexibilitySchedule {
    FlexibilitySchedule::Geometric {
        initial: 0.5,
        decay: 0.85,
    }
}

/// Shipped flexibility schedule of the resilience agent; about 0.02 by round 10.
pub fn resilience_schedule() -> FlexibilitySchedule {
    FlexibilitySchedule::Geometric {
        initial: 0.3,
        decay: 0.76,
    }
}

/// Convenience for the BESS aggregate used by guards and reports.
pub fn bess_total<T: Scalar>(x: &Setpoints<T>) -> T {
    aggregate(x).bess
}
