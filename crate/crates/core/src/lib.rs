//! Deconfliction of setpoint requests from autonomous agents that share
//! controllable distributed energy resources.
//!
//! Agents never reveal their objectives. They exchange proposals through one
//! of three sessions (bilateral offers, a mediator, or the procedural
//! weighted-centroid game) and the session produces one resolution vector.
//!
//! ```
//! use deconflict::domain::{build_feasible_set, Scenario};
//! use deconflict::objectives::{cost_objective, resilience_objective};
//! use deconflict::protocol::run_procedural;
//! use deconflict::strategy::{Agent, Stubborn};
//! use deconflict::consensus::ConsensusParams;
//!
//! let scenario = Scenario::bundled();
//! let fs: deconflict::FeasibleSet = build_feasible_set(&scenario, 19, &scenario.initial_state()).unwrap();
//! let mut agents = vec![
//!     Agent::new("cost", Stubborn::new(cost_objective(&scenario, 19).unwrap())),
//!     Agent::new("resilience", Stubborn::new(resilience_objective(&scenario))),
//! ];
//! let session = run_procedural(&mut agents, &fs, &ConsensusParams::default(), "demo").unwrap();
//! assert!(!session.converged);
//! assert_eq!(session.rounds_used, 10);
//! ```

pub mod compromise;
pub mod consensus;
pub mod domain;
mod error;
pub mod evaluation;
pub mod objectives;
pub mod protocol;
pub mod runner;
mod scalar;
pub mod strategy;

pub use error::{AgentError, Error, Result};
pub use scalar::Scalar;

pub type SetpointVector = domain::Setpoints<f64>;
pub type FeasibleSet = domain::FeasibleBox<f64>;
pub type BessState = domain::SocState<f64>;
pub type ObjectiveSpec = objectives::LinearObjective<f64>;
pub type GameResult = consensus::GameOutcome<f64>;
pub type SessionResult = protocol::SessionResult<f64>;

pub type SetpointVector32 = domain::Setpoints<f32>;
pub type FeasibleSet32 = domain::FeasibleBox<f32>;
pub type BessState32 = domain::SocState<f32>;
pub type ObjectiveSpec32 = objectives::LinearObjective<f32>;
pub type GameResult32 = consensus::GameOutcome<f32>;
pub type SessionResult32 = protocol::SessionResult<f32>;
