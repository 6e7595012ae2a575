use thiserror::Error;

use crate::domain::DeviceId;
use crate::protocol::wire::ProtocolError;
use crate::strategy::AgentId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("device sets differ: {0}")]
    KeyMismatch(String),

    #[error("unknown device `{0}`")]
    UnknownDevice(DeviceId),

    #[error("hour {0} is out of range 0..24")]
    HourOutOfRange(usize),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("setpoint {value} for {device} lies outside [{lower}, {upper}]")]
    Infeasible {
        device: DeviceId,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all centroid weights are zero")]
    ZeroWeights,

    #[error("agent `{agent}` failed: {source}")]
    Agent {
        agent: AgentId,
        #[source]
        source: AgentError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure raised by a strategy, local or remote.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("proposal infeasible: {0}")]
    Infeasible(Box<Error>),

    #[error("{0}")]
    Failed(String),
}

impl Error {
    pub(crate) fn agent(agent: &AgentId, source: AgentError) -> Self {
        Error::Agent {
            agent: agent.clone(),
            source,
        }
    }
}
