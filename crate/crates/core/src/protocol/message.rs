use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::DeviceId;
use crate::strategy::AgentId;

/// Longest accepted justification, in characters.
pub const MAX_JUSTIFICATION: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    InitialProposal,
    CounterOffer,
    ConsensusUpdate,
    Accept,
    Reject,
    FinalResolution,
}

impl MessageKind {
    pub fn carries_setpoints(self) -> bool {
        !matches!(self, MessageKind::Accept | MessageKind::Reject)
    }
}

/// One entry of a session transcript, also the payload exchanged with
/// external agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMessage {
    pub session_id: String,
    pub round: u32,
    pub sender: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<AgentId>,
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoints: Option<BTreeMap<DeviceId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flexibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

impl SessionMessage {
    pub fn new(session_id: &str, round: u32, sender: &AgentId, kind: MessageKind) -> Self {
        SessionMessage {
            session_id: session_id.to_owned(),
            round,
            sender: sender.clone(),
            recipient: None,
            kind,
            setpoints: None,
            flexibility: None,
            justification: None,
        }
    }

    pub fn with_setpoints(mut self, setpoints: BTreeMap<DeviceId, f64>) -> Self {
        self.setpoints = Some(setpoints);
        self
    }

    pub fn with_flexibility(mut self, flexibility: f64) -> Self {
        self.flexibility = Some(flexibility);
        self
    }

    pub fn with_recipient(mut self, recipient: &AgentId) -> Self {
        self.recipient = Some(recipient.clone());
        self
    }

    pub fn with_justification(mut self, text: impl Into<String>) -> Self {
        self.justification = Some(text.into());
        self
    }

    /// Checks the field presence rules of the message kind.
    pub fn validate(&self) -> Result<(), String> {
        match (self.kind.carries_setpoints(), &self.setpoints) {
            (true, None) => return Err(format!("{:?} requires setpoints", self.kind)),
            (false, Some(_)) => return Err(format!("{:?} must not carry setpoints", self.kind)),
            _ => {}
        }
        if let Some(map) = &self.setpoints {
            if let Some((id, v)) = map.iter().find(|(_, v)| !v.is_finite()) {
                return Err(format!("non-finite setpoint {v} for {id}"));
            }
        }
        if let Some(f) = self.flexibility {
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("flexibility {f} outside [0, 1]"));
            }
        }
        if let Some(text) = &self.justification {
            if text.chars().count() > MAX_JUSTIFICATION {
                return Err(format!(
                    "justification longer than {MAX_JUSTIFICATION} characters"
                ));
            }
        }
        Ok(())
    }
}

/// Checks that rounds never decrease and every message is well formed.
pub fn validate_transcript(messages: &[SessionMessage]) -> Result<(), String> {
    let mut last = 0;
    for (i, m) in messages.iter().enumerate() {
        m.validate().map_err(|e| format!("message {i}: {e}"))?;
        if m.round < last {
            return Err(format!("message {i}: round {} after round {last}", m.round));
        }
        last = m.round;
    }
    Ok(())
}
