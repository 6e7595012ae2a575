//! Session state machines for the three deconfliction modes, their
//! transcripts and the external-agent wire protocol.

mod bilateral;
pub mod message;
pub mod wire;

pub use bilateral::run_bilateral_game;
pub use message::{validate_transcript, MessageKind, SessionMessage};

use crate::consensus::{
    run_mediated_game, run_procedural_game, ConsensusParams, GameOutcome, Move, RoundRecord,
    Termination,
};
use crate::domain::{FeasibleBox, Setpoints};
use crate::strategy::{Agent, AgentId, Mode};
use crate::{Error, Result, Scalar};

/// Sender of consensus updates and final resolutions in mediated sessions.
pub const MEDIATOR: &str = "mediator";
/// Sender of engine messages in procedural and bilateral sessions.
pub const ENGINE: &str = "engine";

#[derive(Clone, Debug, PartialEq)]
pub struct SessionResult<T> {
    pub mode: Mode,
    pub transcript: Vec<SessionMessage>,
    pub rounds: Vec<RoundRecord<T>>,
    pub rounds_used: u32,
    pub resolution: Setpoints<T>,
    pub converged: bool,
    pub termination: Termination,
}

pub fn run_bilateral<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
    session_id: &str,
) -> Result<SessionResult<T>> {
    run_session(Mode::Bilateral, agents, fs, params, session_id)
}

pub fn run_mediated<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
    session_id: &str,
) -> Result<SessionResult<T>> {
    run_session(Mode::Mediated, agents, fs, params, session_id)
}

pub fn run_procedural<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
    session_id: &str,
) -> Result<SessionResult<T>> {
    run_session(Mode::Procedural, agents, fs, params, session_id)
}

pub fn run_session<T: Scalar>(
    mode: Mode,
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
    session_id: &str,
) -> Result<SessionResult<T>> {
    if let Some(a) = agents
        .iter()
        .find(|a| a.id.as_str() == MEDIATOR || a.id.as_str() == ENGINE)
    {
        return Err(Error::InvalidArgument(format!(
            "agent id `{}` is reserved",
            a.id
        )));
    }
    let outcome = match mode {
        Mode::Bilateral => run_bilateral_game(agents, fs, params)?,
        Mode::Mediated => run_mediated_game(agents, fs, params)?,
        Mode::Procedural => run_procedural_game(agents, fs, params)?,
    };
    let transcript = transcript(mode, session_id, &outcome);
    Ok(SessionResult {
        mode,
        transcript,
        rounds_used: outcome.rounds_used(),
        rounds: outcome.rounds,
        resolution: outcome.resolution,
        converged: outcome.converged,
        termination: outcome.termination,
    })
}

/// Renders a finished game as the message sequence a session produces.
pub fn transcript<T: Scalar>(
    mode: Mode,
    session_id: &str,
    outcome: &GameOutcome<T>,
) -> Vec<SessionMessage> {
    let coordinator = AgentId::from(if mode == Mode::Mediated {
        MEDIATOR
    } else {
        ENGINE
    });
    let mut out = Vec::new();
    for (i, rec) in outcome.rounds.iter().enumerate() {
        let k = rec.round;
        if k == 0 {
            for (agent, x) in &rec.proposals {
                out.push(
                    SessionMessage::new(session_id, 0, agent, MessageKind::InitialProposal)
                        .with_setpoints(x.to_f64_map()),
                );
            }
            continue;
        }
        let previous = &outcome.rounds[i - 1].centroid;
        match mode {
            Mode::Mediated => {
                for (agent, s) in &rec.suggestions {
                    out.push(
                        SessionMessage::new(
                            session_id,
                            k,
                            &coordinator,
                            MessageKind::ConsensusUpdate,
                        )
                        .with_recipient(agent)
                        .with_setpoints(previous.to_f64_map())
                        .with_flexibility(s.to_f64_lossy()),
                    );
                }
            }
            Mode::Procedural => out.push(
                SessionMessage::new(session_id, k, &coordinator, MessageKind::ConsensusUpdate)
                    .with_setpoints(previous.to_f64_map()),
            ),
            Mode::Bilateral => {}
        }
        for (agent, mv) in &rec.moves {
            match mv {
                Move::Opened => {}
                Move::Accepted => out.push(SessionMessage::new(
                    session_id,
                    k,
                    agent,
                    MessageKind::Accept,
                )),
                Move::Countered { flexibility } => out.push(
                    SessionMessage::new(session_id, k, agent, MessageKind::CounterOffer)
                        .with_setpoints(rec.proposals[agent].to_f64_map())
                        .with_flexibility(flexibility.to_f64_lossy().clamp(0.0, 1.0)),
                ),
            }
        }
    }
    out.push(
        SessionMessage::new(
            session_id,
            outcome.rounds_used(),
            &coordinator,
            MessageKind::FinalResolution,
        )
        .with_setpoints(outcome.resolution.to_f64_map())
        .with_justification(outcome.termination.as_str()),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_feasible_set, Scenario};
    use crate::objectives::{cost_objective, resilience_objective};
    use crate::strategy::{cost_schedule, resilience_schedule, ScheduledFlexibility, Stubborn};

    fn pair(s: &Scenario) -> Vec<Agent<f64>> {
        vec![
            Agent::new(
                "cost",
                ScheduledFlexibility::new(cost_objective(s, 19).unwrap(), cost_schedule()),
            ),
            Agent::new(
                "resilience",
                ScheduledFlexibility::new(resilience_objective(s), resilience_schedule()),
            ),
        ]
    }

    #[test]
    fn transcripts_are_well_formed_in_every_mode() {
        let s = Scenario::bundled();
        let fs = build_feasible_set(&s, 19, &s.initial_state()).unwrap();
        for mode in Mode::ALL {
            let r =
                run_session(mode, &mut pair(&s), &fs, &ConsensusParams::default(), "t").unwrap();
            validate_transcript(&r.transcript).unwrap();
            assert!(fs.contains(&r.resolution, 1e-9));
            assert!(r.rounds_used <= 10);
            let last = r.transcript.last().unwrap();
            assert_eq!(last.kind, MessageKind::FinalResolution);
            assert_eq!(last.setpoints.as_ref().unwrap(), &r.resolution.to_f64_map());
            let initial = r
                .transcript
                .iter()
                .filter(|m| m.kind == MessageKind::InitialProposal)
                .count();
            assert_eq!(initial, 2);
        }
    }

    #[test]
    fn reserved_ids_are_refused() {
        let s = Scenario::bundled();
        let fs = build_feasible_set(&s, 19, &s.initial_state()).unwrap();
        let mut agents = vec![
            Agent::new(MEDIATOR, Stubborn::new(resilience_objective::<f64>(&s))),
            Agent::new("b", Stubborn::new(resilience_objective(&s))),
        ];
        assert!(run_mediated(&mut agents, &fs, &ConsensusParams::default(), "t").is_err());
    }
}
