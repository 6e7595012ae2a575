use std::collections::BTreeMap;

use crate::consensus::{
    check_agents, checked_proposal, finish, open, spread, ConsensusParams, GameOutcome, Move,
    RoundRecord, Termination,
};
use crate::domain::{FeasibleBox, Setpoints};
use crate::strategy::{Agent, AgentId, Mode, Reply, Turn};
use crate::{Error, Result, Scalar};

/// Two-party offer exchange.
///
/// After the openings, both agents move simultaneously each round. Each sees
/// the counterpart's latest offer and the midpoint of the two latest offers.
/// If both accept, the midpoint is the resolution; if one accepts, the offer
/// it accepted is. Otherwise the new offers stand and the session agrees once
/// they lie within `eps_consensus`. At the round limit the midpoint of the
/// final offers is returned unconverged.
pub fn run_bilateral_game<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
) -> Result<GameOutcome<T>> {
    check_agents(agents, 2)?;
    if agents.len() != 2 {
        return Err(Error::InvalidArgument(
            "bilateral sessions take exactly two agents".into(),
        ));
    }
    params.validate()?;
    let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
    let mut offers = open(agents, fs, Mode::Bilateral)?;
    let mut rounds = vec![record(0, &offers, openings(&ids))?];

    for k in 1..=params.max_rounds {
        let mut replies = Vec::with_capacity(2);
        for (i, agent) in agents.iter_mut().enumerate() {
            let own = &offers[&ids[i]];
            let other = &offers[&ids[1 - i]];
            let reference = own.midpoint(other)?;
            let turn = Turn {
                mode: Mode::Bilateral,
                round: k,
                feasible: fs,
                reference: &reference,
                offer: Some(other),
                previous: own,
                suggested_flexibility: None,
            };
            let reply = agent
                .strategy
                .respond(&turn)
                .map_err(|e| Error::agent(&agent.id, e))?;
            replies.push(match reply {
                Reply::Accept => None,
                Reply::Counter {
                    setpoints,
                    flexibility,
                } => Some((checked_proposal(&agent.id, fs, setpoints)?, flexibility)),
            });
        }

        let moves: BTreeMap<_, _> = ids
            .iter()
            .zip(&replies)
            .map(|(id, r)| {
                let mv = match r {
                    None => Move::Accepted,
                    Some((_, flexibility)) => Move::Countered {
                        flexibility: *flexibility,
                    },
                };
                (id.clone(), mv)
            })
            .collect();

        let accepted: Vec<usize> = (0..2).filter(|i| replies[*i].is_none()).collect();
        if !accepted.is_empty() {
            // An accepting agent takes over the offer it accepted.
            let standing = offers.clone();
            for i in 0..2 {
                let taken = if accepted.contains(&i) {
                    standing[&ids[1 - i]].clone()
                } else {
                    standing[&ids[i]].clone()
                };
                offers.insert(ids[i].clone(), taken);
            }
            let rec = record(k, &offers, moves)?;
            let resolution = rec.centroid.clone();
            rounds.push(rec);
            return Ok(finish(rounds, resolution, Termination::Accepted));
        }

        for (id, r) in ids.iter().zip(replies) {
            if let Some((x, _)) = r {
                offers.insert(id.clone(), x);
            }
        }
        let rec = record(k, &offers, moves)?;
        let resolution = rec.centroid.clone();
        rounds.push(rec);
        if spread(&offers)? <= params.eps_consensus {
            return Ok(finish(rounds, resolution, Termination::Consensus));
        }
    }
    let resolution = rounds.last().expect("rounds recorded").centroid.clone();
    Ok(finish(rounds, resolution, Termination::RoundLimit))
}

fn openings<T>(ids: &[AgentId]) -> BTreeMap<AgentId, Move<T>> {
    ids.iter().map(|id| (id.clone(), Move::Opened)).collect()
}

// Bilateral rounds have no weighting; the record carries unit weights and the
// midpoint of the two standing offers.
fn record<T: Scalar>(
    round: u32,
    offers: &BTreeMap<AgentId, Setpoints<T>>,
    moves: BTreeMap<AgentId, Move<T>>,
) -> Result<RoundRecord<T>> {
    let xs: Vec<_> = offers.values().collect();
    Ok(RoundRecord {
        round,
        proposals: offers.clone(),
        weights: offers.keys().map(|a| (a.clone(), T::one())).collect(),
        centroid: xs[0].midpoint(xs[1])?,
        moves,
        suggestions: BTreeMap::new(),
    })
}
