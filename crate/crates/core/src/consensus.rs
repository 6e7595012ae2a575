//! Weighted-centroid deconfliction game.
//!
//! Each round every agent submits a proposal, the engine weights each agent
//! by how far it moved toward the previous centroid and averages the
//! proposals. Procedural and mediated sessions share this loop; they differ
//! only in what an agent is told each round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{distance, FeasibleBox, Setpoints};
use crate::error::AgentError;
use crate::strategy::{Agent, AgentId, Mode, Opening, Reply, Turn};
use crate::{Error, Result, Scalar};

const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsensusParams<T> {
    pub max_rounds: u32,
    /// Proposals closer than this (pairwise, MW) count as agreement.
    pub eps_consensus: T,
    /// A proposal closer than this to the previous centroid gets infinite weight.
    pub eps_weight: T,
}

impl<T: Scalar> Default for ConsensusParams<T> {
    fn default() -> Self {
        ConsensusParams {
            max_rounds: 10,
            eps_consensus: T::of(1e-3),
            eps_weight: T::of(1e-6),
        }
    }
}

impl<T: Scalar> ConsensusParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.eps_consensus.is_nan()
            || self.eps_consensus < T::zero()
            || self.eps_weight.is_nan()
            || self.eps_weight <= T::zero()
        {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// What an agent did in a round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Move<T> {
    Opened,
    Accepted,
    Countered { flexibility: T },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord<T> {
    pub round: u32,
    pub proposals: BTreeMap<AgentId, Setpoints<T>>,
    /// May contain `+inf`.
    pub weights: BTreeMap<AgentId, T>,
    pub centroid: Setpoints<T>,
    pub moves: BTreeMap<AgentId, Move<T>>,
    /// Flexibility the mediator suggested to each agent before this round.
    pub suggestions: BTreeMap<AgentId, T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Consensus,
    ProposalHitCentroid,
    RoundLimit,
    Accepted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Consensus => "consensus",
            Termination::ProposalHitCentroid => "proposal_hit_centroid",
            Termination::RoundLimit => "round_limit",
            Termination::Accepted => "accepted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameOutcome<T> {
    pub rounds: Vec<RoundRecord<T>>,
    pub resolution: Setpoints<T>,
    pub converged: bool,
    pub termination: Termination,
}

impl<T> GameOutcome<T> {
    /// Number of rounds after the opening round.
    pub fn rounds_used(&self) -> u32 {
        self.rounds.last().map_or(0, |r| r.round)
    }
}

/// Weighted average of the proposals. An infinite weight takes over: the
/// result is the mean of all infinitely weighted proposals.
pub fn weighted_centroid<T: Scalar>(
    proposals: &BTreeMap<AgentId, Setpoints<T>>,
    weights: &BTreeMap<AgentId, T>,
) -> Result<Setpoints<T>> {
    if proposals.len() != weights.len() || proposals.keys().any(|k| !weights.contains_key(k)) {
        return Err(Error::KeyMismatch(
            "proposal and weight agents differ".into(),
        ));
    }
    let first = proposals
        .values()
        .next()
        .ok_or_else(|| Error::InvalidArgument("no proposals".into()))?;
    for x in proposals.values() {
        first.check_layout(x)?;
    }
    if let Some((agent, w)) = weights.iter().find(|(_, w)| w.is_nan() || **w < T::zero()) {
        return Err(Error::InvalidArgument(format!("weight {w} for `{agent}`")));
    }
    let infinite: Vec<_> = weights
        .iter()
        .filter(|(_, w)| w.is_infinite())
        .map(|(a, _)| &proposals[a])
        .collect();
    if !infinite.is_empty() {
        let n = T::from_usize(infinite.len()).unwrap_or_else(T::one);
        let mut sum = Setpoints::zeros(first.devices().clone());
        for x in infinite {
            sum = sum.add_scaled(T::one(), x)?;
        }
        return Ok(sum.scaled(T::one() / n));
    }
    let total: T = weights.values().copied().sum();
    if total <= T::zero() {
        return Err(Error::ZeroWeights);
    }
    let mut sum = Setpoints::zeros(first.devices().clone());
    for (agent, x) in proposals {
        sum = sum.add_scaled(weights[agent], x)?;
    }
    Ok(sum.scaled(T::one() / total))
}

/// Ratio of an agent's opening distance to its current distance from the
/// previous centroid; `+inf` once the agent is within `eps_weight` of it.
pub fn flexibility_weight<T: Scalar>(
    initial: &Setpoints<T>,
    current: &Setpoints<T>,
    previous_centroid: &Setpoints<T>,
    eps_weight: T,
) -> Result<T> {
    let now = distance(current, previous_centroid)?;
    let then = distance(initial, previous_centroid)?;
    if now < eps_weight {
        Ok(T::infinity())
    } else {
        Ok(then / now)
    }
}

/// Largest pairwise distance among the proposals.
pub fn spread<T: Scalar>(proposals: &BTreeMap<AgentId, Setpoints<T>>) -> Result<T> {
    let xs: Vec<_> = proposals.values().collect();
    let mut worst = T::zero();
    for (i, a) in xs.iter().enumerate() {
        for b in &xs[i + 1..] {
            worst = worst.max(distance(a, b)?);
        }
    }
    Ok(worst)
}

/// Procedural game: agents only see the previous centroid.
pub fn run_procedural_game<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
) -> Result<GameOutcome<T>> {
    run_weighted_game(agents, fs, params, Mode::Procedural)
}

/// Mediated game: the centroid is also offered for acceptance and each agent
/// receives a suggested flexibility `1 - w_i / sum(w)` from the previous round.
pub fn run_mediated_game<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
) -> Result<GameOutcome<T>> {
    run_weighted_game(agents, fs, params, Mode::Mediated)
}

pub(crate) fn check_agents<T>(agents: &[Agent<T>], min: usize) -> Result<()> {
    if agents.len() < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} agents, got {}",
            agents.len()
        )));
    }
    let ids: BTreeSet<_> = agents.iter().map(|a| &a.id).collect();
    if ids.len() != agents.len() {
        return Err(Error::InvalidArgument("agent ids must be unique".into()));
    }
    Ok(())
}

pub(crate) fn checked_proposal<T: Scalar>(
    agent: &AgentId,
    fs: &FeasibleBox<T>,
    x: Setpoints<T>,
) -> Result<Setpoints<T>> {
    fs.check(&x, T::of(FEASIBILITY_TOL))
        .map_err(|e| Error::agent(agent, AgentError::Infeasible(Box::new(e))))?;
    fs.project(&x)
}

pub(crate) fn open<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    mode: Mode,
) -> Result<BTreeMap<AgentId, Setpoints<T>>> {
    let opening = Opening { mode, feasible: fs };
    let mut proposals = BTreeMap::new();
    for agent in agents.iter_mut() {
        let x = agent
            .strategy
            .initial_proposal(&opening)
            .map_err(|e| Error::agent(&agent.id, e))?;
        proposals.insert(agent.id.clone(), checked_proposal(&agent.id, fs, x)?);
    }
    Ok(proposals)
}

fn run_weighted_game<T: Scalar>(
    agents: &mut [Agent<T>],
    fs: &FeasibleBox<T>,
    params: &ConsensusParams<T>,
    mode: Mode,
) -> Result<GameOutcome<T>> {
    check_agents(agents, 2)?;
    params.validate()?;
    let initial = open(agents, fs, mode)?;
    let ones: BTreeMap<_, _> = initial.keys().map(|a| (a.clone(), T::one())).collect();
    let mut centroid = weighted_centroid(&initial, &ones)?;
    let mut rounds = vec![RoundRecord {
        round: 0,
        proposals: initial.clone(),
        weights: ones,
        centroid: centroid.clone(),
        moves: initial.keys().map(|a| (a.clone(), Move::Opened)).collect(),
        suggestions: BTreeMap::new(),
    }];
    if spread(&initial)? <= params.eps_consensus {
        return Ok(finish(rounds, centroid, Termination::Consensus));
    }

    for k in 1..=params.max_rounds {
        let prev = rounds.last().expect("round 0 recorded");
        let suggestions = match mode {
            Mode::Mediated => suggested_flexibility(&prev.weights),
            _ => BTreeMap::new(),
        };
        let mut proposals = BTreeMap::new();
        let mut moves = BTreeMap::new();
        for agent in agents.iter_mut() {
            let previous = &prev.proposals[&agent.id];
            let turn = Turn {
                mode,
                round: k,
                feasible: fs,
                reference: &centroid,
                offer: (mode == Mode::Mediated).then_some(&centroid),
                previous,
                suggested_flexibility: suggestions.get(&agent.id).copied(),
            };
            let reply = agent
                .strategy
                .respond(&turn)
                .map_err(|e| Error::agent(&agent.id, e))?;
            let (x, mv) = match reply {
                // Without an offer on the table, accepting means adopting the
                // centroid as the proposal.
                Reply::Accept if mode == Mode::Procedural => (centroid.clone(), Move::Accepted),
                Reply::Accept => (previous.clone(), Move::Accepted),
                Reply::Counter {
                    setpoints,
                    flexibility,
                } => (
                    checked_proposal(&agent.id, fs, setpoints)?,
                    Move::Countered { flexibility },
                ),
            };
            proposals.insert(agent.id.clone(), x);
            moves.insert(agent.id.clone(), mv);
        }

        if mode == Mode::Mediated && moves.values().all(|m| *m == Move::Accepted) {
            let proposals: BTreeMap<_, _> = proposals
                .keys()
                .map(|a| (a.clone(), centroid.clone()))
                .collect();
            let weights = proposals.keys().map(|a| (a.clone(), T::one())).collect();
            rounds.push(RoundRecord {
                round: k,
                proposals,
                weights,
                centroid: centroid.clone(),
                moves,
                suggestions,
            });
            return Ok(finish(rounds, centroid, Termination::Accepted));
        }

        let mut weights = BTreeMap::new();
        for (a, x) in &proposals {
            let w = flexibility_weight(&initial[a], x, &centroid, params.eps_weight)?;
            weights.insert(a.clone(), w);
        }
        let next = weighted_centroid(&proposals, &weights)?;
        let hit = weights.values().any(|w| w.is_infinite());
        let agreed = spread(&proposals)? <= params.eps_consensus;
        rounds.push(RoundRecord {
            round: k,
            proposals,
            weights,
            centroid: next.clone(),
            moves,
            suggestions,
        });
        centroid = next;
        if hit {
            return Ok(finish(rounds, centroid, Termination::ProposalHitCentroid));
        }
        if agreed {
            return Ok(finish(rounds, centroid, Termination::Consensus));
        }
    }
    Ok(finish(rounds, centroid, Termination::RoundLimit))
}

fn suggested_flexibility<T: Scalar>(weights: &BTreeMap<AgentId, T>) -> BTreeMap<AgentId, T> {
    let total: T = weights.values().copied().sum();
    weights
        .iter()
        .map(|(a, w)| {
            let s = if total > T::zero() && total.is_finite() {
                T::one() - *w / total
            } else {
                T::of(0.5)
            };
            (a.clone(), s.max(T::zero()).min(T::one()))
        })
        .collect()
}

pub(crate) fn finish<T>(
    rounds: Vec<RoundRecord<T>>,
    resolution: Setpoints<T>,
    termination: Termination,
) -> GameOutcome<T> {
    GameOutcome {
        rounds,
        resolution,
        converged: termination != Termination::RoundLimit,
        termination,
    }
}
