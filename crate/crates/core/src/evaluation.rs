//! Normalized sub-optimality, the success metric, the Pareto front and the
//! fairness and consistency statistics over trial batches.

use std::collections::BTreeMap;

use crate::domain::{FeasibleBox, Setpoints};
use crate::objectives::{objective_bounds, LinearObjective};
use crate::strategy::{AgentId, Mode};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome<T> {
    pub trial: usize,
    pub mode: Mode,
    pub resolution: Setpoints<T>,
    /// Normalized objective per agent, 0 best and 1 worst.
    pub normalized: BTreeMap<AgentId, T>,
    pub rounds_used: u32,
    pub converged: bool,
}

/// `(J(x) - min J) / (max J - min J)` over the box, clamped to `[0, 1]`.
/// A constant objective scores 0.
pub fn normalize_objective<T: Scalar>(
    obj: &LinearObjective<T>,
    fs: &FeasibleBox<T>,
    x: &Setpoints<T>,
) -> Result<T> {
    let (lo, hi) = objective_bounds(obj, fs)?;
    let value = obj.evaluate(x)?;
    let span = hi - lo;
    if span <= T::zero() {
        return Ok(T::zero());
    }
    Ok(((value - lo) / span).max(T::zero()).min(T::one()))
}

/// Normalized objective of every agent at `x`.
pub fn normalize_all<T: Scalar>(
    objectives: &BTreeMap<AgentId, LinearObjective<T>>,
    fs: &FeasibleBox<T>,
    x: &Setpoints<T>,
) -> Result<BTreeMap<AgentId, T>> {
    objectives
        .iter()
        .map(|(a, obj)| Ok((a.clone(), normalize_objective(obj, fs, x)?)))
        .collect()
}

/// Mean of `1 - J` over the trials for one agent.
pub fn success_metric<T: Scalar>(outcomes: &[TrialOutcome<T>], agent: &AgentId) -> Result<T> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument(
            "success metric of an empty trial set".into(),
        ));
    }
    let mut total = T::zero();
    for o in outcomes {
        total += T::one() - agent_score(o, agent)?;
    }
    Ok(total / T::from_usize(outcomes.len()).unwrap_or_else(T::one))
}

fn agent_score<T: Scalar>(o: &TrialOutcome<T>, agent: &AgentId) -> Result<T> {
    o.normalized.get(agent).copied().ok_or_else(|| {
        Error::InvalidArgument(format!("trial {} has no score for `{agent}`", o.trial))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint<T> {
    pub a: T,
    pub b: T,
    pub setpoints: Setpoints<T>,
}

/// Weighted-sum scalarization of two objectives over the box.
///
/// Besides the uniform grid of `n_weights` weights, the weights at which some
/// blended coefficient vanishes are solved too, with every bound choice for the
/// zero-coefficient devices. Without them, box corners lying in the middle of a
/// front segment would be missed. Dominated points are dropped and the result
/// is sorted by the first objective.
pub fn pareto_front<T: Scalar>(
    a: &LinearObjective<T>,
    b: &LinearObjective<T>,
    fs: &FeasibleBox<T>,
    n_weights: usize,
) -> Result<Vec<ParetoPoint<T>>> {
    if n_weights < 2 {
        return Err(Error::InvalidArgument(
            "n_weights must be at least 2".into(),
        ));
    }
    a.gradient.check_layout(&b.gradient)?;
    fs.lower().check_layout(&a.gradient)?;
    let last = T::from_usize(n_weights - 1).unwrap_or_else(T::one);
    let mut weights: Vec<T> = (0..n_weights)
        .map(|i| T::from_usize(i).unwrap_or_else(T::zero) / last)
        .collect();
    for (ga, gb) in a.gradient.values().iter().zip(b.gradient.values()) {
        // w*ga + (1-w)*gb = 0
        let denom = *gb - *ga;
        if denom != T::zero() {
            let w = *gb / denom;
            if w > T::zero() && w < T::one() {
                weights.push(w);
            }
        }
    }

    let mut candidates: Vec<Setpoints<T>> = Vec::new();
    // Coefficients that cancel only up to rounding count as zero.
    let scale = a.gradient.zip_map(&b.gradient, |u, v| {
        (u.abs() + v.abs()) * T::epsilon() * T::of(64.0)
    });
    for w in weights {
        let mut blended = a.blend(b, w)?;
        blended.gradient =
            blended
                .gradient
                .zip_map(&scale, |g, tol| if g.abs() <= tol { T::zero() } else { g });
        for x in optimal_vertices(&blended, fs) {
            if !candidates.contains(&x) {
                candidates.push(x);
            }
        }
    }

    let mut points = Vec::with_capacity(candidates.len());
    for x in candidates {
        points.push(ParetoPoint {
            a: normalize_objective(a, fs, &x)?,
            b: normalize_objective(b, fs, &x)?,
            setpoints: x,
        });
    }
    let tol = T::of(1e-12);
    let dominated = |p: &ParetoPoint<T>, q: &ParetoPoint<T>| {
        q.a <= p.a + tol && q.b <= p.b + tol && (q.a < p.a - tol || q.b < p.b - tol)
    };
    let mut front: Vec<_> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominated(p, q)))
        .cloned()
        .collect();
    front.sort_by(|p, q| {
        p.a.partial_cmp(&q.a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(p.b.partial_cmp(&q.b).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| lexical(&p.setpoints, &q.setpoints))
    });
    Ok(front)
}

fn lexical<T: Scalar>(x: &Setpoints<T>, y: &Setpoints<T>) -> std::cmp::Ordering {
    for (u, v) in x.values().iter().zip(y.values()) {
        match u.partial_cmp(v) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

// Every box corner minimizing a linear objective: the sign of each coefficient
// fixes its device, zero coefficients leave both bounds.
fn optimal_vertices<T: Scalar>(obj: &LinearObjective<T>, fs: &FeasibleBox<T>) -> Vec<Setpoints<T>> {
    let mut out = vec![fs.lower().clone()];
    for (i, g) in obj.gradient.values().iter().enumerate() {
        let (lo, hi) = fs.bounds(i);
        let choices: Vec<T> = if *g > T::zero() {
            vec![lo]
        } else if *g < T::zero() {
            vec![hi]
        } else if lo == hi {
            vec![lo]
        } else {
            vec![lo, hi]
        };
        out = out
            .into_iter()
            .flat_map(|x| {
                choices
                    .iter()
                    .map(move |c| x.map(|j, v| if j == i { *c } else { v }))
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

/// Distance from `(J_a, J_b)` to the line `J_a = J_b`.
pub fn fairness<T: Scalar>(outcome: &TrialOutcome<T>, a: &AgentId, b: &AgentId) -> Result<T> {
    let ja = agent_score(outcome, a)?;
    let jb = agent_score(outcome, b)?;
    Ok((ja - jb).abs() / T::of(2.0).sqrt())
}

/// Sample variance of each agent's normalized objective across trials.
/// A single trial has variance 0.
pub fn consistency<T: Scalar>(outcomes: &[TrialOutcome<T>]) -> Result<BTreeMap<AgentId, T>> {
    let first = outcomes
        .first()
        .ok_or_else(|| Error::InvalidArgument("consistency of an empty trial set".into()))?;
    let n = outcomes.len();
    let mut out = BTreeMap::new();
    for agent in first.normalized.keys() {
        let values = outcomes
            .iter()
            .map(|o| agent_score(o, agent))
            .collect::<Result<Vec<_>>>()?;
        if n < 2 {
            out.insert(agent.clone(), T::zero());
            continue;
        }
        let count = T::from_usize(n).unwrap_or_else(T::one);
        let mean = values.iter().copied().sum::<T>() / count;
        let ss: T = values.iter().map(|v| (*v - mean) * (*v - mean)).sum();
        out.insert(agent.clone(), ss / (count - T::one()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_feasible_set, Scenario};
    use crate::objectives::{cost_objective, optimal_setpoints, resilience_objective};
    use approx::assert_abs_diff_eq;

    fn hour19() -> (Scenario, FeasibleBox<f64>) {
        let s = Scenario::bundled();
        let fs = build_feasible_set(&s, 19, &s.initial_state()).unwrap();
        (s, fs)
    }

    fn outcome(trial: usize, a: f64, b: f64, fs: &FeasibleBox<f64>) -> TrialOutcome<f64> {
        TrialOutcome {
            trial,
            mode: Mode::Procedural,
            resolution: fs.center(),
            normalized: [(AgentId::from("a"), a), (AgentId::from("b"), b)]
                .into_iter()
                .collect(),
            rounds_used: 1,
            converged: true,
        }
    }

    #[test]
    fn normalization_examples() {
        let (s, fs) = hour19();
        let cost = cost_objective(&s, 19).unwrap();
        let res = resilience_objective(&s);
        let best = optimal_setpoints(&cost, &fs).unwrap();
        assert_eq!(normalize_objective(&cost, &fs, &best).unwrap(), 0.0);
        let worst = optimal_setpoints(&cost.scaled(-1.0), &fs).unwrap();
        assert_eq!(normalize_objective(&cost, &fs, &worst).unwrap(), 1.0);
        let c = Setpoints::new(fs.devices().clone(), vec![0.0, 0.0, 0.15, 0.15]).unwrap();
        assert_abs_diff_eq!(
            normalize_objective(&cost, &fs, &c).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normalize_objective(&res, &fs, &c).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_objective_scores_zero() {
        let (_, fs) = hour19();
        let flat = LinearObjective::new("flat", Setpoints::zeros(fs.devices().clone()), 3.0);
        assert_eq!(
            normalize_objective(&flat, &fs, &fs.upper().clone()).unwrap(),
            0.0
        );
    }

    #[test]
    fn success_examples() {
        let (_, fs) = hour19();
        let a = AgentId::from("a");
        let trials = [outcome(0, 0.2, 0.0, &fs), outcome(1, 0.6, 0.0, &fs)];
        assert_abs_diff_eq!(success_metric(&trials, &a).unwrap(), 0.6, epsilon = 1e-12);
        assert_eq!(
            success_metric(&[outcome(0, 0.0, 0.0, &fs)], &a).unwrap(),
            1.0
        );
        assert!(success_metric::<f64>(&[], &a).is_err());
        assert!(success_metric(&trials, &AgentId::from("zed")).is_err());
    }

    #[test]
    fn fairness_and_consistency_examples() {
        let (_, fs) = hour19();
        let (a, b) = (AgentId::from("a"), AgentId::from("b"));
        assert_eq!(fairness(&outcome(0, 0.3, 0.3, &fs), &a, &b).unwrap(), 0.0);
        assert_abs_diff_eq!(
            fairness(&outcome(0, 0.2, 0.6, &fs), &a, &b).unwrap(),
            0.28284,
            epsilon = 1e-5
        );
        let same = [outcome(0, 0.4, 0.1, &fs), outcome(1, 0.4, 0.1, &fs)];
        assert!(consistency(&same).unwrap().values().all(|v| *v == 0.0));
        let spread = [outcome(0, 0.2, 0.0, &fs), outcome(1, 0.6, 0.0, &fs)];
        assert_abs_diff_eq!(consistency(&spread).unwrap()[&a], 0.08, epsilon = 1e-12);
    }

    #[test]
    fn front_endpoints_are_the_exclusive_optima() {
        let (s, fs) = hour19();
        let cost = cost_objective(&s, 19).unwrap();
        let res = resilience_objective(&s);
        let front = pareto_front(&cost, &res, &fs, 101).unwrap();
        assert_eq!(
            front.first().unwrap().setpoints,
            optimal_setpoints(&cost, &fs).unwrap()
        );
        assert_eq!(
            front.last().unwrap().setpoints,
            optimal_setpoints(&res, &fs).unwrap()
        );
        for p in &front {
            assert!(!front.iter().any(|q| q.a < p.a - 1e-12 && q.b < p.b - 1e-12));
        }
        assert!(pareto_front(&cost, &res, &fs, 1).is_err());
    }
}
