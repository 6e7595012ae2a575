//! Independent oracles and property runners shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deconflict::compromise::{balanced_compromise, CompromiseRequest};
use deconflict::consensus::{flexibility_weight, weighted_centroid, ConsensusParams};
use deconflict::domain::{
    aggregate, build_feasible_set, distance, DeviceId, DeviceKind, DeviceSet, FeasibleBox,
    Scenario, Setpoints, SocState,
};
use deconflict::evaluation::normalize_objective;
use deconflict::objectives::{objective_bounds, optimal_setpoints, soc_step, LinearObjective};
use deconflict::protocol::wire::{AgentReply, AgentRequest, Op, WireDevice, WIRE_VERSION};
use deconflict::protocol::{run_procedural, MessageKind, SessionMessage};
use deconflict::strategy::{Agent, AgentId, FlexibilitySchedule, Mode, ScheduledFlexibility};

pub const GRID: f64 = 1e-3;

pub fn hour19() -> (Scenario, FeasibleBox<f64>) {
    let s = Scenario::bundled();
    let fs = build_feasible_set(&s, 19, &s.initial_state()).unwrap();
    (s, fs)
}

pub fn layout() -> Arc<DeviceSet> {
    hour19().1.devices().clone()
}

fn axis(lo: f64, hi: f64, center: f64, r: f64) -> Vec<f64> {
    let from = lo.max(center - r);
    let to = hi.min(center + r);
    let mut out = Vec::new();
    if from > to {
        return out;
    }
    let mut k = ((from - lo) / GRID).ceil() as i64;
    loop {
        let v = lo + k as f64 * GRID;
        if v > to {
            break;
        }
        out.push(v);
        k += 1;
    }
    for b in [lo, hi] {
        if b >= from && b <= to && !out.contains(&b) {
            out.push(b);
        }
    }
    out
}

/// Exact minimum of `g . p` over the disk `|p - c|^2 <= rho2` intersected
/// with a rectangle, by enumerating the extreme points of the intersection:
/// the tangent point, rectangle corners and circle/edge crossings.
fn disk_rect_min(g: [f64; 2], c: [f64; 2], rho2: f64, lo: [f64; 2], hi: [f64; 2]) -> Option<f64> {
    let rho = rho2.max(0.0).sqrt();
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(13);
    let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
    if gn > 0.0 {
        pts.push([c[0] - rho * g[0] / gn, c[1] - rho * g[1] / gn]);
    } else {
        pts.push(c);
    }
    for x in [lo[0], hi[0]] {
        for y in [lo[1], hi[1]] {
            pts.push([x, y]);
        }
    }
    for axis in 0..2 {
        let other = 1 - axis;
        for edge in [lo[axis], hi[axis]] {
            let d = edge - c[axis];
            let rest = rho2 - d * d;
            if rest >= 0.0 {
                let h = rest.sqrt();
                for s in [-h, h] {
                    let mut p = [0.0; 2];
                    p[axis] = edge;
                    p[other] = c[other] + s;
                    pts.push(p);
                }
            }
        }
    }
    let tol = 1e-12;
    pts.into_iter()
        .filter(|p| {
            (0..2).all(|i| p[i] >= lo[i] - tol && p[i] <= hi[i] + tol)
                && (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= rho2 + tol
        })
        .map(|p| g[0] * p[0] + g[1] * p[1])
        .min_by(f64::total_cmp)
}

/// Minimum of `g . x` over `ball(c, r) ∩ box` by exhaustive search: two
/// coordinates run over a 1e-3 MW grid (plus the box bounds), the other two
/// are solved exactly. Every pairing of grid and exact coordinates is tried.
pub fn grid_oracle(g: &[f64; 4], lo: &[f64; 4], hi: &[f64; 4], c: &[f64; 4], r: f64) -> f64 {
    let r2 = r * r;
    let mut best = f64::INFINITY;
    for j in 0..4 {
        for k in (j + 1)..4 {
            let grid: Vec<usize> = (0..4).filter(|i| *i != j && *i != k).collect();
            let (a, b) = (grid[0], grid[1]);
            let xa: Vec<(f64, f64)> = axis(lo[a], hi[a], c[a], r)
                .into_iter()
                .map(|v| (v, (v - c[a]).powi(2)))
                .collect();
            let xb: Vec<(f64, f64)> = axis(lo[b], hi[b], c[b], r)
                .into_iter()
                .map(|v| (v, (v - c[b]).powi(2)))
                .collect();
            for &(va, sa) in &xa {
                for &(vb, sb) in &xb {
                    let rho2 = r2 - sa - sb;
                    if rho2 < 0.0 {
                        continue;
                    }
                    let inner = disk_rect_min(
                        [g[j], g[k]],
                        [c[j], c[k]],
                        rho2,
                        [lo[j], lo[k]],
                        [hi[j], hi[k]],
                    );
                    if let Some(v) = inner {
                        best = best.min(g[a] * va + g[b] * vb + v);
                    }
                }
            }
        }
    }
    best
}

pub struct OracleCase {
    pub objective: LinearObjective<f64>,
    pub feasible: FeasibleBox<f64>,
    pub consensus: Setpoints<f64>,
    pub desired: Setpoints<f64>,
    pub radius: f64,
}

/// Random 4-D instance: box, gradient, consensus inside the box and a radius
/// between 0.05 MW and the consensus-to-optimum distance.
pub fn oracle_case(rng: &mut ChaCha8Rng) -> OracleCase {
    let d = layout();
    loop {
        let lo: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.2..=0.0)).collect();
        let hi: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..=0.3)).collect();
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let c: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| rng.gen_range(*a..=*b))
            .collect();
        let feasible = FeasibleBox::new(
            Setpoints::new(d.clone(), lo).unwrap(),
            Setpoints::new(d.clone(), hi).unwrap(),
        )
        .unwrap();
        let objective = LinearObjective::new("random", Setpoints::new(d.clone(), g).unwrap(), 0.0);
        let consensus = Setpoints::new(d.clone(), c).unwrap();
        let desired = optimal_setpoints(&objective, &feasible).unwrap();
        let dist = distance(&desired, &consensus).unwrap();
        if dist < 0.1 {
            continue;
        }
        let radius = rng.gen_range(0.05..dist);
        return OracleCase {
            objective,
            feasible,
            consensus,
            desired,
            radius,
        };
    }
}

fn arr(x: &Setpoints<f64>) -> [f64; 4] {
    [x.values()[0], x.values()[1], x.values()[2], x.values()[3]]
}

/// Largest |solver - oracle| objective gap over `n` seeded instances, and
/// whether every solver result satisfied both constraints.
pub fn compromise_vs_oracle(n: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut feasible = true;
    for _ in 0..n {
        let case = oracle_case(&mut rng);
        let req = CompromiseRequest::new(
            case.objective.clone(),
            case.feasible.clone(),
            &case.consensus,
            &case.desired,
            case.radius,
        )
        .unwrap();
        let x = balanced_compromise(&req).unwrap();
        feasible &= case.feasible.contains(&x, 1e-9)
            && distance(&x, &case.consensus).unwrap() <= case.radius + 1e-9;
        let solver = case.objective.evaluate(&x).unwrap();
        let oracle = grid_oracle(
            &arr(&case.objective.gradient),
            &arr(case.feasible.lower()),
            &arr(case.feasible.upper()),
            &arr(&case.consensus),
            case.radius,
        );
        worst = worst.max((solver - oracle).abs());
    }
    (worst, feasible)
}

/// Normalized (a, b) pairs of the non-dominated box corners, by brute force.
pub fn corner_front(
    a: &LinearObjective<f64>,
    b: &LinearObjective<f64>,
    fs: &FeasibleBox<f64>,
) -> Vec<(f64, f64, Vec<f64>)> {
    let (alo, ahi) = objective_bounds(a, fs).unwrap();
    let (blo, bhi) = objective_bounds(b, fs).unwrap();
    let n = fs.devices().len();
    let mut corners = Vec::new();
    for mask in 0..(1u32 << n) {
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let (lo, hi) = fs.bounds(i);
                if mask & (1 << i) != 0 {
                    hi
                } else {
                    lo
                }
            })
            .collect();
        let x = Setpoints::new(fs.devices().clone(), values.clone()).unwrap();
        let ja = (a.evaluate(&x).unwrap() - alo) / (ahi - alo);
        let jb = (b.evaluate(&x).unwrap() - blo) / (bhi - blo);
        corners.push((ja, jb, values));
    }
    corners
        .iter()
        .filter(|p| {
            !corners.iter().any(|q| {
                q.0 <= p.0 + 1e-12 && q.1 <= p.1 + 1e-12 && (q.0 < p.0 - 1e-12 || q.1 < p.1 - 1e-12)
            })
        })
        .cloned()
        .collect()
}

pub fn round9(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// Objective pairs and setpoints, rounded to 1e-9, as a comparable set.
pub fn point_set<'a>(
    points: impl IntoIterator<Item = (f64, f64, &'a [f64])>,
) -> BTreeSet<(i64, i64, Vec<i64>)> {
    points
        .into_iter()
        .map(|(a, b, x)| {
            (
                round9(a),
                round9(b),
                x.iter().copied().map(round9).collect(),
            )
        })
        .collect()
}

fn run_props<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn vec4(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, 4)
}

fn sp(values: Vec<f64>) -> Setpoints<f64> {
    Setpoints::new(layout(), values).unwrap()
}

/// Moving a proposal closer to the previous centroid strictly raises its weight.
pub fn prop_weight_monotonicity(cases: u32) -> Result<(), String> {
    run_props(
        cases,
        (
            vec4(-1.0, 1.0),
            vec4(-1.0, 1.0),
            vec4(-1.0, 1.0),
            0.05f64..0.95,
        ),
        |(x0, c, dir, shrink)| {
            let (x0, c, dir) = (sp(x0), sp(c), sp(dir));
            prop_assume!(dir.norm() > 1e-3 && distance(&x0, &c).unwrap() > 1e-3);
            let far = c.add_scaled(1.0, &dir).unwrap();
            let near = c.add_scaled(shrink, &dir).unwrap();
            prop_assume!(distance(&near, &c).unwrap() > 1e-5);
            let w_far = flexibility_weight(&x0, &far, &c, 1e-6).unwrap();
            let w_near = flexibility_weight(&x0, &near, &c, 1e-6).unwrap();
            prop_assert!(w_near > w_far, "{w_near} <= {w_far}");
            Ok(())
        },
    )
}

/// Every centroid lies componentwise between the smallest and largest proposal.
pub fn prop_centroid_in_hull(cases: u32) -> Result<(), String> {
    run_props(
        cases,
        proptest::collection::vec(
            (
                vec4(-1.0, 1.0),
                prop_oneof![9 => 0.0f64..10.0, 1 => Just(f64::INFINITY)],
            ),
            2..6,
        ),
        |entries| {
            let mut proposals = BTreeMap::new();
            let mut weights = BTreeMap::new();
            for (i, (x, w)) in entries.into_iter().enumerate() {
                proposals.insert(AgentId::new(format!("a{i}")), sp(x));
                weights.insert(AgentId::new(format!("a{i}")), w);
            }
            prop_assume!(weights.values().any(|w| *w > 0.0));
            let c = weighted_centroid(&proposals, &weights).unwrap();
            for d in 0..4 {
                let vals: Vec<f64> = proposals.values().map(|x| x.values()[d]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(c.values()[d] >= lo - 1e-12 && c.values()[d] <= hi + 1e-12);
            }
            Ok(())
        },
    )
}

pub fn prop_triangle_inequality(cases: u32) -> Result<(), String> {
    run_props(
        cases,
        (vec4(-1.0, 1.0), vec4(-1.0, 1.0), vec4(-1.0, 1.0)),
        |(a, b, c)| {
            let (a, b, c) = (sp(a), sp(b), sp(c));
            let ab = distance(&a, &b).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(ab, distance(&b, &a).unwrap());
            Ok(())
        },
    )
}

/// A feasible dispatch moves exactly `x * step` MWh in or out of each battery.
pub fn prop_soc_energy_conservation(cases: u32) -> Result<(), String> {
    let scenario = Scenario::bundled();
    run_props(
        cases,
        (0.0f64..=1.0, 0.0f64..=1.0, 0usize..24, vec4(0.0, 1.0)),
        move |(s48, s76, hour, t)| {
            let state = SocState::new(
                [
                    (DeviceId::from("BESS48"), s48),
                    (DeviceId::from("BESS76"), s76),
                ]
                .into_iter()
                .collect(),
            )
            .unwrap();
            let fs = build_feasible_set(&scenario, hour, &state).unwrap();
            let x = lerp(&fs, &t);
            let next = soc_step(&state, &x, &scenario).unwrap();
            for id in ["BESS48", "BESS76"] {
                let id = DeviceId::from(id);
                let capacity = scenario.device(&id).unwrap().capacity.unwrap();
                let moved = (state.get(&id).unwrap() - next.get(&id).unwrap()) * capacity;
                let dispatched = x.get(&id).unwrap() * scenario.step_hours;
                prop_assert!(
                    (moved - dispatched).abs() < 1e-12,
                    "{moved} vs {dispatched}"
                );
            }
            Ok(())
        },
    )
}

/// Point of the box at fractions `t` along each axis.
fn lerp(fs: &FeasibleBox<f64>, t: &[f64]) -> Setpoints<f64> {
    let values = (0..fs.devices().len())
        .map(|i| {
            let (lo, hi) = fs.bounds(i);
            (lo + t[i] * (hi - lo)).clamp(lo, hi)
        })
        .collect();
    Setpoints::new(fs.devices().clone(), values).unwrap()
}

/// Positive rescaling of an objective changes neither its box optimum nor any
/// normalized score.
pub fn prop_argmin_scale_invariance(cases: u32) -> Result<(), String> {
    let (_, fs) = hour19();
    run_props(
        cases,
        (vec4(-1.0, 1.0), 1e-3f64..1e3, -5.0f64..5.0, vec4(0.0, 1.0)),
        move |(g, k, c0, t)| {
            let obj = LinearObjective::new("p", sp(g), c0);
            let scaled = obj.scaled(k);
            prop_assert_eq!(
                optimal_setpoints(&obj, &fs).unwrap(),
                optimal_setpoints(&scaled, &fs).unwrap()
            );
            let x = lerp(&fs, &t);
            let a = normalize_objective(&obj, &fs, &x).unwrap();
            let b = normalize_objective(&scaled, &fs, &x).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            Ok(())
        },
    )
}

fn arb_setpoint_map() -> impl Strategy<Value = BTreeMap<DeviceId, f64>> {
    proptest::collection::btree_map(
        "[A-Z]{2,4}[0-9]{1,3}".prop_map(DeviceId::new),
        -1e3f64..1e3,
        1..6,
    )
}

fn arb_kind() -> impl Strategy<Value = MessageKind> {
    prop_oneof![
        Just(MessageKind::InitialProposal),
        Just(MessageKind::CounterOffer),
        Just(MessageKind::ConsensusUpdate),
        Just(MessageKind::Accept),
        Just(MessageKind::Reject),
        Just(MessageKind::FinalResolution),
    ]
}

pub fn arb_message() -> impl Strategy<Value = SessionMessage> {
    (
        "[a-z0-9-]{1,12}",
        0u32..50,
        "[a-z]{1,10}",
        proptest::option::of("[a-z]{1,10}"),
        arb_kind(),
        arb_setpoint_map(),
        proptest::option::of(0.0f64..=1.0),
        proptest::option::of("\\PC{0,80}"),
    )
        .prop_map(
            |(session, round, sender, recipient, kind, map, flex, just)| SessionMessage {
                session_id: session,
                round,
                sender: AgentId::new(sender),
                recipient: recipient.map(AgentId::new),
                kind,
                setpoints: kind.carries_setpoints().then_some(map),
                flexibility: flex,
                justification: just,
            },
        )
}

/// JSON encoding followed by decoding is the identity on every message kind,
/// and on requests and replies wrapping them.
pub fn prop_wire_round_trip(cases: u32) -> Result<(), String> {
    run_props(
        cases,
        (arb_message(), arb_setpoint_map(), any::<bool>()),
        |(msg, prev, open)| {
            prop_assert!(msg.validate().is_ok());
            let text = serde_json::to_string(&msg).unwrap();
            let back: SessionMessage = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);

            let req = AgentRequest {
                v: WIRE_VERSION,
                op: if open { Op::Open } else { Op::Respond },
                session_id: msg.session_id.clone(),
                agent: msg.sender.clone(),
                mode: Mode::Mediated,
                round: msg.round,
                devices: prev
                    .iter()
                    .map(|(id, v)| WireDevice {
                        id: id.clone(),
                        kind: DeviceKind::Bess,
                        lower: -v.abs(),
                        upper: v.abs(),
                    })
                    .collect(),
                previous: Some(prev.clone()),
                prompt: Some(msg.clone()),
            };
            let back: AgentRequest =
                serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
            prop_assert_eq!(back, req);
            let reply = AgentReply {
                v: WIRE_VERSION,
                message: Some(msg),
                error: None,
            };
            let back: AgentReply =
                serde_json::from_str(&serde_json::to_string(&reply).unwrap()).unwrap();
            prop_assert_eq!(back, reply);
            Ok(())
        },
    )
}

/// The compromise result always lies in both the box and the ball, and a
/// larger ball never does worse.
pub fn prop_compromise_constraints(cases: u32) -> Result<(), String> {
    run_props(cases, (any::<u64>(), 0.0f64..=1.0), |(seed, frac)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = oracle_case(&mut rng);
        let r1 = case.radius * frac;
        let solve = |r: f64| {
            let req = CompromiseRequest::new(
                case.objective.clone(),
                case.feasible.clone(),
                &case.consensus,
                &case.desired,
                r,
            )
            .unwrap();
            balanced_compromise(&req).unwrap()
        };
        let small = solve(r1);
        let large = solve(case.radius);
        for (x, r) in [(&small, r1), (&large, case.radius)] {
            prop_assert!(case.feasible.contains(x, 1e-9));
            prop_assert!(distance(x, &case.consensus).unwrap() <= r + 1e-9);
        }
        let js = case.objective.evaluate(&small).unwrap();
        let jl = case.objective.evaluate(&large).unwrap();
        prop_assert!(jl <= js + 1e-7, "{jl} > {js}");
        Ok(())
    })
}

pub fn prop_aggregate_linearity(cases: u32) -> Result<(), String> {
    run_props(
        cases,
        (vec4(-1.0, 1.0), vec4(-1.0, 1.0), -3.0f64..3.0, -3.0f64..3.0),
        |(x, y, a, b)| {
            let (x, y) = (sp(x), sp(y));
            let z = x.scaled(a).add_scaled(b, &y).unwrap();
            let (ax, ay, az) = (aggregate(&x), aggregate(&y), aggregate(&z));
            prop_assert!((az.dg - (a * ax.dg + b * ay.dg)).abs() < 1e-12);
            prop_assert!((az.bess - (a * ax.bess + b * ay.bess)).abs() < 1e-12);
            Ok(())
        },
    )
}

/// Listing the agents in a different order changes no centroid.
pub fn prop_permutation_invariance(cases: u32) -> Result<(), String> {
    let (s, fs) = hour19();
    run_props(
        cases,
        (0.0f64..=1.0, 0.5f64..=1.0, 0.0f64..=1.0, 0.5f64..=1.0),
        move |(f1, d1, f2, d2)| {
            let build = |order: &[usize]| {
                let specs = [
                    (
                        "cost",
                        deconflict::objectives::cost_objective(&s, 19).unwrap(),
                        f1,
                        d1,
                    ),
                    (
                        "resilience",
                        deconflict::objectives::resilience_objective(&s),
                        f2,
                        d2,
                    ),
                ];
                order
                    .iter()
                    .map(|i| {
                        let (id, obj, f, d) = specs[*i].clone();
                        let schedule = FlexibilitySchedule::Geometric {
                            initial: f,
                            decay: d,
                        };
                        Agent::new(
                            id,
                            ScheduledFlexibility::new(obj, schedule).never_accepting(),
                        )
                    })
                    .collect::<Vec<_>>()
            };
            let params = ConsensusParams::default();
            let a = run_procedural(&mut build(&[0, 1]), &fs, &params, "p").unwrap();
            let b = run_procedural(&mut build(&[1, 0]), &fs, &params, "p").unwrap();
            prop_assert_eq!(a.rounds.len(), b.rounds.len());
            for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
                prop_assert!(distance(&ra.centroid, &rb.centroid).unwrap() <= 1e-12);
            }
            prop_assert!(distance(&a.resolution, &b.resolution).unwrap() <= 1e-12);
            Ok(())
        },
    )
}
