//! Artifact schemas, writers and the matching parsers.
//!
//! | file                               | one row per                          |
//! |------------------------------------|--------------------------------------|
//! | `trajectory_<mode>_<trial>.csv`    | round × agent × device               |
//! | `transcript_<mode>_<trial>.jsonl`  | session message                      |
//! | `summary.csv`                      | session                              |
//! | `scatter.csv`                      | session (normalized objectives only) |
//! | `metrics.csv`                      | mode, after an `initial_centroid` row |
//! | `pareto.csv`                       | front point                          |
//! | `exclusive_<application>.csv`      | hour                                 |
//!
//! Columns named `sp:<device>` hold setpoints in MW, `norm:<agent>`
//! normalized objectives, `success:<agent>` and `var:<agent>` the per-mode
//! success metric and variance, `soc:<device>` state of charge after the hour.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::Move;
use crate::domain::{aggregate, DeviceId};
use crate::evaluation::{ParetoPoint, TrialOutcome};
use crate::objectives::ExclusiveStep;
use crate::protocol::{SessionMessage, SessionResult};
use crate::strategy::AgentId;
use crate::{Error, Result};

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: u32,
    pub agent: AgentId,
    pub device: DeviceId,
    pub proposal: f64,
    /// `inf` for an infinite weight.
    pub weight: f64,
    pub centroid: f64,
    /// `opened`, `accepted` or `countered`.
    pub action: String,
    pub flexibility: Option<f64>,
    pub suggestion: Option<f64>,
}

impl TrajectoryRow {
    pub fn from_session(session: &SessionResult<f64>) -> Vec<Self> {
        let mut rows = Vec::new();
        for rec in &session.rounds {
            for (agent, x) in &rec.proposals {
                let (action, flexibility) = match rec.moves.get(agent) {
                    Some(Move::Countered { flexibility }) => ("countered", Some(*flexibility)),
                    Some(Move::Accepted) => ("accepted", None),
                    _ => ("opened", None),
                };
                for (i, (device, _, value)) in x.iter().enumerate() {
                    rows.push(TrajectoryRow {
                        round: rec.round,
                        agent: agent.clone(),
                        device: device.clone(),
                        proposal: value,
                        weight: rec.weights[agent],
                        centroid: rec.centroid.values()[i],
                        action: action.into(),
                        flexibility,
                        suggestion: rec.suggestions.get(agent).copied(),
                    });
                }
            }
        }
        rows
    }
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?;
    Ok(rows)
}

pub fn transcript_jsonl(messages: &[SessionMessage]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_transcript(path: &Path) -> Result<Vec<SessionMessage>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub trial: usize,
    pub rounds_used: u32,
    pub converged: bool,
    pub termination: String,
    pub dg_mw: f64,
    pub bess_mw: f64,
    pub setpoints: BTreeMap<DeviceId, f64>,
    pub normalized: BTreeMap<AgentId, f64>,
}

impl SummaryRow {
    pub fn from_outcome(outcome: &TrialOutcome<f64>, session: &SessionResult<f64>) -> Self {
        let agg = aggregate(&outcome.resolution);
        SummaryRow {
            mode: outcome.mode.to_string(),
            trial: outcome.trial,
            rounds_used: outcome.rounds_used,
            converged: outcome.converged,
            termination: session.termination.as_str().into(),
            dg_mw: agg.dg,
            bess_mw: agg.bess,
            setpoints: outcome.resolution.to_map(),
            normalized: outcome.normalized.clone(),
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return finish(w);
    };
    let mut header: Vec<String> = [
        "mode",
        "trial",
        "rounds_used",
        "converged",
        "termination",
        "dg_mw",
        "bess_mw",
    ]
    .map(String::from)
    .to_vec();
    header.extend(first.setpoints.keys().map(|d| format!("sp:{d}")));
    header.extend(first.normalized.keys().map(|a| format!("norm:{a}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.mode.clone(),
            r.trial.to_string(),
            r.rounds_used.to_string(),
            r.converged.to_string(),
            r.termination.clone(),
            r.dg_mw.to_string(),
            r.bess_mw.to_string(),
        ];
        rec.extend(r.setpoints.values().map(f64::to_string));
        rec.extend(r.normalized.values().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let (header, records) = read_table(path)?;
    records
        .iter()
        .map(|rec| {
            let get = |name: &str| field(&header, rec, name);
            Ok(SummaryRow {
                mode: get("mode")?.to_owned(),
                trial: parse(get("trial")?)?,
                rounds_used: parse(get("rounds_used")?)?,
                converged: parse(get("converged")?)?,
                termination: get("termination")?.to_owned(),
                dg_mw: parse(get("dg_mw")?)?,
                bess_mw: parse(get("bess_mw")?)?,
                setpoints: prefixed::<DeviceId>(&header, rec, "sp:")?,
                normalized: prefixed::<AgentId>(&header, rec, "norm:")?,
            })
        })
        .collect()
}

pub fn scatter_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return finish(w);
    };
    let mut header = vec!["mode".to_owned(), "trial".to_owned()];
    header.extend(first.normalized.keys().map(|a| format!("norm:{a}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.mode.clone(), r.trial.to_string()];
        rec.extend(r.normalized.values().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub mode: String,
    pub trial: usize,
    pub normalized: BTreeMap<AgentId, f64>,
}

pub fn read_scatter(path: &Path) -> Result<Vec<ScatterRow>> {
    let (header, records) = read_table(path)?;
    records
        .iter()
        .map(|rec| {
            Ok(ScatterRow {
                mode: field(&header, rec, "mode")?.to_owned(),
                trial: parse(field(&header, rec, "trial")?)?,
                normalized: prefixed::<AgentId>(&header, rec, "norm:")?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// A mode name or `initial_centroid`.
    pub label: String,
    pub trials: usize,
    pub success: BTreeMap<AgentId, f64>,
    pub variance: BTreeMap<AgentId, f64>,
    /// Mean distance to the equal-outcome line.
    pub fairness: f64,
    pub mean_rounds: Option<f64>,
    pub converged_fraction: Option<f64>,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return finish(w);
    };
    let mut header = vec!["label".to_owned(), "trials".to_owned()];
    header.extend(first.success.keys().map(|a| format!("success:{a}")));
    header.extend(first.variance.keys().map(|a| format!("var:{a}")));
    header.extend(["fairness", "mean_rounds", "converged_fraction"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        let mut rec = vec![r.label.clone(), r.trials.to_string()];
        rec.extend(r.success.values().map(f64::to_string));
        rec.extend(r.variance.values().map(f64::to_string));
        rec.push(r.fairness.to_string());
        rec.push(opt(r.mean_rounds));
        rec.push(opt(r.converged_fraction));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let (header, records) = read_table(path)?;
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s).map(Some)
        }
    };
    records
        .iter()
        .map(|rec| {
            Ok(MetricsRow {
                label: field(&header, rec, "label")?.to_owned(),
                trials: parse(field(&header, rec, "trials")?)?,
                success: prefixed::<AgentId>(&header, rec, "success:")?,
                variance: prefixed::<AgentId>(&header, rec, "var:")?,
                fairness: parse(field(&header, rec, "fairness")?)?,
                mean_rounds: opt(field(&header, rec, "mean_rounds")?)?,
                converged_fraction: opt(field(&header, rec, "converged_fraction")?)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoRow {
    pub a: f64,
    pub b: f64,
    pub setpoints: BTreeMap<DeviceId, f64>,
}

impl ParetoRow {
    pub fn from_point(p: &ParetoPoint<f64>) -> Self {
        ParetoRow {
            a: p.a,
            b: p.b,
            setpoints: p.setpoints.to_map(),
        }
    }
}

/// The first two columns are the normalized objectives of agents `a` and `b`.
pub fn pareto_csv(a: &AgentId, b: &AgentId, rows: &[ParetoRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return finish(w);
    };
    let mut header = vec![format!("norm:{a}"), format!("norm:{b}")];
    header.extend(first.setpoints.keys().map(|d| format!("sp:{d}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.a.to_string(), r.b.to_string()];
        rec.extend(r.setpoints.values().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn read_pareto(path: &Path) -> Result<Vec<ParetoRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::InvalidArgument("short pareto row".into()))
        };
        rows.push(ParetoRow {
            a: parse(cell(0)?)?,
            b: parse(cell(1)?)?,
            setpoints: prefixed::<DeviceId>(&header, &rec, "sp:")?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExclusiveRow {
    pub hour: usize,
    pub setpoints: BTreeMap<DeviceId, f64>,
    pub dg_mw: f64,
    pub bess_mw: f64,
    pub soc: BTreeMap<DeviceId, f64>,
    pub objective: f64,
}

impl ExclusiveRow {
    pub fn from_step(step: &ExclusiveStep<f64>) -> Self {
        let agg = aggregate(&step.setpoints);
        ExclusiveRow {
            hour: step.hour,
            setpoints: step.setpoints.to_map(),
            dg_mw: agg.dg,
            bess_mw: agg.bess,
            soc: step.state.soc.clone(),
            objective: step.objective,
        }
    }
}

pub fn exclusive_csv(rows: &[ExclusiveRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return finish(w);
    };
    let mut header = vec!["hour".to_owned()];
    header.extend(first.setpoints.keys().map(|d| format!("sp:{d}")));
    header.extend(["dg_mw".to_owned(), "bess_mw".to_owned()]);
    header.extend(first.soc.keys().map(|d| format!("soc:{d}")));
    header.push("objective".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.hour.to_string()];
        rec.extend(r.setpoints.values().map(f64::to_string));
        rec.extend([r.dg_mw.to_string(), r.bess_mw.to_string()]);
        rec.extend(r.soc.values().map(f64::to_string));
        rec.push(r.objective.to_string());
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn read_exclusive(path: &Path) -> Result<Vec<ExclusiveRow>> {
    let (header, records) = read_table(path)?;
    records
        .iter()
        .map(|rec| {
            Ok(ExclusiveRow {
                hour: parse(field(&header, rec, "hour")?)?,
                setpoints: prefixed::<DeviceId>(&header, rec, "sp:")?,
                dg_mw: parse(field(&header, rec, "dg_mw")?)?,
                bess_mw: parse(field(&header, rec, "bess_mw")?)?,
                soc: prefixed::<DeviceId>(&header, rec, "soc:")?,
                objective: parse(field(&header, rec, "objective")?)?,
            })
        })
        .collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let records = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, records))
}

fn field<'a>(header: &[String], rec: &'a csv::StringRecord, name: &str) -> Result<&'a str> {
    header
        .iter()
        .position(|h| h == name)
        .and_then(|i| rec.get(i))
        .ok_or_else(|| Error::InvalidArgument(format!("missing column `{name}`")))
}

fn prefixed<K: Ord + for<'a> From<&'a str>>(
    header: &[String],
    rec: &csv::StringRecord,
    prefix: &str,
) -> Result<BTreeMap<K, f64>> {
    let mut out = BTreeMap::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(name) = h.strip_prefix(prefix) {
            let cell = rec
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("short row at `{h}`")))?;
            out.insert(K::from(name), parse(cell)?);
        }
    }
    Ok(out)
}

fn parse<V: std::str::FromStr>(s: &str) -> Result<V> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse `{s}`")))
}
