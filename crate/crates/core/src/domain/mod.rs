//! Devices, setpoint vectors, feasible boxes and the dispatch scenario.

mod scenario;
mod setpoints;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub(crate) use scenario::check_hour;
pub use scenario::{aggregate, build_feasible_set, Aggregate, Scenario, SocState, HOURS};
pub use setpoints::{distance, FeasibleBox, Setpoints};

/// Device identifier such as `DG47` or `BESS76`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        DeviceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        DeviceId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    #[serde(rename = "DG")]
    Dg,
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "BESS")]
    Bess,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceKind::Dg => "DG",
            DeviceKind::Pv => "PV",
            DeviceKind::Bess => "BESS",
        })
    }
}

/// One distributed energy resource. Power in MW, energy in MWh.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSpec {
    pub id: DeviceId,
    pub bus: u32,
    pub kind: DeviceKind,
    pub p_max: f64,
    pub capacity: Option<f64>,
}

/// Canonical layout of a setpoint vector: device ids in lexicographic order
/// together with their kinds.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeviceSet {
    entries: Vec<(DeviceId, DeviceKind)>,
}

impl DeviceSet {
    /// Builds a layout, sorting by id. Duplicate ids are rejected.
    pub fn new(
        entries: impl IntoIterator<Item = (DeviceId, DeviceKind)>,
    ) -> crate::Result<Arc<Self>> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(crate::Error::Scenario(format!(
                "duplicate device id `{}`",
                w[0].0
            )));
        }
        Ok(Arc::new(DeviceSet { entries }))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &DeviceId> + '_ {
        self.entries.iter().map(|(id, _)| id)
    }

    pub fn id(&self, index: usize) -> &DeviceId {
        &self.entries[index].0
    }

    pub fn kind(&self, index: usize) -> DeviceKind {
        self.entries[index].1
    }

    pub fn index_of(&self, id: &DeviceId) -> Option<usize> {
        self.entries.binary_search_by(|(d, _)| d.cmp(id)).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceId, DeviceKind)> + '_ {
        self.entries.iter().map(|(id, kind)| (id, *kind))
    }
}
