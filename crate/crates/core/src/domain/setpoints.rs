use std::collections::BTreeMap;
use std::sync::Arc;

use super::{DeviceId, DeviceKind, DeviceSet};
use crate::{Error, Result, Scalar};

/// Dispatch decision over the conflicting devices, in MW.
///
/// Positive values inject power (BESS discharge); negative BESS values charge.
/// Values are stored in the canonical order of the attached [`DeviceSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Setpoints<T> {
    devices: Arc<DeviceSet>,
    values: Vec<T>,
}

impl<T: Scalar> Setpoints<T> {
    pub fn new(devices: Arc<DeviceSet>, values: Vec<T>) -> Result<Self> {
        if values.len() != devices.len() {
            return Err(Error::KeyMismatch(format!(
                "expected {} values, got {}",
                devices.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite setpoint for {}",
                devices.id(i)
            )));
        }
        Ok(Setpoints { devices, values })
    }

    pub fn filled(devices: Arc<DeviceSet>, value: T) -> Self {
        let values = vec![value; devices.len()];
        Setpoints { devices, values }
    }

    pub fn zeros(devices: Arc<DeviceSet>) -> Self {
        Self::filled(devices, T::zero())
    }

    /// Builds a vector from a device-id keyed map. The key set must equal the
    /// layout exactly.
    pub fn from_map(devices: Arc<DeviceSet>, map: &BTreeMap<DeviceId, T>) -> Result<Self> {
        if map.len() != devices.len() {
            return Err(Error::KeyMismatch(format!(
                "expected devices [{}], got [{}]",
                join_ids(devices.ids()),
                join_ids(map.keys())
            )));
        }
        let mut values = Vec::with_capacity(devices.len());
        for id in devices.ids() {
            match map.get(id) {
                Some(v) => values.push(*v),
                None => return Err(Error::KeyMismatch(format!("missing device `{id}`"))),
            }
        }
        Self::new(devices, values)
    }

    pub fn to_map(&self) -> BTreeMap<DeviceId, T> {
        self.devices
            .ids()
            .cloned()
            .zip(self.values.iter().copied())
            .collect()
    }

    pub fn devices(&self) -> &Arc<DeviceSet> {
        &self.devices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: &DeviceId) -> Option<T> {
        self.devices.index_of(id).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceId, DeviceKind, T)> + '_ {
        self.devices
            .iter()
            .zip(self.values.iter())
            .map(|((id, kind), v)| (id, kind, *v))
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.devices, &other.devices) || self.devices == other.devices
    }

    pub(crate) fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::KeyMismatch(format!(
                "[{}] vs [{}]",
                join_ids(self.devices.ids()),
                join_ids(other.devices.ids())
            )))
        }
    }

    /// Elementwise map keeping the layout. Callers guarantee finiteness.
    pub(crate) fn map(&self, f: impl Fn(usize, T) -> T) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| f(i, *v))
            .collect();
        Setpoints {
            devices: Arc::clone(&self.devices),
            values,
        }
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(self.same_layout(other));
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Setpoints {
            devices: Arc::clone(&self.devices),
            values,
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| *a * *b)
            .sum())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        Ok(self.zip_map(other, |a, b| a + alpha * b))
    }

    pub fn scaled(&self, alpha: T) -> Self {
        self.map(|_, v| v * alpha)
    }

    pub fn midpoint(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let half = T::of(0.5);
        Ok(self.zip_map(other, |a, b| half * (a + b)))
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Setpoints<U> {
        Setpoints {
            devices: Arc::clone(&self.devices),
            values: self
                .values
                .iter()
                .map(|v| U::of(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn to_f64_map(&self) -> BTreeMap<DeviceId, f64> {
        self.iter()
            .map(|(id, _, v)| (id.clone(), v.to_f64_lossy()))
            .collect()
    }
}

/// Euclidean distance between two setpoint vectors over the same devices.
pub fn distance<T: Scalar>(a: &Setpoints<T>, b: &Setpoints<T>) -> Result<T> {
    a.check_layout(b)?;
    Ok(a.values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>()
        .sqrt())
}

fn join_ids<'a>(ids: impl Iterator<Item = &'a DeviceId>) -> String {
    ids.map(DeviceId::as_str).collect::<Vec<_>>().join(", ")
}

/// Per-device box of admissible setpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleBox<T> {
    lower: Setpoints<T>,
    upper: Setpoints<T>,
}

impl<T: Scalar> FeasibleBox<T> {
    pub fn new(lower: Setpoints<T>, upper: Setpoints<T>) -> Result<Self> {
        lower.check_layout(&upper)?;
        for (i, (lo, hi)) in lower.values.iter().zip(upper.values.iter()).enumerate() {
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "lower bound {lo} exceeds upper bound {hi} for {}",
                    lower.devices.id(i)
                )));
            }
        }
        Ok(FeasibleBox { lower, upper })
    }

    pub fn lower(&self) -> &Setpoints<T> {
        &self.lower
    }

    pub fn upper(&self) -> &Setpoints<T> {
        &self.upper
    }

    pub fn devices(&self) -> &Arc<DeviceSet> {
        self.lower.devices()
    }

    pub fn bounds(&self, index: usize) -> (T, T) {
        (self.lower.values[index], self.upper.values[index])
    }

    /// Checks membership, reporting the first violating device.
    pub fn check(&self, x: &Setpoints<T>, tol: T) -> Result<()> {
        self.lower.check_layout(x)?;
        for (i, v) in x.values.iter().enumerate() {
            let (lo, hi) = self.bounds(i);
            if *v < lo - tol || *v > hi + tol {
                return Err(Error::Infeasible {
                    device: x.devices.id(i).clone(),
                    value: v.to_f64_lossy(),
                    lower: lo.to_f64_lossy(),
                    upper: hi.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Setpoints<T>, tol: T) -> bool {
        self.check(x, tol).is_ok()
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, x: &Setpoints<T>) -> Result<Setpoints<T>> {
        self.lower.check_layout(x)?;
        Ok(x.map(|i, v| {
            let (lo, hi) = self.bounds(i);
            v.max(lo).min(hi)
        }))
    }

    pub fn center(&self) -> Setpoints<T> {
        let half = T::of(0.5);
        self.lower.zip_map(&self.upper, |a, b| half * (a + b))
    }
}
