use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{DeviceId, DeviceKind, DeviceSet, DeviceSpec, FeasibleBox, Setpoints};
use crate::{Error, Result, Scalar};

pub const HOURS: usize = 24;

const BUNDLED: &str = include_str!("../../scenarios/fleet.toml");

/// Fleet, 24-hour profiles and cost coefficients for one dispatch day.
///
/// Power is in MW and energy in MWh; the config file carries kW/kWh ratings.
#[derive(Clone, Debug)]
pub struct Scenario {
    devices: Vec<DeviceSpec>,
    conflicting: Arc<DeviceSet>,
    pub price: [f64; HOURS],
    pub price_avg: f64,
    pub dg_cost: f64,
    pub pv_profile: [f64; HOURS],
    pub load_profile: [f64; HOURS],
    pub initial_soc: BTreeMap<DeviceId, f64>,
    pub step_hours: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    step_hours: Option<f64>,
    price: Vec<f64>,
    price_avg: f64,
    dg_cost: f64,
    pv_profile: Vec<f64>,
    load_profile: Vec<f64>,
    initial_soc: BTreeMap<String, f64>,
    devices: Vec<DeviceFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    id: String,
    bus: u32,
    kind: DeviceKind,
    p_max_kw: f64,
    capacity_kwh: Option<f64>,
}

fn profile(name: &str, values: Vec<f64>) -> Result<[f64; HOURS]> {
    let len = values.len();
    let arr: [f64; HOURS] = values
        .try_into()
        .map_err(|_| Error::Scenario(format!("`{name}` has {len} entries, expected {HOURS}")))?;
    if arr.iter().any(|v| !v.is_finite()) {
        return Err(Error::Scenario(format!(
            "`{name}` contains non-finite entries"
        )));
    }
    Ok(arr)
}

impl Scenario {
    /// The bundled seven-DER fleet with its default profiles.
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED).expect("bundled scenario is valid")
    }

    pub fn bundled_toml() -> &'static str {
        BUNDLED
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Scenario(e.message().to_owned()))?;
        let devices = file
            .devices
            .into_iter()
            .map(|d| DeviceSpec {
                id: DeviceId::new(d.id),
                bus: d.bus,
                kind: d.kind,
                p_max: d.p_max_kw / 1000.0,
                capacity: d.capacity_kwh.map(|c| c / 1000.0),
            })
            .collect();
        let initial_soc = file
            .initial_soc
            .into_iter()
            .map(|(k, v)| (DeviceId::new(k), v))
            .collect();
        Self::new(
            devices,
            profile("price", file.price)?,
            file.price_avg,
            file.dg_cost,
            profile("pv_profile", file.pv_profile)?,
            profile("load_profile", file.load_profile)?,
            initial_soc,
            file.step_hours.unwrap_or(1.0),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        devices: Vec<DeviceSpec>,
        price: [f64; HOURS],
        price_avg: f64,
        dg_cost: f64,
        pv_profile: [f64; HOURS],
        load_profile: [f64; HOURS],
        initial_soc: BTreeMap<DeviceId, f64>,
        step_hours: f64,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &devices {
            if !seen.insert(&d.id) {
                return Err(Error::Scenario(format!("duplicate device id `{}`", d.id)));
            }
            if !(d.p_max.is_finite() && d.p_max > 0.0) {
                return Err(Error::Scenario(format!("{}: p_max must be positive", d.id)));
            }
            match (d.kind, d.capacity) {
                (DeviceKind::Bess, Some(c)) if c.is_finite() && c > 0.0 => {}
                (DeviceKind::Bess, _) => {
                    return Err(Error::Scenario(format!(
                        "{}: BESS needs a positive capacity",
                        d.id
                    )))
                }
                (_, Some(_)) => {
                    return Err(Error::Scenario(format!(
                        "{}: only BESS devices carry a capacity",
                        d.id
                    )))
                }
                (_, None) => {}
            }
        }
        let mean = price.iter().sum::<f64>() / HOURS as f64;
        if !price_avg.is_finite() || (mean - price_avg).abs() > 1e-9 {
            return Err(Error::Scenario(format!(
                "price_avg {price_avg} differs from the mean price {mean}"
            )));
        }
        if !dg_cost.is_finite() {
            return Err(Error::Scenario("dg_cost must be finite".into()));
        }
        if pv_profile.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Scenario(
                "pv_profile entries must lie in [0, 1]".into(),
            ));
        }
        if !(step_hours.is_finite() && step_hours > 0.0) {
            return Err(Error::Scenario("step_hours must be positive".into()));
        }
        for (id, soc) in &initial_soc {
            match devices.iter().find(|d| &d.id == id) {
                Some(d) if d.kind == DeviceKind::Bess => {}
                _ => return Err(Error::UnknownDevice(id.clone())),
            }
            if !(0.0..=1.0).contains(soc) {
                return Err(Error::Scenario(format!(
                    "{id}: initial soc {soc} outside [0, 1]"
                )));
            }
        }
        if let Some(d) = devices
            .iter()
            .find(|d| d.kind == DeviceKind::Bess && !initial_soc.contains_key(&d.id))
        {
            return Err(Error::Scenario(format!("{}: missing initial soc", d.id)));
        }
        let conflicting = DeviceSet::new(
            devices
                .iter()
                .filter(|d| d.kind != DeviceKind::Pv)
                .map(|d| (d.id.clone(), d.kind)),
        )?;
        Ok(Scenario {
            devices,
            conflicting,
            price,
            price_avg,
            dg_cost,
            pv_profile,
            load_profile,
            initial_soc,
            step_hours,
        })
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| &d.id == id)
    }

    /// Negotiated devices: every DG and BESS, sorted by id. PV is fixed.
    pub fn conflicting_devices(&self) -> &Arc<DeviceSet> {
        &self.conflicting
    }

    /// Total PV injection at `hour`, MW.
    pub fn pv_output(&self, hour: usize) -> Result<f64> {
        check_hour(hour)?;
        Ok(self
            .devices
            .iter()
            .filter(|d| d.kind == DeviceKind::Pv)
            .map(|d| d.p_max * self.pv_profile[hour])
            .sum())
    }

    pub fn initial_state<T: Scalar>(&self) -> SocState<T> {
        SocState {
            soc: self
                .initial_soc
                .iter()
                .map(|(k, v)| (k.clone(), T::of(*v)))
                .collect(),
        }
    }

    pub(crate) fn bess(&self, id: &DeviceId) -> Result<(f64, f64)> {
        match self.device(id) {
            Some(DeviceSpec {
                kind: DeviceKind::Bess,
                p_max,
                capacity: Some(c),
                ..
            }) => Ok((*p_max, *c)),
            _ => Err(Error::UnknownDevice(id.clone())),
        }
    }
}

pub(crate) fn check_hour(hour: usize) -> Result<()> {
    if hour < HOURS {
        Ok(())
    } else {
        Err(Error::HourOutOfRange(hour))
    }
}

/// State of charge per BESS, dimensionless in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SocState<T> {
    pub soc: BTreeMap<DeviceId, T>,
}

impl<T: Scalar> SocState<T> {
    pub fn new(soc: BTreeMap<DeviceId, T>) -> Result<Self> {
        for (id, v) in &soc {
            if !(*v >= T::zero() && *v <= T::one()) {
                return Err(Error::InvalidArgument(format!(
                    "{id}: soc {v} outside [0, 1]"
                )));
            }
        }
        Ok(SocState { soc })
    }

    pub fn get(&self, id: &DeviceId) -> Option<T> {
        self.soc.get(id).copied()
    }
}

/// Box of admissible setpoints at `hour` given the current state of charge.
///
/// DG units span `[0, p_max]`. A BESS may discharge at most its stored energy
/// and charge at most its empty headroom over one step, each capped by `p_max`.
pub fn build_feasible_set<T: Scalar>(
    scenario: &Scenario,
    hour: usize,
    state: &SocState<T>,
) -> Result<FeasibleBox<T>> {
    check_hour(hour)?;
    if let Some(id) = state.soc.keys().find(|id| scenario.bess(id).is_err()) {
        return Err(Error::UnknownDevice(id.clone()));
    }
    let devices = scenario.conflicting_devices();
    let step = T::of(scenario.step_hours);
    let mut lower = Vec::with_capacity(devices.len());
    let mut upper = Vec::with_capacity(devices.len());
    for (id, kind) in devices.iter() {
        match kind {
            DeviceKind::Dg => {
                let spec = scenario
                    .device(id)
                    .ok_or_else(|| Error::UnknownDevice(id.clone()))?;
                lower.push(T::zero());
                upper.push(T::of(spec.p_max));
            }
            DeviceKind::Bess => {
                let (p_max, capacity) = scenario.bess(id)?;
                let (p_max, capacity) = (T::of(p_max), T::of(capacity));
                let soc = state
                    .get(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("state has no soc for {id}")))?;
                upper.push(p_max.min(soc * capacity / step));
                lower.push(-p_max.min((T::one() - soc) * capacity / step));
            }
            DeviceKind::Pv => unreachable!("PV is never part of the conflicting set"),
        }
    }
    FeasibleBox::new(
        Setpoints::new(devices.clone(), lower)?,
        Setpoints::new(devices.clone(), upper)?,
    )
}

/// Setpoint totals by device kind, MW.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate<T> {
    pub dg: T,
    pub bess: T,
}

pub fn aggregate<T: Scalar>(x: &Setpoints<T>) -> Aggregate<T> {
    let mut out = Aggregate {
        dg: T::zero(),
        bess: T::zero(),
    };
    for (_, kind, v) in x.iter() {
        match kind {
            DeviceKind::Dg => out.dg += v,
            DeviceKind::Bess => out.bess += v,
            DeviceKind::Pv => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hour19(soc48: f64, soc76: f64) -> FeasibleBox<f64> {
        let s = Scenario::bundled();
        let mut state = s.initial_state::<f64>();
        state.soc.insert("BESS48".into(), soc48);
        state.soc.insert("BESS76".into(), soc76);
        build_feasible_set(&s, 19, &state).unwrap()
    }

    fn bounds_of(fs: &FeasibleBox<f64>, id: &str) -> (f64, f64) {
        let id = DeviceId::from(id);
        (fs.lower().get(&id).unwrap(), fs.upper().get(&id).unwrap())
    }

    #[test]
    fn bundled_scenario_loads() {
        let s = Scenario::bundled();
        assert_eq!(s.devices().len(), 7);
        let ids: Vec<_> = s.conflicting_devices().ids().map(|d| d.as_str()).collect();
        assert_eq!(ids, ["BESS48", "BESS76", "DG47", "DG49"]);
        assert_eq!(s.price[19], 0.20);
        assert_eq!(s.pv_output(19).unwrap(), 0.0);
        assert_abs_diff_eq!(s.device(&"BESS48".into()).unwrap().capacity.unwrap(), 1.2);
    }

    #[test]
    fn hour19_box_at_half_charge() {
        let fs = hour19(0.5, 0.5);
        assert_eq!(bounds_of(&fs, "DG47"), (0.0, 0.3));
        assert_eq!(bounds_of(&fs, "DG49"), (0.0, 0.3));
        assert_eq!(bounds_of(&fs, "BESS48"), (-0.15, 0.15));
        assert_eq!(bounds_of(&fs, "BESS76"), (-0.1875, 0.1875));
    }

    #[test]
    fn full_battery_has_no_charging_headroom() {
        let (lo, hi) = bounds_of(&hour19(1.0, 0.5), "BESS48");
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.15);
    }

    #[test]
    fn low_soc_limits_discharge() {
        // 0.05 * 1.2 MWh over one hour
        let (_, hi) = bounds_of(&hour19(0.05, 0.5), "BESS48");
        assert_abs_diff_eq!(hi, 0.06, epsilon = 1e-15);
    }

    #[test]
    fn feasible_set_errors() {
        let s = Scenario::bundled();
        let state = s.initial_state::<f64>();
        assert!(matches!(
            build_feasible_set(&s, 24, &state),
            Err(Error::HourOutOfRange(24))
        ));
        let mut bad = state.clone();
        bad.soc.insert("BESS99".into(), 0.5);
        assert!(matches!(
            build_feasible_set(&s, 3, &bad),
            Err(Error::UnknownDevice(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let devices = Scenario::bundled().conflicting_devices().clone();
        let corner = Setpoints::new(devices.clone(), vec![0.15, 0.1875, 0.3, 0.3]).unwrap();
        let a = aggregate(&corner);
        assert_abs_diff_eq!(a.dg, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(a.bess, 0.3375, epsilon = 1e-15);
        let res = Setpoints::new(devices.clone(), vec![-0.15, -0.1875, 0.0, 0.0]).unwrap();
        let a = aggregate(&res);
        assert_eq!((a.dg, a.bess), (0.0, -0.3375));
        let z = aggregate(&Setpoints::<f64>::zeros(devices));
        assert_eq!((z.dg, z.bess), (0.0, 0.0));
    }

    #[test]
    fn scenario_validation() {
        let base = Scenario::bundled_toml();
        let bad_avg = base.replace("price_avg = 0.12", "price_avg = 0.13");
        assert!(matches!(
            Scenario::from_toml_str(&bad_avg),
            Err(Error::Scenario(_))
        ));
        let dup = base.replace("id = \"DG49\"", "id = \"DG47\"");
        assert!(Scenario::from_toml_str(&dup).is_err());
        let cap = base.replace(
            "p_max_kw = 150.0\ncapacity_kwh = 1200.0",
            "p_max_kw = 150.0",
        );
        assert!(Scenario::from_toml_str(&cap).is_err());
        let neg = base.replace("p_max_kw = 187.5", "p_max_kw = -1.0");
        assert!(Scenario::from_toml_str(&neg).is_err());
    }

    #[test]
    fn f32_box_matches() {
        let s = Scenario::bundled();
        let fs = build_feasible_set(&s, 19, &s.initial_state::<f32>()).unwrap();
        assert_eq!(fs.upper().values(), &[0.15f32, 0.1875, 0.3, 0.3]);
    }
}
