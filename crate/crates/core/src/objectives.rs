//! Linear application objectives, their box optima and the single-agent
//! (exclusive control) day simulation.

use std::collections::BTreeMap;

use crate::domain::{
    build_feasible_set, check_hour, DeviceKind, FeasibleBox, Scenario, Setpoints, SocState, HOURS,
};
use crate::{Error, Result, Scalar};

/// A private agent objective `J(x) = gradient . x + constant`, minimized.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearObjective<T> {
    pub name: String,
    pub gradient: Setpoints<T>,
    pub constant: T,
}

impl<T: Scalar> LinearObjective<T> {
    pub fn new(name: impl Into<String>, gradient: Setpoints<T>, constant: T) -> Self {
        LinearObjective {
            name: name.into(),
            gradient,
            constant,
        }
    }

    pub fn evaluate(&self, x: &Setpoints<T>) -> Result<T> {
        Ok(self.gradient.dot(x)? + self.constant)
    }

    /// Positive rescaling of gradient and constant.
    pub fn scaled(&self, factor: T) -> Self {
        LinearObjective {
            name: self.name.clone(),
            gradient: self.gradient.scaled(factor),
            constant: self.constant * factor,
        }
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn blend(&self, other: &Self, weight: T) -> Result<Self> {
        let rest = T::one() - weight;
        Ok(LinearObjective {
            name: format!("{}+{}", self.name, other.name),
            gradient: self
                .gradient
                .scaled(weight)
                .add_scaled(rest, &other.gradient)?,
            constant: weight * self.constant + rest * other.constant,
        })
    }
}

/// Which single application controls the fleet in an exclusive run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Application {
    Cost,
    Resilience,
}

impl Application {
    pub fn name(self) -> &'static str {
        match self {
            Application::Cost => "cost",
            Application::Resilience => "resilience",
        }
    }

    pub fn objective<T: Scalar>(
        self,
        scenario: &Scenario,
        hour: usize,
    ) -> Result<LinearObjective<T>> {
        match self {
            Application::Cost => cost_objective(scenario, hour),
            Application::Resilience => Ok(resilience_objective(scenario)),
        }
    }
}

impl std::str::FromStr for Application {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cost" => Ok(Application::Cost),
            "resilience" => Ok(Application::Resilience),
            other => Err(format!("unknown application `{other}`")),
        }
    }
}

/// Instantaneous operating cost at `hour`.
///
/// Grid purchases are offset by every MW injected locally, DG output costs
/// `dg_cost`, and BESS discharge is valued against the daily average price.
/// Fixed PV injection only shifts the constant.
pub fn cost_objective<T: Scalar>(scenario: &Scenario, hour: usize) -> Result<LinearObjective<T>> {
    check_hour(hour)?;
    let price = scenario.price[hour];
    let devices = scenario.conflicting_devices();
    let coeffs = devices
        .iter()
        .map(|(_, kind)| match kind {
            DeviceKind::Dg => T::of(scenario.dg_cost - price),
            DeviceKind::Bess => T::of(scenario.price_avg - price),
            DeviceKind::Pv => T::zero(),
        })
        .collect();
    let constant = T::of(-price * scenario.pv_output(hour)?);
    Ok(LinearObjective::new(
        Application::Cost.name(),
        Setpoints::new(devices.clone(), coeffs)?,
        constant,
    ))
}

/// Reserve preservation: total DG output plus BESS discharge.
pub fn resilience_objective<T: Scalar>(scenario: &Scenario) -> LinearObjective<T> {
    LinearObjective::new(
        Application::Resilience.name(),
        Setpoints::filled(scenario.conflicting_devices().clone(), T::one()),
        T::zero(),
    )
}

/// Minimizer of a linear objective over the box.
///
/// Devices with a zero coefficient idle at 0 when feasible, otherwise at the
/// bound nearest 0.
pub fn optimal_setpoints<T: Scalar>(
    obj: &LinearObjective<T>,
    fs: &FeasibleBox<T>,
) -> Result<Setpoints<T>> {
    fs.lower().check_layout(&obj.gradient)?;
    Ok(obj.gradient.map(|i, g| {
        let (lo, hi) = fs.bounds(i);
        if g > T::zero() {
            lo
        } else if g < T::zero() {
            hi
        } else {
            T::zero().max(lo).min(hi)
        }
    }))
}

/// Exact minimum and maximum of the objective over the box.
pub fn objective_bounds<T: Scalar>(
    obj: &LinearObjective<T>,
    fs: &FeasibleBox<T>,
) -> Result<(T, T)> {
    fs.lower().check_layout(&obj.gradient)?;
    let mut j_min = obj.constant;
    let mut j_max = obj.constant;
    for (i, g) in obj.gradient.values().iter().enumerate() {
        let (lo, hi) = fs.bounds(i);
        let (a, b) = (*g * lo, *g * hi);
        j_min += a.min(b);
        j_max += a.max(b);
    }
    Ok((j_min, j_max))
}

/// Advances the state of charge by one step of dispatch `x`.
pub fn soc_step<T: Scalar>(
    state: &SocState<T>,
    x: &Setpoints<T>,
    scenario: &Scenario,
) -> Result<SocState<T>> {
    let tol = T::of(1e-9);
    let step = T::of(scenario.step_hours);
    let mut next = BTreeMap::new();
    for (id, soc) in &state.soc {
        let (p_max, capacity) = scenario.bess(id)?;
        let (p_max, capacity) = (T::of(p_max), T::of(capacity));
        let p = x.get(id).ok_or_else(|| Error::UnknownDevice(id.clone()))?;
        let upper = p_max.min(*soc * capacity / step);
        let lower = -p_max.min((T::one() - *soc) * capacity / step);
        if p > upper + tol || p < lower - tol {
            return Err(Error::Infeasible {
                device: id.clone(),
                value: p.to_f64_lossy(),
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            });
        }
        let updated = *soc - p * step / capacity;
        next.insert(id.clone(), updated.max(T::zero()).min(T::one()));
    }
    Ok(SocState { soc: next })
}

/// One hour of an exclusive-control run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExclusiveStep<T> {
    pub hour: usize,
    pub setpoints: Setpoints<T>,
    /// State of charge after applying `setpoints`.
    pub state: SocState<T>,
    pub objective: T,
}

/// Lets one application dispatch the fleet alone for 24 hours, starting from
/// the scenario's initial state of charge.
pub fn simulate_exclusive<T: Scalar>(
    scenario: &Scenario,
    which: Application,
) -> Result<Vec<ExclusiveStep<T>>> {
    let mut state = scenario.initial_state::<T>();
    let mut out = Vec::with_capacity(HOURS);
    for hour in 0..HOURS {
        let fs = build_feasible_set(scenario, hour, &state)?;
        let obj = which.objective::<T>(scenario, hour)?;
        let x = optimal_setpoints(&obj, &fs)?;
        let objective = obj.evaluate(&x)?;
        state = soc_step(&state, &x, scenario)?;
        out.push(ExclusiveStep {
            hour,
            setpoints: x,
            state: state.clone(),
            objective,
        });
    }
    Ok(out)
}
