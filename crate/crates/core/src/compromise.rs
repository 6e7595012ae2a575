//! Balanced compromise: the best point for a private objective inside a
//! Euclidean ball around the consensus, intersected with the feasible box.

use crate::domain::{distance, FeasibleBox, Setpoints};
use crate::objectives::LinearObjective;
use crate::{Error, Result, Scalar};

const MAX_ITERATIONS: usize = 10_000;
const MOVE_TOL: f64 = 1e-8;
const PROJECTION_ITERATIONS: usize = 2_000;
const PROJECTION_TOL: f64 = 1e-13;
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct CompromiseRequest<T> {
    objective: LinearObjective<T>,
    feasible: FeasibleBox<T>,
    consensus: Setpoints<T>,
    desired: Setpoints<T>,
    radius: T,
}

impl<T: Scalar> CompromiseRequest<T> {
    /// Validates the request. `consensus` and `desired` are projected onto the
    /// box; the radius must lie in `[0, d]` where `d` is their distance
    /// (a radius above `d` by at most 1e-9 is clamped).
    pub fn new(
        objective: LinearObjective<T>,
        feasible: FeasibleBox<T>,
        consensus: &Setpoints<T>,
        desired: &Setpoints<T>,
        radius: T,
    ) -> Result<Self> {
        feasible.lower().check_layout(&objective.gradient)?;
        let consensus = feasible.project(consensus)?;
        let desired = feasible.project(desired)?;
        let d = distance(&desired, &consensus)?;
        if !radius.is_finite() || radius < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "radius {radius} must be non-negative"
            )));
        }
        if radius > d + T::of(MEMBERSHIP_TOL) {
            return Err(Error::InvalidArgument(format!(
                "radius {radius} exceeds the distance {d} between desired and consensus"
            )));
        }
        Ok(CompromiseRequest {
            objective,
            feasible,
            consensus,
            desired,
            radius: radius.min(d),
        })
    }

    pub fn objective(&self) -> &LinearObjective<T> {
        &self.objective
    }

    pub fn feasible(&self) -> &FeasibleBox<T> {
        &self.feasible
    }

    pub fn consensus(&self) -> &Setpoints<T> {
        &self.consensus
    }

    pub fn desired(&self) -> &Setpoints<T> {
        &self.desired
    }

    pub fn radius(&self) -> T {
        self.radius
    }
}

/// Radius of the compromise ball for a unitless flexibility factor.
///
/// Flexibility 1 collapses the ball onto the consensus; 0 leaves the full
/// distance `d` so the agent need not move.
pub fn flexibility_to_radius<T: Scalar>(flexibility: T, d: T) -> Result<T> {
    if !(flexibility >= T::zero() && flexibility <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "flexibility {flexibility} outside [0, 1]"
        )));
    }
    if !d.is_finite() || d < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "distance {d} must be non-negative"
        )));
    }
    Ok((T::one() - flexibility) * d)
}

/// Minimizes the request's objective over `ball(consensus, radius) ∩ box`.
///
/// Projected gradient descent with a fixed step of one radius along the
/// normalized gradient. The projection onto the intersection uses Dykstra's
/// alternating projections followed by an exact repair step, so the result
/// always satisfies both constraints.
pub fn balanced_compromise<T: Scalar>(req: &CompromiseRequest<T>) -> Result<Setpoints<T>> {
    let c = &req.consensus;
    let r = req.radius;
    if r <= T::zero() {
        return Ok(c.clone());
    }
    // The desired point is the box optimum; if it fits in the ball it wins.
    if distance(&req.desired, c)? <= r {
        return Ok(req.desired.clone());
    }
    let g = &req.objective.gradient;
    let g_norm = g.norm();
    if g_norm == T::zero() {
        return Ok(c.clone());
    }
    let step = r / g_norm;
    let tol = T::of(MOVE_TOL).max(T::epsilon() * T::of(64.0));
    let mut x = c.clone();
    for _ in 0..MAX_ITERATIONS {
        let y = x.add_scaled(-step, g)?;
        let next = project_ball_box(&y, c, r, &req.feasible)?;
        let moved = distance(&next, &x)?;
        x = next;
        if moved < tol {
            break;
        }
    }
    Ok(x)
}

/// Projection of `y` onto `ball(center, radius) ∩ box` by Dykstra's method.
pub(crate) fn project_ball_box<T: Scalar>(
    y: &Setpoints<T>,
    center: &Setpoints<T>,
    radius: T,
    fs: &FeasibleBox<T>,
) -> Result<Setpoints<T>> {
    let tol = T::of(PROJECTION_TOL).max(T::epsilon() * T::of(8.0));
    let mut x = y.clone();
    let mut p = Setpoints::zeros(y.devices().clone());
    let mut q = Setpoints::zeros(y.devices().clone());
    for _ in 0..PROJECTION_ITERATIONS {
        let u = fs.project(&x.add_scaled(T::one(), &p)?)?;
        p = x.add_scaled(T::one(), &p)?.add_scaled(-T::one(), &u)?;
        let uq = u.add_scaled(T::one(), &q)?;
        let next = project_ball(&uq, center, radius)?;
        q = uq.add_scaled(-T::one(), &next)?;
        let change = distance(&next, &x)?;
        let gap = distance(&next, &u)?;
        x = next;
        if change < tol && gap < tol {
            break;
        }
    }
    repair(&x, center, radius, fs)
}

fn project_ball<T: Scalar>(
    y: &Setpoints<T>,
    center: &Setpoints<T>,
    radius: T,
) -> Result<Setpoints<T>> {
    let d = distance(y, center)?;
    if d <= radius {
        Ok(y.clone())
    } else {
        center.add_scaled(radius / d, &y.add_scaled(-T::one(), center)?)
    }
}

// Clamp into the box, then pull toward the (box-feasible) center until inside
// the ball. The segment stays in the box by convexity.
fn repair<T: Scalar>(
    x: &Setpoints<T>,
    center: &Setpoints<T>,
    radius: T,
    fs: &FeasibleBox<T>,
) -> Result<Setpoints<T>> {
    let boxed = fs.project(x)?;
    let d = distance(&boxed, center)?;
    if d <= radius {
        return Ok(boxed);
    }
    let pulled = center.add_scaled(radius / d, &boxed.add_scaled(-T::one(), center)?)?;
    fs.project(&pulled)
}
