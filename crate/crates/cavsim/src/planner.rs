//! Minimum-effort trajectory planning for control-zone approaches.
//!
//! Fixing position and speed at both ends of a horizon and minimizing
//! half the integral of squared acceleration gives a linear control
//! u(t) = a·t + b, hence a cubic position profile. The four coefficients come
//! from a closed-form elimination of the 4x4 boundary system.

use crate::dynamics::VehicleParams;
use serde::Serialize;
use thiserror::Error;

/// Smallest usable planning horizon, seconds.
pub const MIN_HORIZON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundary {
    pub p0: f64,
    pub v0: f64,
    pub pf: f64,
    pub vf: f64,
}

/// Cubic position trajectory valid on [t0, tm], with coefficients in absolute
/// time: p(t) = a t^3/6 + b t^2/2 + c t + d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPlan {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t0: f64,
    pub tm: f64,
    pub boundary: Boundary,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("planning horizon {0} s is below the {MIN_HORIZON} s minimum")]
    DegenerateHorizon(f64),
    #[error("plan solve produced non-finite or non-reproducing coefficients")]
    Numeric,
    #[error("t={t} outside plan window [{t0}, {tm}]")]
    OutOfWindow { t: f64, t0: f64, tm: f64 },
}

/// Solve for the trajectory meeting p(t0)=p0, v(t0)=v0, p(tm)=pf, v(tm)=vf.
pub fn solve_boundary(
    t0: f64,
    tm: f64,
    p0: f64,
    pf: f64,
    v0: f64,
    vf: f64,
) -> Result<TrajectoryPlan, PlanError> {
    let horizon = tm - t0;
    if !horizon.is_finite() || horizon < MIN_HORIZON {
        return Err(PlanError::DegenerateHorizon(horizon));
    }

    // Eliminate in shifted time so the elimination is independent of t0:
    // with q = t - t0, the two endpoint conditions at q = T reduce to
    //   a T^2/2 + b T   = vf - v0
    //   a T^3/6 + b T^2/2 = pf - p0 - v0 T
    // which solve directly for a, then b.
    let t = horizon;
    let dv = vf - v0;
    let dp = pf - p0 - v0 * t;
    let a = (6.0 * dv * t - 12.0 * dp) / (t * t * t);
    let b_shifted = (dv - 0.5 * a * t * t) / t;

    // Unshift to absolute-time coefficients, then anchor c and d on the exact
    // initial conditions.
    let b = b_shifted - a * t0;
    let c = v0 - 0.5 * a * t0 * t0 - b * t0;
    let d = p0 - (a * t0 * t0 * t0 / 6.0 + 0.5 * b * t0 * t0 + c * t0);

    let plan = TrajectoryPlan { a, b, c, d, t0, tm, boundary: Boundary { p0, v0, pf, vf } };
    if ![a, b, c, d].iter().all(|x| x.is_finite()) || !plan.reproduces_boundary(1e-6) {
        return Err(PlanError::Numeric);
    }
    Ok(plan)
}

impl TrajectoryPlan {
    /// Position, speed, and acceleration at time `t` within the window.
    pub fn eval(&self, t: f64) -> Result<(f64, f64, f64), PlanError> {
        if t < self.t0 - 1e-9 || t > self.tm + 1e-9 {
            return Err(PlanError::OutOfWindow { t, t0: self.t0, tm: self.tm });
        }
        Ok(self.eval_unchecked(t))
    }

    pub fn eval_unchecked(&self, t: f64) -> (f64, f64, f64) {
        let p = ((self.a / 6.0 * t + 0.5 * self.b) * t + self.c) * t + self.d;
        let v = (0.5 * self.a * t + self.b) * t + self.c;
        let u = self.a * t + self.b;
        (p, v, u)
    }

    pub fn position(&self, t: f64) -> f64 {
        self.eval_unchecked(t).0
    }

    pub fn speed(&self, t: f64) -> f64 {
        self.eval_unchecked(t).1
    }

    fn reproduces_boundary(&self, tol: f64) -> bool {
        let (p0, v0, _) = self.eval_unchecked(self.t0);
        let (pf, vf, _) = self.eval_unchecked(self.tm);
        (p0 - self.boundary.p0).abs() <= tol
            && (v0 - self.boundary.v0).abs() <= tol
            && (pf - self.boundary.pf).abs() <= tol
            && (vf - self.boundary.vf).abs() <= tol
    }

    /// Half the integral of squared acceleration over the window.
    pub fn control_cost(&self) -> f64 {
        let t = self.tm - self.t0;
        let u0 = self.a * self.t0 + self.b;
        0.5 * (self.a * self.a * t * t * t / 3.0 + self.a * u0 * t * t + u0 * u0 * t)
    }

    /// Extrema of the speed profile over the window: ((t_min, v_min), (t_max, v_max)).
    /// Speed is quadratic in t, so the extrema sit at the endpoints or the
    /// vertex of the parabola.
    pub fn speed_extrema(&self) -> ((f64, f64), (f64, f64)) {
        let mut candidates = vec![self.t0, self.tm];
        if self.a != 0.0 {
            let vertex = -self.b / self.a;
            if vertex > self.t0 && vertex < self.tm {
                candidates.push(vertex);
            }
        }
        let mut min = (self.t0, f64::INFINITY);
        let mut max = (self.t0, f64::NEG_INFINITY);
        for t in candidates {
            let v = self.speed(t);
            if v < min.1 {
                min = (t, v);
            }
            if v > max.1 {
                max = (t, v);
            }
        }
        (min, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    SpeedMin,
    SpeedMax,
    AccelMin,
    AccelMax,
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Bound::SpeedMin => "v_min",
            Bound::SpeedMax => "v_max",
            Bound::AccelMin => "u_min",
            Bound::AccelMax => "u_max",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundViolation {
    pub bound: Bound,
    /// Time of the worst excursion.
    pub t: f64,
    /// Value reached there.
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FeasibilityReport {
    pub violations: Vec<BoundViolation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the plan against speed and acceleration bounds. Speed extrema are
/// found analytically (quadratic vertex); acceleration is linear so its
/// extremes sit at the window endpoints.
pub fn check_feasibility(plan: &TrajectoryPlan, params: &VehicleParams) -> FeasibilityReport {
    let mut violations = Vec::new();
    let ((t_vmin, v_min), (t_vmax, v_max)) = plan.speed_extrema();
    if v_min < params.v_min {
        violations.push(BoundViolation { bound: Bound::SpeedMin, t: t_vmin, value: v_min, limit: params.v_min });
    }
    if v_max > params.v_max {
        violations.push(BoundViolation { bound: Bound::SpeedMax, t: t_vmax, value: v_max, limit: params.v_max });
    }

    let u0 = plan.a * plan.t0 + plan.b;
    let um = plan.a * plan.tm + plan.b;
    let (u_lo, t_lo, u_hi, t_hi) = if u0 <= um {
        (u0, plan.t0, um, plan.tm)
    } else {
        (um, plan.tm, u0, plan.t0)
    };
    if u_lo < params.u_min {
        violations.push(BoundViolation { bound: Bound::AccelMin, t: t_lo, value: u_lo, limit: params.u_min });
    }
    if u_hi > params.u_max {
        violations.push(BoundViolation { bound: Bound::AccelMax, t: t_hi, value: u_hi, limit: params.u_max });
    }
    FeasibilityReport { violations }
}

/// Sample the rear-end constraint between a follower plan and its same-lane
/// predecessor over the overlap of their windows. Both plans must share a
/// position datum. Returns the instants (and margins) where the spacing drops
/// below the follower's safe distance.
pub fn verify_rear_end(
    follower: &TrajectoryPlan,
    leader: &TrajectoryPlan,
    params: &VehicleParams,
    sample_dt: f64,
) -> Vec<(f64, f64)> {
    let start = follower.t0.max(leader.t0);
    let end = follower.tm.min(leader.tm);
    if end <= start {
        return Vec::new();
    }
    let mut violations = Vec::new();
    let steps = ((end - start) / sample_dt).ceil() as usize;
    for k in 0..=steps {
        let t = (start + k as f64 * sample_dt).min(end);
        let (pi, vi, _) = follower.eval_unchecked(t);
        let pk = leader.position(t);
        let margin = (pk - pi) - crate::dynamics::safe_distance(vi, params);
        if margin < 0.0 {
            violations.push((t, margin));
        }
        if t >= end {
            break;
        }
    }
    violations
}
