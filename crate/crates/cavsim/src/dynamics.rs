//! Double-integrator vehicle kinematics with exact step integration, plus the
//! speed-dependent safe following distance used by rear-end checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub u_min: f64,
    pub u_max: f64,
    /// Minimum speed enforced inside control zones, m/s.
    pub v_min: f64,
    pub v_max: f64,
    pub desired_speed: f64,
    /// Standstill distance for the safe-following rule, meters.
    pub standstill_gap: f64,
    /// Minimum safe time gap, seconds.
    pub time_gap: f64,
    pub body_length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            u_min: -3.0,
            u_max: 3.0,
            v_min: 2.0,
            v_max: 8.33,
            desired_speed: 7.0,
            standstill_gap: 6.0,
            time_gap: 0.5,
            body_length: 4.5,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(format!("acceleration bounds [{}, {}] must straddle 0", self.u_min, self.u_max));
        }
        if !(0.0 <= self.v_min && self.v_min < self.desired_speed && self.desired_speed <= self.v_max) {
            return Err(format!(
                "speeds must satisfy 0 <= v_min ({}) < desired ({}) <= v_max ({})",
                self.v_min, self.desired_speed, self.v_max
            ));
        }
        if self.standstill_gap < 0.0 {
            return Err("standstill gap must be >= 0".into());
        }
        if !(self.time_gap > 0.0) {
            return Err("time gap must be > 0".into());
        }
        if self.body_length < 0.0 {
            return Err("body length must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub route: usize,
    /// Cumulative arc length traveled along the route, meters. Never wraps;
    /// monotonically nondecreasing.
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
    pub t: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("rear-end check requires a same-lane pair with the leader ahead")]
    NotSameLane,
}

/// Advance a state by `dt` under constant acceleration `u`, integrating the
/// double integrator exactly. If the speed would cross zero the step clips
/// there and the vehicle stays stopped for the remainder (no reversing).
pub fn step(state: VehicleState, u: f64, dt: f64) -> Result<VehicleState, DynamicsError> {
    if !u.is_finite() {
        return Err(DynamicsError::NonFinite("acceleration"));
    }
    if !dt.is_finite() || !state.pos.is_finite() || !state.speed.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    debug_assert!(dt > 0.0);
    debug_assert!(state.speed >= 0.0);

    let (pos, speed) = if u < 0.0 && state.speed + u * dt < 0.0 {
        // Time at which the speed reaches zero; stopped afterwards.
        let t_stop = -state.speed / u;
        (state.pos + state.speed * t_stop + 0.5 * u * t_stop * t_stop, 0.0)
    } else if state.speed == 0.0 && u <= 0.0 {
        (state.pos, 0.0)
    } else {
        (state.pos + state.speed * dt + 0.5 * u * dt * dt, state.speed + u * dt)
    };

    Ok(VehicleState { pos, speed, accel: u, t: state.t + dt, ..state })
}

/// Safe following distance at speed `v`: standstill gap plus time-gap headway.
pub fn safe_distance(v: f64, params: &VehicleParams) -> f64 {
    params.standstill_gap + params.time_gap * v
}

/// Margin of the rear-end constraint for a follower/leader spacing measured
/// front-to-front along the lane. Negative margin means violation.
pub fn rear_end_margin(spacing: f64, follower_speed: f64, params: &VehicleParams) -> f64 {
    spacing - safe_distance(follower_speed, params)
}

/// Rear-end constraint between two states on the same route with the leader
/// ahead by route order.
pub fn rear_end_gap_ok(
    follower: &VehicleState,
    leader: &VehicleState,
    params: &VehicleParams,
) -> Result<(f64, bool), DynamicsError> {
    if follower.route != leader.route || leader.pos < follower.pos {
        return Err(DynamicsError::NotSameLane);
    }
    let margin = rear_end_margin(leader.pos - follower.pos, follower.speed, params);
    Ok((margin, margin >= 0.0))
}

#[cfg(test)]
pub(crate) fn test_params() -> VehicleParams {
    VehicleParams {
        u_min: -3.0,
        u_max: 3.0,
        v_min: 2.0,
        v_max: 8.33,
        desired_speed: 7.0,
        standstill_gap: 1.0,
        time_gap: 0.5,
        body_length: 4.5,
    }
}
