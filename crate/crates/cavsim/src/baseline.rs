//! Human-driver baseline: psycho-physical car following in the Wiedemann-74
//! style, a fixed-time signal at the central intersection, and gap-acceptance
//! yielding at merges and the roundabout.

use crate::network::{UnknownApproach, ZoneSpec};
use serde::{Deserialize, Serialize};

/// Per-driver behavioral parameters. `z` is the driver's random factor,
/// drawn once per vehicle from the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    pub desired_speed: f64,
    /// Standstill additive part of the desired minimum gap, meters.
    pub ax: f64,
    pub bx_add: f64,
    pub bx_mult: f64,
    /// Driver random factor in [0, 1].
    pub z: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub emergency_decel: f64,
    /// Acceleration dither amplitude inside the following band.
    pub b_null: f64,
    /// Seconds of closing speed added to the perception threshold.
    pub perception_time: f64,
    /// Ratio of the following-band outer edge to the minimum-gap edge.
    pub sdx_factor: f64,
    /// Minimum acceptable time gap to a conflicting major-road vehicle.
    pub critical_gap: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            desired_speed: 7.0,
            ax: 2.0,
            bx_add: 2.0,
            bx_mult: 3.0,
            z: 0.5,
            max_accel: 3.0,
            comfort_decel: 3.0,
            emergency_decel: 6.0,
            b_null: 0.2,
            perception_time: 3.0,
            sdx_factor: 1.5,
            critical_gap: 3.0,
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.desired_speed > 0.0) {
            return Err("desired_speed must be positive".into());
        }
        if self.ax < 0.0 {
            return Err("ax must be nonnegative".into());
        }
        if self.bx_add < 0.0 || self.bx_mult < 0.0 {
            return Err("bx_add and bx_mult must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.z) {
            return Err(format!("driver random factor {} outside [0, 1]", self.z));
        }
        if !(self.max_accel > 0.0) {
            return Err("max_accel must be positive".into());
        }
        if !(self.comfort_decel > 0.0) || self.emergency_decel < self.comfort_decel {
            return Err("need emergency_decel >= comfort_decel > 0".into());
        }
        if self.b_null < 0.0 || self.perception_time < 0.0 || self.critical_gap < 0.0 {
            return Err("b_null, perception_time and critical_gap must be nonnegative".into());
        }
        if self.sdx_factor < 1.0 {
            return Err("sdx_factor must be at least 1".into());
        }
        Ok(())
    }

    /// Desired minimum following distance at the slower of the two speeds.
    pub fn abx(&self, v_follower: f64, v_leader: f64) -> f64 {
        let slower = v_follower.min(v_leader).max(0.0);
        self.ax + (self.bx_add + self.bx_mult * self.z) * slower.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderView {
    /// Front-to-rear distance to the leader (or virtual stop point), meters.
    pub gap: f64,
    pub speed: f64,
}

/// Car-following acceleration command.
///
/// Regimes, nearest first: a non-positive or sub-minimum gap triggers
/// emergency braking; a closing leader inside the perception range triggers
/// the deceleration that reaches the leader's speed right at the minimum gap,
/// capped at comfortable deceleration; inside the following band the driver
/// dithers around the leader's speed; otherwise the driver is free and pulls
/// toward the desired speed.
pub fn follow_accel(v: f64, leader: Option<LeaderView>, driver: &DriverParams, dt: f64) -> f64 {
    let Some(LeaderView { gap, speed: v_l }) = leader else {
        return free_accel(v, driver, dt);
    };
    if gap <= 0.0 {
        return if v > 0.0 { -driver.emergency_decel } else { 0.0 };
    }

    let dv = v - v_l;
    let bx = driver.bx_add + driver.bx_mult * driver.z;
    let slower = v.min(v_l).max(0.0);
    let abx = driver.ax + bx * slower.sqrt();
    let sdx = driver.ax + driver.sdx_factor * bx * slower.sqrt();

    if gap < abx {
        return if v > 0.0 { -driver.emergency_decel } else { 0.0 };
    }
    if dv > 0.0 && gap <= abx + driver.perception_time * dv {
        let u = -(dv * dv) / (2.0 * (gap - abx).max(1e-6));
        return u.max(-driver.comfort_decel);
    }
    if gap <= sdx {
        if v < 0.05 {
            return 0.0;
        }
        if dv > 0.0 {
            return -driver.b_null;
        }
        if v >= driver.desired_speed {
            return 0.0;
        }
        return driver.b_null;
    }
    free_accel(v, driver, dt)
}

fn free_accel(v: f64, driver: &DriverParams, dt: f64) -> f64 {
    if v < driver.desired_speed {
        let u = driver.max_accel * (1.0 - (v / driver.desired_speed).powi(4));
        u.min((driver.desired_speed - v) / dt)
    } else {
        ((driver.desired_speed - v) / dt).max(-driver.comfort_decel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Green,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub approaches: Vec<String>,
    pub green: f64,
    /// All-red clearance after this phase's green.
    pub inter_green: f64,
}

/// Fixed-time signal plan for one zone. Phases run in order and repeat with
/// period equal to the sum of all green and inter-green durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub zone: String,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub offset: f64,
}

impl SignalPlan {
    pub fn cycle(&self) -> f64 {
        self.phases.iter().map(|p| p.green + p.inter_green).sum()
    }

    /// Check the plan against the zone it controls: positive durations and
    /// every approach of the zone in exactly one phase.
    pub fn validate(&self, zone: &ZoneSpec) -> Result<(), String> {
        if self.phases.is_empty() {
            return Err(format!("signal plan for zone {} has no phases", self.zone));
        }
        for p in &self.phases {
            if !(p.green > 0.0) || p.inter_green < 0.0 {
                return Err(format!(
                    "signal plan for zone {}: green must be positive and inter_green nonnegative",
                    self.zone
                ));
            }
        }
        for ap in &zone.approaches {
            let uses = self
                .phases
                .iter()
                .flat_map(|p| p.approaches.iter())
                .filter(|a| **a == ap.id)
                .count();
            if uses != 1 {
                return Err(format!(
                    "signal plan for zone {}: approach {} appears {} times, expected once",
                    self.zone, ap.id, uses
                ));
            }
        }
        for p in &self.phases {
            for a in &p.approaches {
                if zone.approach_index(a).is_none() {
                    return Err(format!(
                        "signal plan for zone {}: unknown approach {}",
                        self.zone, a
                    ));
                }
            }
        }
        Ok(())
    }

    /// Signal aspect for an approach at time `t`, plus seconds until it
    /// changes.
    pub fn signal_state(&self, approach: &str, t: f64) -> Result<(SignalState, f64), UnknownApproach> {
        let cycle = self.cycle();
        let t_mod = (t - self.offset).rem_euclid(cycle);
        let mut start = 0.0;
        let mut window = None;
        for p in &self.phases {
            if p.approaches.iter().any(|a| a == approach) {
                window = Some((start, start + p.green));
                break;
            }
            start += p.green + p.inter_green;
        }
        let Some((green_start, green_end)) = window else {
            return Err(UnknownApproach { zone: self.zone.clone(), approach: approach.to_string() });
        };
        if t_mod >= green_start && t_mod < green_end {
            Ok((SignalState::Green, green_end - t_mod))
        } else if t_mod < green_start {
            Ok((SignalState::Red, green_start - t_mod))
        } else {
            Ok((SignalState::Red, green_start + cycle - t_mod))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum YieldDecision {
    Proceed,
    Hold,
}

/// A conflicting major-road vehicle as seen from the yield line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorView {
    /// Distance from the vehicle's front to its conflict-zone entry, meters.
    pub distance_to_conflict: f64,
    pub speed: f64,
}

/// Gap acceptance at a yield line: proceed only when the conflict zone is
/// clear and every conflicting major-road vehicle is more than the critical
/// gap away in time. Stopped majors short of the zone do not block.
pub fn yield_decision(
    majors: &[MajorView],
    zone_occupied: bool,
    critical_gap: f64,
) -> YieldDecision {
    if zone_occupied {
        return YieldDecision::Hold;
    }
    for m in majors {
        if m.distance_to_conflict <= 0.0 {
            return YieldDecision::Hold;
        }
        if m.speed > 0.01 && m.distance_to_conflict / m.speed <= critical_gap {
            return YieldDecision::Hold;
        }
    }
    YieldDecision::Proceed
}
