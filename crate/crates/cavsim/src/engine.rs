//! Fixed-step simulation loop for both control modes.
//!
//! Each tick: compute every vehicle's control from a frozen snapshot, record
//! the trace row, integrate, then process zone-boundary transitions in a
//! fixed order (conflict exits, conflict entries, control-zone entries).
//! In coordinated mode a control-zone entry registers the vehicle with the
//! zone's coordinator and attaches a trajectory plan that the vehicle then
//! tracks with position authority; the conflict zone itself is traversed at
//! its imposed speed. In baseline mode vehicles car-follow everywhere, with
//! red signals and yield decisions injected as virtual stationary leaders at
//! the stop bar.

use crate::baseline::{follow_accel, yield_decision, DriverParams, LeaderView, MajorView, SignalState, YieldDecision};
use crate::coordinator::{Arrival, CoordinationError, Coordinator, OccupancyLedger, QueueEntry};
use crate::dynamics::{step, VehicleState};
use crate::network::{Network, ZoneContext};
use crate::planner::{check_feasibility, solve_boundary, verify_rear_end, Bound, PlanError, TrajectoryPlan};
use crate::scenario::{Mode, Scenario};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;
use thiserror::Error;

/// How far ahead a vehicle scans for a leader, meters.
pub const LOOKAHEAD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub vehicle: u32,
    pub route: usize,
    /// Cumulative distance traveled along the route (never wraps).
    pub p: f64,
    pub v: f64,
    pub u: f64,
    /// Zone index when inside a control or conflict zone.
    pub zone: Option<usize>,
    pub queue_index: Option<u32>,
    pub t_zm: Option<f64>,
    pub flags: Vec<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Registered {
        t: f64,
        vehicle: u32,
        zone: String,
        approach: String,
        queue_index: u32,
        t_conflict_entry: f64,
        t_conflict_exit: f64,
        plan_cost: f64,
    },
    ConflictEntry { t: f64, vehicle: u32, zone: String },
    ConflictExit { t: f64, vehicle: u32, zone: String },
    /// A new plan undercuts the rear-end margin against its same-lane
    /// predecessor somewhere in the shared window.
    RearEndPlanWarning {
        t: f64,
        vehicle: u32,
        predecessor: u32,
        zone: String,
        worst_margin: f64,
        at_time: f64,
    },
    Collision { t: f64, follower: u32, leader: u32, gap: f64 },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("vehicle {vehicle} in zone {zone}: infeasible plan, {bound} violated: value {value:.3} vs limit {limit:.3} at t={at:.3}")]
    InfeasiblePlan { vehicle: u32, zone: String, bound: Bound, value: f64, limit: f64, at: f64 },
    #[error("vehicle {vehicle} in zone {zone}: {source}")]
    Planning {
        vehicle: u32,
        zone: String,
        #[source]
        source: PlanError,
    },
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
}

#[derive(Debug)]
pub struct RunOutput {
    pub mode: Mode,
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<Event>,
    /// One ledger per zone, in network zone order.
    pub ledgers: Vec<(String, OccupancyLedger)>,
}

#[derive(Debug, Clone)]
enum Regime {
    Free,
    Plan {
        zone: usize,
        approach: usize,
        plan: TrajectoryPlan,
        /// Cumulative position of the control-zone entry.
        entry_pos: f64,
        queue_index: u32,
    },
    Conflict {
        zone: usize,
        speed: f64,
        /// Cumulative position of the conflict-zone exit.
        exit_pos: f64,
        /// Exit instant implied by the imposed speed; recorded in the ledger
        /// instead of re-deriving it from positions, which would add rounding
        /// noise to an exact quantity.
        t_exit: f64,
        queue_index: u32,
        t_zm: f64,
    },
}

#[derive(Debug)]
struct Veh {
    st: VehicleState,
    driver: DriverParams,
    regime: Regime,
}

struct Control {
    u: f64,
    flags: Vec<&'static str>,
}

/// Run one mode over a resolved scenario. `seed` feeds the per-driver random
/// factors and any same-tick arrival tie-breaks; identical inputs give
/// byte-identical outputs.
pub fn run(sc: &Scenario, mode: Mode, seed: u64) -> Result<RunOutput, RunError> {
    let dt = sc.config.run.dt;
    let duration = sc.config.run.duration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut vehicles: Vec<Veh> = sc
        .fleet
        .iter()
        .map(|f| Veh {
            st: VehicleState { id: f.id, route: f.route, pos: f.position, speed: f.speed, accel: 0.0, t: 0.0 },
            driver: DriverParams { z: rng.random::<f64>(), ..sc.config.driver.clone() },
            regime: Regime::Free,
        })
        .collect();
    // Trace rows go out in ascending vehicle id order within each tick.
    let mut id_order: Vec<usize> = (0..vehicles.len()).collect();
    id_order.sort_by_key(|&i| vehicles[i].st.id);

    let mut coordinators: Vec<Coordinator> =
        sc.network.zones.iter().map(|z| Coordinator::new(&z.id)).collect();
    let mut events = Vec::new();
    let mut trace = Vec::new();
    let mut colliding: std::collections::HashSet<(u32, u32)> = Default::default();

    let ticks = (duration / dt).round() as usize;
    for k in 0..=ticks {
        let t = k as f64 * dt;
        let controls = compute_controls(sc, mode, &vehicles, t, dt);
        for &i in &id_order {
            trace.push(record(sc, &vehicles[i], &controls[i], t));
        }
        if k == ticks {
            break;
        }
        advance(sc, mode, &mut vehicles, &controls, t, dt, &mut coordinators, &mut events, &mut rng)?;
        detect_collisions(sc, &vehicles, t + dt, &mut colliding, &mut events);
    }

    let ledgers = sc
        .network
        .zones
        .iter()
        .zip(coordinators)
        .map(|(z, c)| (z.id.clone(), c.ledger))
        .collect();
    Ok(RunOutput { mode, seed, trace, events, ledgers })
}

fn record(sc: &Scenario, veh: &Veh, control: &Control, t: f64) -> TraceRecord {
    let (zone, queue_index, t_zm) = match &veh.regime {
        Regime::Plan { zone, queue_index, plan, .. } => {
            (Some(*zone), Some(*queue_index), Some(plan.tm))
        }
        Regime::Conflict { zone, queue_index, t_zm, .. } => {
            (Some(*zone), Some(*queue_index), Some(*t_zm))
        }
        Regime::Free => {
            let route = &sc.network.routes[veh.st.route];
            match sc.network.zone_context(veh.st.route, route.wrap(veh.st.pos)) {
                ZoneContext::ControlZone { zone, .. } | ZoneContext::ConflictZone { zone, .. } => {
                    (Some(zone), None, None)
                }
                ZoneContext::OpenRoad => (None, None, None),
            }
        }
    };
    TraceRecord {
        t,
        vehicle: veh.st.id,
        route: veh.st.route,
        p: veh.st.pos,
        v: veh.st.speed,
        u: control.u,
        zone,
        queue_index,
        t_zm,
        flags: control.flags.clone(),
    }
}

/// Nearest vehicle ahead along the subject's own route within `lookahead`
/// meters, walking shared segments so merging traffic is seen. Returns the
/// path distance (front to front) and the leader's speed and index.
pub fn snapshot_leader(
    net: &Network,
    states: &[VehicleState],
    subject: usize,
    lookahead: f64,
) -> Option<(f64, f64, usize)> {
    let me = &states[subject];
    let route = &net.routes[me.route];
    let nsegs = route.segments.len();
    let (k0, x0) = route.locate(route.wrap(me.pos));

    let mut best: Option<(f64, f64, usize)> = None;
    let mut base = 0.0;
    for hop in 0..=nsegs {
        if hop > 0 && !route.is_loop && k0 + hop >= nsegs {
            break;
        }
        let k = (k0 + hop) % nsegs;
        let gseg = route.segments[k];
        let from_x = if hop == 0 { x0 } else { 0.0 };
        for (j, other) in states.iter().enumerate() {
            if j == subject {
                continue;
            }
            let or = &net.routes[other.route];
            let (ok, ox) = or.locate(or.wrap(other.pos));
            if or.segments[ok] != gseg {
                continue;
            }
            let delta = base + ox - from_x;
            if delta <= 0.0 || delta > lookahead {
                continue;
            }
            if best.map_or(true, |(d, _, _)| delta < d) {
                best = Some((delta, other.speed, j));
            }
        }
        base += net.segments[gseg].length() - from_x;
        if base > lookahead || best.is_some() {
            break;
        }
    }
    best
}

fn compute_controls(sc: &Scenario, mode: Mode, vehicles: &[Veh], t: f64, dt: f64) -> Vec<Control> {
    let states: Vec<VehicleState> = vehicles.iter().map(|v| v.st).collect();
    let net = &sc.network;

    // Conflict-zone occupancy per zone, from current positions, for baseline
    // yield decisions.
    let mut conflict_occupancy: Vec<Vec<usize>> = vec![Vec::new(); net.zones.len()];
    if mode == Mode::Baseline {
        for (i, s) in states.iter().enumerate() {
            let route = &net.routes[s.route];
            if let ZoneContext::ConflictZone { zone, .. } =
                net.zone_context(s.route, route.wrap(s.pos))
            {
                conflict_occupancy[zone].push(i);
            }
        }
    }

    vehicles
        .iter()
        .enumerate()
        .map(|(i, veh)| match &veh.regime {
            Regime::Plan { plan, .. } => {
                let tq = t.clamp(plan.t0, plan.tm);
                let (_, _, u) = plan.eval_unchecked(tq);
                Control { u, flags: Vec::new() }
            }
            Regime::Conflict { .. } => Control { u: 0.0, flags: Vec::new() },
            Regime::Free => {
                let mut flags = Vec::new();
                let real = snapshot_leader(net, &states, i, LOOKAHEAD)
                    .map(|(delta, speed, _)| (delta - sc.config.vehicle.body_length, speed));
                let mut leader = real;

                if mode == Mode::Baseline {
                    if let Some((bar_gap, flag)) =
                        baseline_hold(sc, &states, &conflict_occupancy, i, t)
                    {
                        if leader.map_or(true, |(g, _)| bar_gap < g) {
                            leader = Some((bar_gap, 0.0));
                            flags.push(flag);
                        }
                    }
                }

                let view = leader.map(|(gap, speed)| LeaderView { gap, speed });
                let u = follow_accel(veh.st.speed, view, &veh.driver, dt);
                Control { u, flags }
            }
        })
        .collect()
}

/// Distance to a stop bar the vehicle must hold at, if any: a red signal or a
/// failed gap acceptance at the subject's current control zone.
fn baseline_hold(
    sc: &Scenario,
    states: &[VehicleState],
    conflict_occupancy: &[Vec<usize>],
    subject: usize,
    t: f64,
) -> Option<(f64, &'static str)> {
    let net = &sc.network;
    let s = &states[subject];
    let route = &net.routes[s.route];
    let ZoneContext::ControlZone { zone, approach, distance_into, .. } =
        net.zone_context(s.route, route.wrap(s.pos))
    else {
        return None;
    };
    let spec = &net.zones[zone];
    let bar_gap = spec.approaches[approach].control_length - distance_into;

    if let Some(plan) = &sc.signals[zone] {
        let (state, _) = plan
            .signal_state(&spec.approaches[approach].id, t)
            .expect("validated signal plan covers all approaches");
        if state == SignalState::Red {
            return Some((bar_gap, "signal_held"));
        }
        return None;
    }

    // Unsignalized: non-priority approaches yield to crossing traffic.
    if approach == sc.zone_major[zone] {
        return None;
    }
    let crossing = |other: usize| {
        spec.relation(approach, other) == crate::network::ConflictRelation::Crossing
    };
    let occupied = conflict_occupancy[zone].iter().any(|&j| {
        let or = &net.routes[states[j].route];
        match net.zone_context(states[j].route, or.wrap(states[j].pos)) {
            ZoneContext::ConflictZone { approach: a, .. } => crossing(a),
            _ => false,
        }
    });
    let mut majors = Vec::new();
    for (j, other) in states.iter().enumerate() {
        if j == subject {
            continue;
        }
        let or = &net.routes[other.route];
        if let ZoneContext::ControlZone { zone: z, approach: a, distance_into: d, .. } =
            net.zone_context(other.route, or.wrap(other.pos))
        {
            if z == zone && crossing(a) {
                majors.push(MajorView {
                    distance_to_conflict: net.zones[zone].approaches[a].control_length - d,
                    speed: other.speed,
                });
            }
        }
    }
    if yield_decision(&majors, occupied, sc.config.driver.critical_gap) == YieldDecision::Hold {
        Some((bar_gap, "yield_held"))
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
fn advance(
    sc: &Scenario,
    mode: Mode,
    vehicles: &mut [Veh],
    controls: &[Control],
    t: f64,
    dt: f64,
    coordinators: &mut [Coordinator],
    events: &mut Vec<Event>,
    rng: &mut ChaCha8Rng,
) -> Result<(), RunError> {
    let net = &sc.network;
    // (vehicle index, exact exit time)
    let mut conflict_exits: Vec<(usize, f64)> = Vec::new();
    // (vehicle index, zone, conflict entry time)
    let mut conflict_entries: Vec<(usize, usize, f64)> = Vec::new();
    // per zone: arrivals at the control boundary this tick
    let mut zone_arrivals: Vec<Vec<(usize, usize, Arrival)>> = vec![Vec::new(); net.zones.len()];

    for (i, veh) in vehicles.iter_mut().enumerate() {
        let u = controls[i].u;
        match veh.regime.clone() {
            Regime::Free => {
                let before = veh.st.pos;
                veh.st = step(veh.st, u, dt).expect("dynamics inputs are finite");
                veh.st.t = t + dt;
                if mode == Mode::Optimal {
                    if let Some((ci, boundary)) = crossed_control_entry(net, veh.st.route, before, veh.st.pos) {
                        let crossing = &net.routes[veh.st.route].crossings[ci];
                        let frac = if veh.st.pos > before {
                            (boundary - before) / (veh.st.pos - before)
                        } else {
                            0.0
                        };
                        let t_star = t + frac * dt;
                        let v_star = (veh.st.speed - u * (dt - frac * dt)).max(0.0);
                        zone_arrivals[crossing.zone].push((
                            i,
                            ci,
                            Arrival {
                                vehicle: veh.st.id,
                                approach: crossing.approach,
                                t: t_star,
                                position: 0.0,
                                speed: v_star,
                            },
                        ));
                    }
                }
            }
            Regime::Plan { zone, approach, plan, entry_pos, queue_index } => {
                let t_next = t + dt;
                if t_next < plan.tm {
                    let (p, v, _) = plan.eval_unchecked(t_next);
                    veh.st.pos = entry_pos + p;
                    veh.st.speed = v;
                    veh.st.accel = u;
                    veh.st.t = t_next;
                } else {
                    // The plan window closed inside this tick: the vehicle is
                    // at the conflict entry at tm, then proceeds at the
                    // imposed speed.
                    let ap = &net.zones[zone].approaches[approach];
                    let vz = ap.conflict_speed;
                    let l = ap.control_length;
                    veh.st.pos = entry_pos + l + vz * (t_next - plan.tm);
                    veh.st.speed = vz;
                    veh.st.accel = 0.0;
                    veh.st.t = t_next;
                    conflict_entries.push((i, zone, plan.tm));
                    veh.regime = Regime::Conflict {
                        zone,
                        speed: vz,
                        exit_pos: entry_pos + l + ap.conflict_length,
                        t_exit: plan.tm + ap.conflict_length / ap.conflict_speed,
                        queue_index,
                        t_zm: plan.tm,
                    };
                }
            }
            Regime::Conflict { speed, exit_pos, t_exit, .. } => {
                let before = veh.st.pos;
                veh.st.pos += speed * dt;
                veh.st.speed = speed;
                veh.st.accel = 0.0;
                veh.st.t = t + dt;
                if before < exit_pos && veh.st.pos >= exit_pos {
                    conflict_exits.push((i, t_exit));
                }
            }
        }
    }

    // Conflict exits release queue slots before this tick's entries register.
    conflict_exits.sort_by(|a, b| {
        let (va, vb) = (&vehicles[a.0].st, &vehicles[b.0].st);
        va.route.cmp(&vb.route).then(vb.pos.total_cmp(&va.pos)).then(va.id.cmp(&vb.id))
    });
    for (i, t_exit) in conflict_exits {
        let Regime::Conflict { zone, speed, .. } = vehicles[i].regime.clone() else {
            unreachable!("exit collected from conflict regime")
        };
        coordinators[zone].release(vehicles[i].st.id, t_exit)?;
        events.push(Event::ConflictExit {
            t: t_exit,
            vehicle: vehicles[i].st.id,
            zone: net.zones[zone].id.clone(),
        });
        vehicles[i].st.speed = speed;
        vehicles[i].regime = Regime::Free;
    }

    for (i, zone, t_zm) in conflict_entries {
        coordinators[zone].record_conflict_entry(vehicles[i].st.id, t_zm);
        events.push(Event::ConflictEntry {
            t: t_zm,
            vehicle: vehicles[i].st.id,
            zone: net.zones[zone].id.clone(),
        });
    }

    for (zi, mut batch) in zone_arrivals.into_iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        batch.sort_by(|a, b| {
            let (va, vb) = (&vehicles[a.0].st, &vehicles[b.0].st);
            va.route.cmp(&vb.route).then(vb.pos.total_cmp(&va.pos)).then(va.id.cmp(&vb.id))
        });
        let by_vehicle: std::collections::HashMap<u32, (usize, usize)> =
            batch.iter().map(|(i, ci, a)| (a.vehicle, (*i, *ci))).collect();
        let arrivals: Vec<Arrival> = batch.iter().map(|(_, _, a)| *a).collect();
        let entries = coordinators[zi]
            .register_arrivals(arrivals, rng, &net.zones[zi], &sc.config.vehicle)?
            .into_iter()
            .collect::<Vec<_>>();
        for entry in entries {
            let (i, ci) = by_vehicle[&entry.vehicle];
            attach_plan(sc, vehicles, i, ci, zi, &entry, events, dt)?;
        }
    }
    Ok(())
}

/// First control-zone entry boundary crossed while moving from `before` to
/// `after` (cumulative positions). Returns (crossing index, boundary as a
/// cumulative position).
fn crossed_control_entry(net: &Network, route: usize, before: f64, after: f64) -> Option<(usize, f64)> {
    let r = &net.routes[route];
    if after <= before {
        return None;
    }
    let len = r.total_length();
    let mut hit: Option<(usize, f64)> = None;
    for (ci, c) in r.crossings.iter().enumerate() {
        let boundary = if r.is_loop {
            let ahead = (c.control_entry - r.wrap(before)).rem_euclid(len);
            before + ahead
        } else {
            c.control_entry
        };
        if boundary > before && boundary <= after && hit.map_or(true, |(_, b)| boundary < b) {
            hit = Some((ci, boundary));
        }
    }
    hit
}

#[allow(clippy::too_many_arguments)]
fn attach_plan(
    sc: &Scenario,
    vehicles: &mut [Veh],
    i: usize,
    crossing_idx: usize,
    zone: usize,
    entry: &QueueEntry,
    events: &mut Vec<Event>,
    dt: f64,
) -> Result<(), RunError> {
    let net = &sc.network;
    let zone_id = net.zones[zone].id.clone();
    let ap = &net.zones[zone].approaches[entry.approach];
    let vehicle = vehicles[i].st.id;

    let plan = solve_boundary(
        entry.t_control_entry,
        entry.t_conflict_entry,
        0.0,
        ap.control_length,
        entry.entry_speed,
        ap.conflict_speed,
    )
    .map_err(|source| RunError::Planning { vehicle, zone: zone_id.clone(), source })?;

    let feasibility = check_feasibility(&plan, &sc.config.vehicle);
    if let Some(v) = feasibility.violations.first() {
        return Err(RunError::InfeasiblePlan {
            vehicle,
            zone: zone_id,
            bound: v.bound,
            value: v.value,
            limit: v.limit,
            at: v.t,
        });
    }

    let route = &net.routes[vehicles[i].st.route];
    let crossing = &route.crossings[crossing_idx];
    // Cumulative position of this lap's control entry: the vehicle has just
    // passed it, so walk back from the current wrapped offset.
    let back = (route.wrap(vehicles[i].st.pos) - crossing.control_entry).rem_euclid(route.total_length());
    let entry_pos = vehicles[i].st.pos - back;

    // Rear-end audit against the same-lane predecessor's active plan, in a
    // shared cumulative frame.
    if let Some(&pred_id) = entry.info.same_lane.last() {
        if let Some(j) = vehicles.iter().position(|v| v.st.id == pred_id) {
            if let Regime::Plan { plan: pred_plan, entry_pos: pred_entry, .. } = &vehicles[j].regime {
                let shift = pred_entry - entry_pos;
                let shifted = TrajectoryPlan {
                    d: pred_plan.d + shift,
                    boundary: crate::planner::Boundary {
                        p0: pred_plan.boundary.p0 + shift,
                        pf: pred_plan.boundary.pf + shift,
                        ..pred_plan.boundary
                    },
                    ..*pred_plan
                };
                let violations = verify_rear_end(&plan, &shifted, &sc.config.vehicle, dt);
                if let Some(&(at_time, worst)) = violations
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                {
                    events.push(Event::RearEndPlanWarning {
                        t: entry.t_control_entry,
                        vehicle,
                        predecessor: pred_id,
                        zone: zone_id.clone(),
                        worst_margin: worst,
                        at_time,
                    });
                }
            }
        }
    }

    events.push(Event::Registered {
        t: entry.t_control_entry,
        vehicle,
        zone: zone_id,
        approach: ap.id.clone(),
        queue_index: entry.index,
        t_conflict_entry: entry.t_conflict_entry,
        t_conflict_exit: entry.t_conflict_exit,
        plan_cost: plan.control_cost(),
    });

    vehicles[i].regime = Regime::Plan {
        zone,
        approach: entry.approach,
        plan,
        entry_pos,
        queue_index: entry.index,
    };
    Ok(())
}

fn detect_collisions(
    sc: &Scenario,
    vehicles: &[Veh],
    t: f64,
    colliding: &mut std::collections::HashSet<(u32, u32)>,
    events: &mut Vec<Event>,
) {
    let states: Vec<VehicleState> = vehicles.iter().map(|v| v.st).collect();
    let body = sc.config.vehicle.body_length;
    let mut current: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..states.len() {
        if let Some((delta, _, j)) = snapshot_leader(&sc.network, &states, i, body + 0.5) {
            if delta <= body && co_located(&sc.network, &states[i], &states[j]) {
                current.push((states[i].id, states[j].id, delta - body));
            }
        }
    }
    let now: std::collections::HashSet<(u32, u32)> =
        current.iter().map(|&(a, b, _)| (a, b)).collect();
    for &(follower, leader, gap) in &current {
        if !colliding.contains(&(follower, leader)) {
            events.push(Event::Collision { t, follower, leader, gap });
        }
    }
    *colliding = now;
}

/// Bodies can only overlap where both routes run on the same carriageway.
/// Near a merge point the chain projection puts an approaching vehicle and
/// one passing the junction within a body length while they are physically
/// on separate legs, so require the follower's front to sit on a segment the
/// leader's route also uses.
fn co_located(net: &Network, follower: &VehicleState, leader: &VehicleState) -> bool {
    if follower.route == leader.route {
        return true;
    }
    let fr = &net.routes[follower.route];
    let (k, _) = fr.locate(fr.wrap(follower.pos));
    net.routes[leader.route].segments.contains(&fr.segments[k])
}
