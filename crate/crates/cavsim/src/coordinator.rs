//! Per-zone FIFO coordination: identity assignment, information-set exchange,
//! conflict-entry scheduling, and mutual-exclusion bookkeeping.
//!
//! The coordinator never optimizes anything. It hands each newly arrived
//! vehicle the information set of its queue predecessor, fixes the vehicle's
//! conflict-zone entry time by the spacing rules below, and keeps a ledger of
//! scheduled and realized conflict-zone occupancy so exclusion can be audited
//! after the fact.

use crate::dynamics::VehicleParams;
use crate::network::{ConflictRelation, ZoneSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Realized conflict-zone exits later than scheduled by more than this many
/// seconds get a ledger warning.
pub const LATE_EXIT_TOLERANCE: f64 = 0.1;

/// What a vehicle shares with the next arrival: its state at registration,
/// how the queue ahead of it partitions by conflict relation, and its own
/// scheduled conflict entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoSet {
    /// Distance into the control zone at registration.
    pub position: f64,
    pub speed: f64,
    /// Queued vehicles on the same lane as the owner.
    pub same_lane: Vec<u32>,
    /// Queued vehicles on crossing approaches.
    pub crossing: Vec<u32>,
    pub t_conflict_entry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueEntry {
    pub vehicle: u32,
    /// Identity in arrival order, 1-based, never reassigned while the queue
    /// stays non-empty.
    pub index: u32,
    /// Approach index within the zone.
    pub approach: usize,
    pub t_control_entry: f64,
    pub entry_speed: f64,
    pub t_conflict_entry: f64,
    pub t_conflict_exit: f64,
    pub info: InfoSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerRecord {
    pub vehicle: u32,
    pub approach: usize,
    /// Scheduled conflict-zone occupancy [t_entry, t_exit).
    pub scheduled: (f64, f64),
    pub realized_entry: Option<f64>,
    pub realized_exit: Option<f64>,
}

impl LedgerRecord {
    /// Occupancy interval for auditing: realized bounds where known,
    /// scheduled otherwise.
    pub fn interval(&self) -> (f64, f64) {
        (
            self.realized_entry.unwrap_or(self.scheduled.0),
            self.realized_exit.unwrap_or(self.scheduled.1),
        )
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OccupancyLedger {
    pub records: Vec<LedgerRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusionViolation {
    pub vehicle_a: u32,
    pub vehicle_b: u32,
    pub overlap: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CoordinationError {
    #[error("vehicle {vehicle} is already registered in zone {zone}")]
    DoubleRegistration { vehicle: u32, zone: String },
    #[error("vehicle {vehicle} is not registered in zone {zone}")]
    NotRegistered { vehicle: u32, zone: String },
    #[error("vehicle {vehicle} entered zone {zone} with non-positive speed {speed}")]
    InvalidEntrySpeed { vehicle: u32, zone: String, speed: f64 },
}

/// A control-zone entry event waiting to be registered.
#[derive(Debug, Clone, Copy)]
pub struct Arrival {
    pub vehicle: u32,
    pub approach: usize,
    pub t: f64,
    pub position: f64,
    pub speed: f64,
}

/// Fix a vehicle's conflict-zone entry time from its own entry state and its
/// queue predecessor, if any.
///
/// The base term is cruise-through at the entry speed, clamped into the
/// feasible travel-time window [L/v_max, L/v_min]. A predecessor adds a
/// spacing term: its own scheduled entry plus a headway (rear-end safe
/// distance over the conflict speed when same-lane, conflict traversal time
/// when crossing, nothing when disjoint), capped by the window's slow edge so
/// an absurdly late predecessor cannot push the schedule outside what the
/// speed limits permit.
pub fn schedule_entry_time(
    t0: f64,
    v0: f64,
    approach: usize,
    predecessor: Option<&QueueEntry>,
    zone: &ZoneSpec,
    params: &VehicleParams,
) -> f64 {
    let ap = &zone.approaches[approach];
    let l = ap.control_length;
    let earliest = t0 + l / params.v_max;
    let latest = t0 + l / params.v_min;
    let cruise = t0 + (l / v0).clamp(l / params.v_max, l / params.v_min);

    let spacing = predecessor.map(|pred| {
        let gap = match zone.relation(approach, pred.approach) {
            ConflictRelation::SameLane => {
                let vz = ap.conflict_speed;
                (params.standstill_gap + params.time_gap * vz) / vz
            }
            ConflictRelation::Crossing => {
                let pred_ap = &zone.approaches[pred.approach];
                pred_ap.conflict_length / pred_ap.conflict_speed
            }
            ConflictRelation::Disjoint => 0.0,
        };
        (pred.t_conflict_entry + gap).min(latest)
    });

    let mut t = cruise.max(earliest);
    if let Some(s) = spacing {
        t = t.max(s);
    }
    t
}

/// FIFO coordinator for one conflict zone.
#[derive(Debug, Clone, Default)]
pub struct Coordinator {
    pub zone_id: String,
    queue: Vec<QueueEntry>,
    assigned_since_reset: u32,
    pub ledger: OccupancyLedger,
}

impl Coordinator {
    pub fn new(zone_id: &str) -> Self {
        Coordinator { zone_id: zone_id.to_string(), ..Default::default() }
    }

    pub fn queue(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn entry_for(&self, vehicle: u32) -> Option<&QueueEntry> {
        self.queue.iter().find(|e| e.vehicle == vehicle)
    }

    /// The entry a newly arriving vehicle would see as its predecessor.
    pub fn tail(&self) -> Option<&QueueEntry> {
        self.queue.last()
    }

    /// Register one vehicle at the control-zone boundary: assign the next
    /// identity, partition the queue ahead into same-lane and crossing sets,
    /// schedule the conflict entry, and open a ledger record.
    pub fn register(
        &mut self,
        arrival: Arrival,
        zone: &ZoneSpec,
        params: &VehicleParams,
    ) -> Result<QueueEntry, CoordinationError> {
        if self.entry_for(arrival.vehicle).is_some() {
            return Err(CoordinationError::DoubleRegistration {
                vehicle: arrival.vehicle,
                zone: self.zone_id.clone(),
            });
        }
        if arrival.speed <= 0.0 {
            return Err(CoordinationError::InvalidEntrySpeed {
                vehicle: arrival.vehicle,
                zone: self.zone_id.clone(),
                speed: arrival.speed,
            });
        }

        let mut same_lane = Vec::new();
        let mut crossing = Vec::new();
        for queued in &self.queue {
            match zone.relation(arrival.approach, queued.approach) {
                ConflictRelation::SameLane => same_lane.push(queued.vehicle),
                ConflictRelation::Crossing => crossing.push(queued.vehicle),
                ConflictRelation::Disjoint => {}
            }
        }

        let t_m = schedule_entry_time(
            arrival.t,
            arrival.speed,
            arrival.approach,
            self.queue.last(),
            zone,
            params,
        );
        let ap = &zone.approaches[arrival.approach];
        let t_f = t_m + ap.conflict_length / ap.conflict_speed;

        self.assigned_since_reset += 1;
        let entry = QueueEntry {
            vehicle: arrival.vehicle,
            index: self.assigned_since_reset,
            approach: arrival.approach,
            t_control_entry: arrival.t,
            entry_speed: arrival.speed,
            t_conflict_entry: t_m,
            t_conflict_exit: t_f,
            info: InfoSet {
                position: arrival.position,
                speed: arrival.speed,
                same_lane,
                crossing,
                t_conflict_entry: t_m,
            },
        };
        self.queue.push(entry.clone());
        self.ledger.records.push(LedgerRecord {
            vehicle: arrival.vehicle,
            approach: arrival.approach,
            scheduled: (t_m, t_f),
            realized_entry: None,
            realized_exit: None,
        });
        Ok(entry)
    }

    /// Register a batch of same-tick arrivals, breaking ties in queue order by
    /// a seeded shuffle so reruns with the same seed reproduce the order.
    pub fn register_arrivals<R: Rng>(
        &mut self,
        mut arrivals: Vec<Arrival>,
        rng: &mut R,
        zone: &ZoneSpec,
        params: &VehicleParams,
    ) -> Result<Vec<QueueEntry>, CoordinationError> {
        if arrivals.len() > 1 {
            arrivals.shuffle(rng);
        }
        arrivals.into_iter().map(|a| self.register(a, zone, params)).collect()
    }

    /// Record the realized conflict-zone entry of a registered vehicle.
    pub fn record_conflict_entry(&mut self, vehicle: u32, t: f64) {
        if let Some(rec) = self
            .ledger
            .records
            .iter_mut()
            .rev()
            .find(|r| r.vehicle == vehicle && r.realized_exit.is_none())
        {
            rec.realized_entry = Some(t);
        }
    }

    /// Remove a vehicle at the conflict-zone exit. Remaining identities and
    /// schedules are untouched; the identity counter resets only when the
    /// queue drains completely.
    pub fn release(&mut self, vehicle: u32, t: f64) -> Result<(), CoordinationError> {
        let pos = self.queue.iter().position(|e| e.vehicle == vehicle).ok_or(
            CoordinationError::NotRegistered { vehicle, zone: self.zone_id.clone() },
        )?;
        let entry = self.queue.remove(pos);
        if let Some(rec) = self
            .ledger
            .records
            .iter_mut()
            .rev()
            .find(|r| r.vehicle == vehicle && r.realized_exit.is_none())
        {
            rec.realized_exit = Some(t);
            if t > entry.t_conflict_exit + LATE_EXIT_TOLERANCE {
                self.ledger.warnings.push(format!(
                    "zone {}: vehicle {} exited the conflict zone {:.3} s later than scheduled",
                    self.zone_id,
                    vehicle,
                    t - entry.t_conflict_exit
                ));
            }
        }
        if self.queue.is_empty() {
            self.assigned_since_reset = 0;
        }
        Ok(())
    }
}

/// Report every pair of occupancy intervals on crossing approaches that
/// overlap for a positive duration. Intervals are closed-open, so touching
/// endpoints do not conflict, and same-lane pairs are excluded (rear-end
/// spacing governs those).
pub fn audit_ledger(ledger: &OccupancyLedger, zone: &ZoneSpec) -> Vec<ExclusionViolation> {
    let mut out = Vec::new();
    for (k, a) in ledger.records.iter().enumerate() {
        for b in ledger.records.iter().skip(k + 1) {
            if zone.relation(a.approach, b.approach) != ConflictRelation::Crossing {
                continue;
            }
            let (a0, a1) = a.interval();
            let (b0, b1) = b.interval();
            let overlap = a1.min(b1) - a0.max(b0);
            if overlap > 0.0 {
                out.push(ExclusionViolation {
                    vehicle_a: a.vehicle,
                    vehicle_b: b.vehicle,
                    overlap,
                });
            }
        }
    }
    out
}
