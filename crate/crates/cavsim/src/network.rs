//! Road network geometry: line/arc segments parameterized by arc length,
//! routes assembled from shared segments, and conflict-zone placement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for segment chain continuity checks, meters.
pub const CONTINUITY_TOL: f64 = 1e-6;
/// Tolerance for analytic geometry checks (arc radius, lengths), meters.
pub const ANALYTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    Line { end: Point2 },
    /// Circular arc. `sweep` is signed radians, positive counterclockwise.
    Arc { center: Point2, radius: f64, sweep: f64 },
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub id: String,
    pub start: Point2,
    pub kind: SegmentKind,
    length: f64,
}

impl Segment {
    pub fn line(id: impl Into<String>, start: Point2, end: Point2) -> Self {
        Segment {
            id: id.into(),
            start,
            length: start.distance(end),
            kind: SegmentKind::Line { end },
        }
    }

    pub fn arc(id: impl Into<String>, start: Point2, center: Point2, radius: f64, sweep: f64) -> Self {
        Segment {
            id: id.into(),
            start,
            length: radius * sweep.abs(),
            kind: SegmentKind::Arc { center, radius, sweep },
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Point at arc length `s` from the segment start, `s` clamped to [0, length].
    pub fn point_at(&self, s: f64) -> Point2 {
        let s = s.clamp(0.0, self.length);
        match self.kind {
            SegmentKind::Line { end } => {
                if self.length == 0.0 {
                    return self.start;
                }
                let f = s / self.length;
                Point2::new(
                    self.start.x + f * (end.x - self.start.x),
                    self.start.y + f * (end.y - self.start.y),
                )
            }
            SegmentKind::Arc { center, radius, sweep } => {
                let start_angle = (self.start.y - center.y).atan2(self.start.x - center.x);
                let angle = start_angle + sweep.signum() * s / radius;
                Point2::new(center.x + radius * angle.cos(), center.y + radius * angle.sin())
            }
        }
    }

    pub fn end(&self) -> Point2 {
        self.point_at(self.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictRelation {
    SameLane,
    Crossing,
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Intersection,
    Roundabout,
    Merge,
}

/// One directional approach to a zone: the control zone leading to the
/// conflict area and the speed imposed while crossing it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Approach {
    pub id: String,
    /// Control-zone length upstream of the conflict area, meters.
    pub control_length: f64,
    /// Conflict-zone length, meters.
    pub conflict_length: f64,
    /// Speed imposed inside the conflict zone, m/s.
    pub conflict_speed: f64,
}

#[derive(Debug, Error)]
#[error("zone {zone}: unknown approach {approach}")]
pub struct UnknownApproach {
    pub zone: String,
    pub approach: String,
}

#[derive(Debug, Clone)]
pub struct ZoneSpec {
    pub id: String,
    pub kind: ZoneKind,
    pub approaches: Vec<Approach>,
    /// Square matrix indexed by approach order.
    pub conflict: Vec<Vec<ConflictRelation>>,
}

impl ZoneSpec {
    pub fn approach_index(&self, id: &str) -> Option<usize> {
        self.approaches.iter().position(|a| a.id == id)
    }

    pub fn relation(&self, i: usize, j: usize) -> ConflictRelation {
        self.conflict[i][j]
    }

    pub fn relation_by_id(&self, a: &str, b: &str) -> Result<ConflictRelation, UnknownApproach> {
        let unknown = |approach: &str| UnknownApproach {
            zone: self.id.clone(),
            approach: approach.to_string(),
        };
        let i = self.approach_index(a).ok_or_else(|| unknown(a))?;
        let j = self.approach_index(b).ok_or_else(|| unknown(b))?;
        Ok(self.relation(i, j))
    }
}

/// Where a route meets a zone, in route arc-length offsets.
#[derive(Debug, Clone, Copy)]
pub struct Crossing {
    pub zone: usize,
    pub approach: usize,
    pub control_entry: f64,
    pub conflict_entry: f64,
    pub conflict_exit: f64,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub id: String,
    pub is_loop: bool,
    /// Indices into `Network::segments`, traversed in order.
    pub segments: Vec<usize>,
    /// Cumulative offsets; `cum[k]` is where segment k starts, last entry is
    /// the total length.
    cum: Vec<f64>,
    /// Sorted by control_entry.
    pub crossings: Vec<Crossing>,
}

impl Route {
    pub fn new(
        id: impl Into<String>,
        is_loop: bool,
        segments: Vec<usize>,
        all_segments: &[Segment],
        mut crossings: Vec<Crossing>,
    ) -> Self {
        let mut cum = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for &si in &segments {
            acc += all_segments[si].length();
            cum.push(acc);
        }
        crossings.sort_by(|a, b| a.control_entry.total_cmp(&b.control_entry));
        Route { id: id.into(), is_loop, segments, cum, crossings }
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Wrap an unbounded traveled distance onto [0, total) for loop routes.
    pub fn wrap(&self, s: f64) -> f64 {
        if self.is_loop {
            s.rem_euclid(self.total_length())
        } else {
            s
        }
    }

    /// Segment position for `s` already wrapped into [0, total].
    /// Returns (index into `self.segments`, offset within that segment).
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let k = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        };
        let k = k.min(self.segments.len() - 1);
        (k, s - self.cum[k])
    }

    pub fn segment_start_offset(&self, k: usize) -> f64 {
        self.cum[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZoneContext {
    OpenRoad,
    ControlZone { zone: usize, approach: usize, crossing: usize, distance_into: f64 },
    ConflictZone { zone: usize, approach: usize, crossing: usize, distance_into: f64 },
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("route {route}: arc length {s} outside [0, {total}] on a non-loop route")]
    OutOfRange { route: String, s: f64, total: f64 },
    #[error("unknown route {0}")]
    UnknownRoute(String),
}

/// A broken network invariant found by validation. Violations are data, not
/// errors: callers decide whether to abort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Route, zone, or segment the violation belongs to.
    pub subject: String,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Network {
    pub segments: Vec<Segment>,
    pub routes: Vec<Route>,
    pub zones: Vec<ZoneSpec>,
}

impl Network {
    pub fn route_index(&self, id: &str) -> Option<usize> {
        self.routes.iter().position(|r| r.id == id)
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.id == id)
    }

    /// 2D position of arc length `s` along a route. Loops wrap `s`.
    pub fn position_at(&self, route: usize, s: f64) -> Result<Point2, GeometryError> {
        let r = &self.routes[route];
        let total = r.total_length();
        let s = if r.is_loop {
            s.rem_euclid(total)
        } else if !(0.0..=total).contains(&s) {
            return Err(GeometryError::OutOfRange { route: r.id.clone(), s, total });
        } else {
            s
        };
        let (k, local) = r.locate(s);
        Ok(self.segments[r.segments[k]].point_at(local))
    }

    /// Zone context for a (possibly unbounded) traveled distance along a route.
    pub fn zone_context(&self, route: usize, s: f64) -> ZoneContext {
        let r = &self.routes[route];
        let s = r.wrap(s);
        for (ci, c) in r.crossings.iter().enumerate() {
            if s >= c.control_entry && s < c.conflict_entry {
                return ZoneContext::ControlZone {
                    zone: c.zone,
                    approach: c.approach,
                    crossing: ci,
                    distance_into: s - c.control_entry,
                };
            }
            if s >= c.conflict_entry && s < c.conflict_exit {
                return ZoneContext::ConflictZone {
                    zone: c.zone,
                    approach: c.approach,
                    crossing: ci,
                    distance_into: s - c.conflict_entry,
                };
            }
        }
        ZoneContext::OpenRoad
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let violation = |subject: &str, detail: String| Violation {
            subject: subject.to_string(),
            detail,
        };

        for seg in &self.segments {
            if !(seg.length() > 0.0) {
                out.push(violation(&seg.id, format!("segment length {} must be > 0", seg.length())));
            }
            if let SegmentKind::Arc { center, radius, .. } = seg.kind {
                if !(radius > 0.0) {
                    out.push(violation(&seg.id, format!("arc radius {radius} must be > 0")));
                } else if (seg.start.distance(center) - radius).abs() > ANALYTIC_TOL {
                    out.push(violation(
                        &seg.id,
                        format!(
                            "arc start is {} m from center but radius is {radius}",
                            seg.start.distance(center)
                        ),
                    ));
                }
            }
        }

        for zone in &self.zones {
            let n = zone.approaches.len();
            if zone.conflict.len() != n || zone.conflict.iter().any(|row| row.len() != n) {
                out.push(violation(&zone.id, format!("conflict matrix must be {n}x{n}")));
                continue;
            }
            for (i, a) in zone.approaches.iter().enumerate() {
                if !(a.control_length > 0.0) {
                    out.push(violation(&zone.id, format!("approach {}: control length must be > 0", a.id)));
                }
                if !(a.conflict_length > 0.0) {
                    out.push(violation(&zone.id, format!("approach {}: conflict length must be > 0", a.id)));
                }
                if zone.conflict[i][i] != ConflictRelation::SameLane {
                    out.push(violation(
                        &zone.id,
                        format!("approach {} must be same-lane with itself", a.id),
                    ));
                }
                for j in 0..n {
                    if zone.conflict[i][j] != zone.conflict[j][i] {
                        out.push(violation(
                            &zone.id,
                            format!(
                                "conflict relation between {} and {} is asymmetric",
                                a.id, zone.approaches[j].id
                            ),
                        ));
                    }
                }
            }
        }

        for r in &self.routes {
            for w in r.segments.windows(2) {
                let (a, b) = (&self.segments[w[0]], &self.segments[w[1]]);
                let gap = a.end().distance(b.start);
                if gap > CONTINUITY_TOL {
                    out.push(violation(
                        &r.id,
                        format!("segments {} -> {} are discontinuous by {gap} m", a.id, b.id),
                    ));
                }
            }
            if r.is_loop && r.segments.len() > 1 {
                let first = &self.segments[r.segments[0]];
                let last = &self.segments[*r.segments.last().unwrap()];
                let gap = last.end().distance(first.start);
                if gap > CONTINUITY_TOL {
                    out.push(violation(&r.id, format!("loop does not close: gap {gap} m")));
                }
            }

            let total = r.total_length();
            let mut prev_exit = f64::NEG_INFINITY;
            for c in &r.crossings {
                let zone = &self.zones[c.zone];
                let approach = &zone.approaches[c.approach];
                let subject = format!("{} @ {}/{}", r.id, zone.id, approach.id);
                if c.control_entry < 0.0 || c.conflict_exit > total {
                    out.push(violation(
                        &subject,
                        format!(
                            "crossing span [{}, {}] leaves route range [0, {total}]",
                            c.control_entry, c.conflict_exit
                        ),
                    ));
                }
                let l = c.conflict_entry - c.control_entry;
                if (l - approach.control_length).abs() > CONTINUITY_TOL {
                    out.push(violation(
                        &subject,
                        format!(
                            "conflict entry - control entry = {l} but approach control length is {}",
                            approach.control_length
                        ),
                    ));
                }
                let s = c.conflict_exit - c.conflict_entry;
                if (s - approach.conflict_length).abs() > CONTINUITY_TOL {
                    out.push(violation(
                        &subject,
                        format!(
                            "conflict exit - entry = {s} but approach conflict length is {}",
                            approach.conflict_length
                        ),
                    ));
                }
                if c.control_entry < prev_exit {
                    out.push(violation(&subject, "crossing overlaps the previous crossing".into()));
                }
                prev_exit = c.conflict_exit;
            }
        }

        // Off-diagonal same-lane relations require the approaches to leave the
        // zone onto the same lane; check their conflict exit points coincide.
        for (zi, zone) in self.zones.iter().enumerate() {
            for i in 0..zone.approaches.len() {
                for j in (i + 1)..zone.approaches.len() {
                    if zone.conflict[i][j] != ConflictRelation::SameLane {
                        continue;
                    }
                    let exits: Vec<Point2> = self
                        .routes
                        .iter()
                        .enumerate()
                        .flat_map(|(ri, r)| {
                            r.crossings
                                .iter()
                                .filter(|c| c.zone == zi && (c.approach == i || c.approach == j))
                                .filter_map(|c| self.position_at(ri, c.conflict_exit).ok())
                                .collect::<Vec<_>>()
                        })
                        .collect();
                    for pair in exits.windows(2) {
                        if pair[0].distance(pair[1]) > CONTINUITY_TOL {
                            out.push(Violation {
                                subject: zone.id.clone(),
                                detail: format!(
                                    "same-lane approaches {} and {} do not share a downstream lane",
                                    zone.approaches[i].id, zone.approaches[j].id
                                ),
                            });
                        }
                    }
                }
            }
        }

        out
    }
}
