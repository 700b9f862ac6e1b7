//! Scenario files: parsing, cross-reference resolution, validation, and the
//! canonical config hash used for reproducibility manifests.
//!
//! A scenario is one TOML document holding the road geometry, routes, zone
//! definitions, the route-to-zone crossings, signal plans, the fleet, and all
//! parameter sets. Control-zone entry and conflict-exit offsets are derived
//! from each crossing's conflict entry and the approach lengths, so the file
//! cannot state inconsistent spans.

use crate::baseline::{DriverParams, SignalPlan};
use crate::dynamics::VehicleParams;
use crate::network::{
    Crossing, Network, Point2, Route, Segment, Violation, ZoneKind, ZoneSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Optimal,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Optimal => "optimal",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "optimal" => Ok(Mode::Optimal),
            other => Err(format!("unknown mode {other:?}, expected baseline or optimal")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// Tick length, seconds.
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Optimal
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentConfig {
    Line { id: String, start: [f64; 2], end: [f64; 2] },
    /// Circular arc from `start` around `center`; positive sweep is
    /// counterclockwise.
    Arc { id: String, start: [f64; 2], center: [f64; 2], radius: f64, sweep: f64 },
}

impl SegmentConfig {
    pub fn id(&self) -> &str {
        match self {
            SegmentConfig::Line { id, .. } | SegmentConfig::Arc { id, .. } => id,
        }
    }

    fn build(&self) -> Segment {
        match self {
            SegmentConfig::Line { id, start, end } => Segment::line(
                id.clone(),
                Point2::new(start[0], start[1]),
                Point2::new(end[0], end[1]),
            ),
            SegmentConfig::Arc { id, start, center, radius, sweep } => Segment::arc(
                id.clone(),
                Point2::new(start[0], start[1]),
                Point2::new(center[0], center[1]),
                *radius,
                *sweep,
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub id: String,
    #[serde(rename = "loop", default)]
    pub is_loop: bool,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    pub id: String,
    pub kind: ZoneKind,
    /// Priority approach for unsignalized baseline control; defaults to the
    /// first approach.
    #[serde(default)]
    pub major: Option<String>,
    pub approaches: Vec<crate::network::Approach>,
    pub conflict: Vec<Vec<crate::network::ConflictRelation>>,
}

/// Binds one route to one zone approach by the route offset of the conflict
/// entry. The control entry sits one control length upstream and the conflict
/// exit one conflict length downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingConfig {
    pub route: String,
    pub zone: String,
    pub approach: String,
    pub conflict_entry: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetVehicleConfig {
    pub id: u32,
    pub route: String,
    /// Initial route offset, meters.
    pub position: f64,
    pub speed: f64,
    #[serde(default)]
    pub ego: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSettings,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub driver: DriverParams,
    pub segments: Vec<SegmentConfig>,
    pub routes: Vec<RouteConfig>,
    #[serde(default)]
    pub zones: Vec<ZoneConfig>,
    #[serde(default)]
    pub crossings: Vec<CrossingConfig>,
    #[serde(default)]
    pub signals: Vec<SignalPlan>,
    pub fleet: Vec<FleetVehicleConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetVehicle {
    pub id: u32,
    pub route: usize,
    pub position: f64,
    pub speed: f64,
    pub ego: bool,
}

/// A validated, cross-referenced scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: Network,
    pub fleet: Vec<FleetVehicle>,
    /// Signal plan per zone index, when that zone is signalized.
    pub signals: Vec<Option<SignalPlan>>,
    /// Major (priority) approach index per zone, for unsignalized baseline
    /// control.
    pub zone_major: Vec<usize>,
    /// SHA-256 of the canonicalized config, hex-encoded.
    pub config_hash: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario invalid:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

/// Parse a scenario file without cross-referencing it, so callers can apply
/// command-line overrides before [`resolve`].
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    resolve(load_config(path)?)
}

/// Hash of the parsed config serialized to canonical JSON. Whitespace and
/// comments in the source file do not affect it; any semantic field does.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Cross-reference and validate a parsed config. All violations are
/// collected and reported together.
pub fn resolve(config: ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let mut violations = Vec::new();
    let mut flag = |subject: &str, detail: String| {
        violations.push(Violation { subject: subject.to_string(), detail });
    };

    if !(config.run.dt > 0.0 && config.run.dt <= 0.1) {
        flag("run.dt", format!("tick length {} outside (0, 0.1] s", config.run.dt));
    }
    if !(config.run.duration > 0.0) {
        flag("run.duration", "duration must be positive".into());
    }
    if let Err(e) = config.vehicle.validate() {
        flag("vehicle", e);
    }
    if let Err(e) = config.driver.validate() {
        flag("driver", e);
    }

    let mut seen = HashSet::new();
    for s in &config.segments {
        if !seen.insert(s.id()) {
            flag("segments", format!("duplicate segment id {}", s.id()));
        }
    }
    let mut seen = HashSet::new();
    for r in &config.routes {
        if !seen.insert(r.id.as_str()) {
            flag("routes", format!("duplicate route id {}", r.id));
        }
    }
    let mut seen = HashSet::new();
    for z in &config.zones {
        if !seen.insert(z.id.as_str()) {
            flag("zones", format!("duplicate zone id {}", z.id));
        }
    }
    let mut seen = HashSet::new();
    for v in &config.fleet {
        if !seen.insert(v.id) {
            flag("fleet", format!("duplicate vehicle id {}", v.id));
        }
    }

    let segment_index = |id: &str| config.segments.iter().position(|s| s.id() == id);
    let route_index = |id: &str| config.routes.iter().position(|r| r.id == id);
    let zone_index = |id: &str| config.zones.iter().position(|z| z.id == id);

    let segments: Vec<Segment> = config.segments.iter().map(|s| s.build()).collect();

    // Zones must be structurally sound (square matrix) before any relation
    // lookup is possible.
    for z in &config.zones {
        if z.approaches.is_empty() {
            flag(&z.id, "zone has no approaches".into());
        }
        if z.conflict.len() != z.approaches.len()
            || z.conflict.iter().any(|row| row.len() != z.approaches.len())
        {
            flag(&z.id, "conflict matrix shape does not match the approach count".into());
        }
        if let Some(major) = &z.major {
            if !z.approaches.iter().any(|a| a.id == *major) {
                flag(&z.id, format!("major approach {major} is not an approach of this zone"));
            }
        }
    }

    let mut routes = Vec::new();
    for r in &config.routes {
        if r.segments.is_empty() {
            flag(&r.id, "route has no segments".into());
            continue;
        }
        let mut idxs = Vec::new();
        let mut ok = true;
        for sid in &r.segments {
            match segment_index(sid) {
                Some(k) => idxs.push(k),
                None => {
                    flag(&r.id, format!("unknown segment {sid}"));
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut crossings = Vec::new();
        for c in config.crossings.iter().filter(|c| c.route == r.id) {
            let Some(zi) = zone_index(&c.zone) else {
                flag(&r.id, format!("crossing references unknown zone {}", c.zone));
                continue;
            };
            let zone = &config.zones[zi];
            let Some(ai) = zone.approaches.iter().position(|a| a.id == c.approach) else {
                flag(&r.id, format!("crossing references unknown approach {} of zone {}", c.approach, c.zone));
                continue;
            };
            let ap = &zone.approaches[ai];
            crossings.push(Crossing {
                zone: zi,
                approach: ai,
                control_entry: c.conflict_entry - ap.control_length,
                conflict_entry: c.conflict_entry,
                conflict_exit: c.conflict_entry + ap.conflict_length,
            });
        }
        routes.push(Route::new(&r.id, r.is_loop, idxs, &segments, crossings));
    }
    for c in &config.crossings {
        if route_index(&c.route).is_none() {
            flag("crossings", format!("unknown route {}", c.route));
        }
    }

    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }

    let zones: Vec<ZoneSpec> = config
        .zones
        .iter()
        .map(|z| ZoneSpec {
            id: z.id.clone(),
            kind: z.kind,
            approaches: z.approaches.clone(),
            conflict: z.conflict.clone(),
        })
        .collect();
    let network = Network { segments, routes, zones };
    violations.extend(network.validate());
    let mut flag = |subject: &str, detail: String| {
        violations.push(Violation { subject: subject.to_string(), detail });
    };

    // Signal plans: known zones, well-formed phase coverage.
    let mut signals: Vec<Option<SignalPlan>> = vec![None; network.zones.len()];
    for plan in &config.signals {
        match network.zone_index(&plan.zone) {
            Some(zi) => {
                if let Err(e) = plan.validate(&network.zones[zi]) {
                    flag(&plan.zone, e);
                } else if signals[zi].is_some() {
                    flag(&plan.zone, "zone has more than one signal plan".into());
                } else {
                    signals[zi] = Some(plan.clone());
                }
            }
            None => flag("signals", format!("signal plan references unknown zone {}", plan.zone)),
        }
    }

    let zone_major: Vec<usize> = config
        .zones
        .iter()
        .map(|z| {
            z.major
                .as_ref()
                .and_then(|m| z.approaches.iter().position(|a| a.id == *m))
                .unwrap_or(0)
        })
        .collect();

    // Fleet: resolvable routes, sane initial states, and per-route spacing.
    let mut fleet = Vec::new();
    for v in &config.fleet {
        let Some(ri) = route_index(&v.route) else {
            flag("fleet", format!("vehicle {} references unknown route {}", v.id, v.route));
            continue;
        };
        let len = network.routes[ri].total_length();
        if !(0.0..len).contains(&v.position) {
            flag("fleet", format!("vehicle {} position {} outside [0, {len})", v.id, v.position));
        }
        if !(0.0..=config.vehicle.v_max).contains(&v.speed) {
            flag("fleet", format!("vehicle {} speed {} outside [0, v_max]", v.id, v.speed));
        }
        if (0.0..len).contains(&v.position)
            && network.zone_context(ri, v.position) != crate::network::ZoneContext::OpenRoad
        {
            flag(
                "fleet",
                format!("vehicle {} starts inside a zone span at position {}", v.id, v.position),
            );
        }
        fleet.push(FleetVehicle { id: v.id, route: ri, position: v.position, speed: v.speed, ego: v.ego });
    }
    for (ri, route) in network.routes.iter().enumerate() {
        let mut on_route: Vec<&FleetVehicle> = fleet.iter().filter(|v| v.route == ri).collect();
        on_route.sort_by(|a, b| a.position.total_cmp(&b.position));
        let min_gap = config.vehicle.body_length + config.vehicle.standstill_gap;
        for pair in on_route.windows(2) {
            let gap = pair[1].position - pair[0].position;
            if gap <= min_gap {
                flag(
                    "fleet",
                    format!(
                        "vehicles {} and {} start {:.2} m apart on route {}, need more than {:.2} m",
                        pair[0].id, pair[1].id, gap, route.id, min_gap
                    ),
                );
            }
        }
        if route.is_loop && on_route.len() >= 2 {
            let first = on_route.first().unwrap();
            let last = on_route.last().unwrap();
            let gap = first.position + route.total_length() - last.position;
            if gap <= min_gap {
                flag(
                    "fleet",
                    format!(
                        "vehicles {} and {} start {:.2} m apart across the loop seam of route {}, need more than {:.2} m",
                        last.id, first.id, gap, route.id, min_gap
                    ),
                );
            }
        }
    }

    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations));
    }

    let config_hash = config_hash(&config);
    Ok(Scenario { config, network, fleet, signals, zone_major, config_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
            [run]
            dt = 0.02
            duration = 10.0
            seed = 1

            [[segments]]
            id = "a"
            kind = "line"
            start = [0.0, 0.0]
            end = [100.0, 0.0]

            [[segments]]
            id = "b"
            kind = "line"
            start = [100.0, 0.0]
            end = [200.0, 0.0]

            [[routes]]
            id = "main"
            loop = false
            segments = ["a", "b"]

            [[zones]]
            id = "j"
            kind = "merge"
            approaches = [
                { id = "m", control_length = 45.0, conflict_length = 7.0, conflict_speed = 7.0 },
            ]
            conflict = [["same_lane"]]

            [[crossings]]
            route = "main"
            zone = "j"
            approach = "m"
            conflict_entry = 150.0

            [[fleet]]
            id = 1
            route = "main"
            position = 10.0
            speed = 7.0
            ego = true

            [[fleet]]
            id = 2
            route = "main"
            position = 40.0
            speed = 7.0
        "#
        .to_string()
    }

    fn parse(text: &str) -> ScenarioConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_scenario_resolves() {
        let sc = resolve(parse(&minimal_toml())).unwrap();
        assert_eq!(sc.network.routes.len(), 1);
        assert_eq!(sc.network.routes[0].crossings.len(), 1);
        let c = &sc.network.routes[0].crossings[0];
        assert_eq!(c.control_entry, 105.0);
        assert_eq!(c.conflict_exit, 157.0);
        assert_eq!(sc.fleet.len(), 2);
        assert!(sc.fleet[0].ego && !sc.fleet[1].ego);
        assert_eq!(sc.signals, vec![None]);
        assert_eq!(sc.zone_major, vec![0]);
    }

    #[test]
    fn bad_dt_rejected() {
        let mut cfg = parse(&minimal_toml());
        cfg.run.dt = 0.0;
        let err = resolve(cfg).unwrap_err();
        let ScenarioError::Invalid(v) = err else { panic!("expected Invalid") };
        assert!(v.iter().any(|v| v.subject == "run.dt"), "{v:?}");
    }

    #[test]
    fn inverted_speed_limits_name_the_field() {
        let mut cfg = parse(&minimal_toml());
        cfg.vehicle.v_min = 9.0;
        cfg.vehicle.v_max = 8.33;
        let ScenarioError::Invalid(v) = resolve(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|v| v.detail.contains("v_min")), "{v:?}");
    }

    #[test]
    fn unknown_segment_reference_rejected() {
        let mut cfg = parse(&minimal_toml());
        cfg.routes[0].segments.push("ghost".into());
        let ScenarioError::Invalid(v) = resolve(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|v| v.detail.contains("ghost")), "{v:?}");
    }

    #[test]
    fn fleet_spacing_enforced() {
        let mut cfg = parse(&minimal_toml());
        cfg.fleet[1].position = 14.0;
        let ScenarioError::Invalid(v) = resolve(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|v| v.detail.contains("apart on route")), "{v:?}");
    }

    #[test]
    fn loop_seam_spacing_enforced() {
        let mut cfg = parse(&minimal_toml());
        cfg.routes[0].is_loop = true;
        // Make the path a closed rectangle so loop validation passes.
        cfg.segments = vec![
            SegmentConfig::Line { id: "a".into(), start: [0.0, 0.0], end: [200.0, 0.0] },
            SegmentConfig::Line { id: "b".into(), start: [200.0, 0.0], end: [200.0, 50.0] },
            SegmentConfig::Line { id: "c".into(), start: [200.0, 50.0], end: [0.0, 50.0] },
            SegmentConfig::Line { id: "d".into(), start: [0.0, 50.0], end: [0.0, 0.0] },
        ];
        cfg.routes[0].segments = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        cfg.fleet[0].position = 2.0;
        cfg.fleet[1].position = 495.0;
        let ScenarioError::Invalid(v) = resolve(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|v| v.detail.contains("loop seam")), "{v:?}");
    }

    #[test]
    fn signal_plan_binding() {
        let mut cfg = parse(&minimal_toml());
        cfg.signals.push(crate::baseline::SignalPlan {
            zone: "j".into(),
            phases: vec![crate::baseline::Phase {
                approaches: vec!["m".into()],
                green: 20.0,
                inter_green: 3.0,
            }],
            offset: 0.0,
        });
        let sc = resolve(cfg).unwrap();
        assert!(sc.signals[0].is_some());

        let mut cfg = parse(&minimal_toml());
        cfg.signals.push(crate::baseline::SignalPlan {
            zone: "nowhere".into(),
            phases: vec![],
            offset: 0.0,
        });
        let ScenarioError::Invalid(v) = resolve(cfg).unwrap_err() else { panic!() };
        assert!(v.iter().any(|v| v.detail.contains("unknown zone")), "{v:?}");
    }

    #[test]
    fn hash_tracks_semantics_not_formatting() {
        let a = parse(&minimal_toml());
        let reformatted = minimal_toml().replace("dt = 0.02", "dt   = 0.02 # tick");
        let b = parse(&reformatted);
        assert_eq!(config_hash(&a), config_hash(&b));

        let mut c = parse(&minimal_toml());
        c.run.seed = 2;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn mode_round_trip() {
        assert_eq!("optimal".parse::<Mode>().unwrap(), Mode::Optimal);
        assert_eq!("baseline".parse::<Mode>().unwrap(), Mode::Baseline);
        assert!("fast".parse::<Mode>().is_err());
        assert_eq!(Mode::Optimal.to_string(), "optimal");
    }

    #[test]
    fn parse_error_carries_location() {
        let err = toml::from_str::<ScenarioConfig>("run = { dt = \"fast\" }").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dt") || msg.contains("line"), "{msg}");
    }
}
