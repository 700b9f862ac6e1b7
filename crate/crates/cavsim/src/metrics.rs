//! Post-run trace analysis: loop travel times, per-route speed statistics,
//! stop counting, arrival histograms, and speed-trace smoothing.

use crate::engine::TraceRecord;
use crate::network::{Network, Point2};
use crate::scenario::Scenario;
use serde::Serialize;
use std::collections::BTreeMap;

fn point_of(net: &Network, r: &TraceRecord) -> Point2 {
    let route = &net.routes[r.route];
    let s = if route.is_loop { route.wrap(r.p) } else { r.p.min(route.total_length()) };
    net.position_at(r.route, s).expect("arc length kept in range")
}

/// Time for the vehicle to first return within `threshold` meters (2D
/// Euclidean) of its initial position, ignoring any match before `warmup`
/// seconds. The vehicle must actually leave the threshold band first, so a
/// vehicle parked at its spawn point does not complete at the warmup edge.
/// `None` means it never finished within the trace.
pub fn loop_travel_time(
    trace: &[TraceRecord],
    vehicle: u32,
    net: &Network,
    threshold: f64,
    warmup: f64,
) -> Result<Option<f64>, String> {
    let mut rows = trace.iter().filter(|r| r.vehicle == vehicle);
    let Some(first) = rows.next() else {
        return Err(format!("vehicle {vehicle} does not appear in the trace"));
    };
    let start = point_of(net, first);
    let mut left_band = false;
    for r in rows {
        let d = point_of(net, r).distance(start);
        if !left_band {
            left_band = d > threshold;
            continue;
        }
        if r.t > warmup && d <= threshold {
            return Ok(Some(r.t - first.t));
        }
    }
    Ok(None)
}

/// Encode a completion time for reports: seconds, or "> duration" when the
/// vehicle never finished.
pub fn format_travel_time(t: Option<f64>, duration: f64) -> String {
    match t {
        Some(v) => crate::output::fmt_sig(v),
        None => format!("> {}", crate::output::fmt_sig(duration)),
    }
}

/// Centered moving average over `window` seconds, after discarding samples
/// above `cutoff` as measurement outliers. Edge windows shrink symmetrically,
/// so an affine series passes through unchanged everywhere. Output is
/// index-aligned with the input; a window with no valid samples falls back to
/// the raw value.
pub fn smooth_speed(series: &[f64], dt: f64, window: f64, cutoff: f64) -> Result<Vec<f64>, String> {
    if !(dt > 0.0) {
        return Err(format!("sample period {dt} must be positive"));
    }
    if window < dt {
        return Err(format!("window {window} s is smaller than one sample period {dt} s"));
    }
    let n = series.len();
    let half = (window / (2.0 * dt)).floor() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = half.min(i).min(n - 1 - i);
        let mut sum = 0.0;
        let mut count = 0usize;
        for &v in &series[i - k..=i + k] {
            if v <= cutoff {
                sum += v;
                count += 1;
            }
        }
        out.push(if count > 0 { sum / count as f64 } else { series[i] });
    }
    Ok(out)
}

/// Number of maximal runs with speed below `stop_speed` spanning at least
/// `min_dwell` seconds (first to last sample of the run).
pub fn stop_count_series(speeds: &[f64], dt: f64, stop_speed: f64, min_dwell: f64) -> usize {
    let mut stops = 0;
    let mut run = 0usize;
    for &v in speeds.iter().chain(std::iter::once(&f64::INFINITY)) {
        if v < stop_speed {
            run += 1;
        } else {
            if run > 0 && (run - 1) as f64 * dt + 1e-9 >= min_dwell {
                stops += 1;
            }
            run = 0;
        }
    }
    stops
}

/// [`stop_count_series`] over one vehicle's rows of a trace.
pub fn stop_count(trace: &[TraceRecord], vehicle: u32, stop_speed: f64, min_dwell: f64) -> usize {
    let rows: Vec<&TraceRecord> = trace.iter().filter(|r| r.vehicle == vehicle).collect();
    if rows.len() < 2 {
        return 0;
    }
    let dt = rows[1].t - rows[0].t;
    let speeds: Vec<f64> = rows.iter().map(|r| r.v).collect();
    stop_count_series(&speeds, dt, stop_speed, min_dwell)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedStatsRow {
    pub t: f64,
    pub route: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Instantaneous min/mean/max speed per route per tick, over the vehicles
/// present on that route (rows only for ticks with at least one vehicle).
/// `only` restricts the statistic to the given vehicles.
pub fn speed_stats(trace: &[TraceRecord], only: Option<&[u32]>) -> Vec<SpeedStatsRow> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        let t = trace[i].t;
        let mut j = i;
        let mut per_route: BTreeMap<usize, (f64, f64, f64, usize)> = BTreeMap::new();
        while j < trace.len() && trace[j].t == t {
            let r = &trace[j];
            j += 1;
            if let Some(ids) = only {
                if !ids.contains(&r.vehicle) {
                    continue;
                }
            }
            let e = per_route.entry(r.route).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0));
            e.0 = e.0.min(r.v);
            e.1 = e.1.max(r.v);
            e.2 += r.v;
            e.3 += 1;
        }
        for (route, (min, max, sum, n)) in per_route {
            out.push(SpeedStatsRow { t, route, min, mean: sum / n as f64, max });
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over the finite entries of `values`. A zero-span
/// sample lands entirely in the first bin; the maximum goes to the last.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mut counts = vec![0usize; bins];
    if finite.is_empty() {
        return Histogram { lo: 0.0, width: 0.0, counts };
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    for v in finite {
        let k = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    Histogram { lo, width, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub vehicle: u32,
    pub route: String,
    pub baseline: Option<f64>,
    pub optimal: Option<f64>,
    /// baseline − optimal, when both finished.
    pub saved: Option<f64>,
    /// 100 · saved / baseline, when both finished.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TravelTimeReport {
    pub rows: Vec<ReportRow>,
    /// Means over rows where both modes finished.
    pub mean_saved: Option<f64>,
    pub mean_percent: Option<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reports {
    pub travel: TravelTimeReport,
    pub baseline_stats: Vec<SpeedStatsRow>,
    pub optimal_stats: Vec<SpeedStatsRow>,
    pub baseline_hist: Histogram,
    pub optimal_hist: Histogram,
}

pub const HISTOGRAM_BINS: usize = 6;

/// Join the two modes' traces into the travel-time comparison, per-route
/// speed statistics, and per-mode arrival histograms. `ego_only` restricts
/// every product to the flagged vehicles.
pub fn build_reports(
    baseline: &[TraceRecord],
    optimal: &[TraceRecord],
    sc: &Scenario,
    threshold: f64,
    warmup: f64,
    ego_only: bool,
) -> Result<Reports, String> {
    let ids_in = |trace: &[TraceRecord]| {
        let mut ids: Vec<u32> = trace.iter().map(|r| r.vehicle).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let b_ids = ids_in(baseline);
    let o_ids = ids_in(optimal);
    if b_ids != o_ids {
        return Err(format!(
            "traces cover different fleets: baseline has {} vehicles, optimal has {}",
            b_ids.len(),
            o_ids.len()
        ));
    }

    let mut subjects: Vec<(u32, String)> = sc
        .fleet
        .iter()
        .filter(|f| !ego_only || f.ego)
        .map(|f| (f.id, sc.network.routes[f.route].id.clone()))
        .collect();
    subjects.sort_by_key(|(id, _)| *id);

    let mut rows = Vec::new();
    for (id, route) in subjects {
        let b = loop_travel_time(baseline, id, &sc.network, threshold, warmup)?;
        let o = loop_travel_time(optimal, id, &sc.network, threshold, warmup)?;
        let saved = match (b, o) {
            (Some(b), Some(o)) => Some(b - o),
            _ => None,
        };
        let percent = match (b, saved) {
            (Some(b), Some(s)) => Some(100.0 * s / b),
            _ => None,
        };
        rows.push(ReportRow { vehicle: id, route, baseline: b, optimal: o, saved, percent });
    }

    let finished: Vec<&ReportRow> = rows.iter().filter(|r| r.saved.is_some()).collect();
    let mean = |f: &dyn Fn(&ReportRow) -> f64| {
        if finished.is_empty() {
            None
        } else {
            Some(finished.iter().map(|r| f(r)).sum::<f64>() / finished.len() as f64)
        }
    };
    let mean_saved = mean(&|r| r.saved.unwrap());
    let mean_percent = mean(&|r| r.percent.unwrap());

    let ego_ids: Vec<u32> = sc.fleet.iter().filter(|f| f.ego).map(|f| f.id).collect();
    let only = if ego_only { Some(ego_ids.as_slice()) } else { None };
    let collect_times = |which: &dyn Fn(&ReportRow) -> Option<f64>| {
        rows.iter().filter_map(which).collect::<Vec<f64>>()
    };

    Ok(Reports {
        travel: TravelTimeReport { rows: rows.clone(), mean_saved, mean_percent, duration: sc.config.run.duration },
        baseline_stats: speed_stats(baseline, only),
        optimal_stats: speed_stats(optimal, only),
        baseline_hist: histogram(&collect_times(&|r| r.baseline), HISTOGRAM_BINS),
        optimal_hist: histogram(&collect_times(&|r| r.optimal), HISTOGRAM_BINS),
    })
}
