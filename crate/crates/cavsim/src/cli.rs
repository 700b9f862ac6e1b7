//! Command-line entry point: scenario validation, single-mode runs, paired
//! baseline/optimal comparisons, and speed-trace smoothing.
//!
//! Exit codes are a stable contract: 0 success, 1 validation or usage
//! failure, 2 runtime infeasibility, 3 I/O.

use crate::engine::{self, RunOutput, TraceRecord};
use crate::metrics;
use crate::network::Network;
use crate::output::{canonicalize_json, fmt_sig, write_jsonl, CsvWriter};
use crate::scenario::{load_config, resolve, Mode, Scenario, ScenarioError};
use clap::{Parser, Subcommand};
use serde_json::json;
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable naming the default output root (fallback: ./runs).
pub const OUT_ROOT_ENV: &str = "CAVSIM_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "cavsim",
    version,
    about = "Microscopic traffic simulator with coordinated conflict-zone crossing"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and cross-check a scenario file, listing every violation
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Simulate one mode and write trace, events, ledger, and manifest
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Control mode, overriding the scenario's [run] mode
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Tick length override, seconds
        #[arg(long)]
        dt: Option<f64>,
        /// Horizon override, seconds
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory (default: $CAVSIM_OUT or ./runs, named after the scenario and mode)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into an existing output directory
        #[arg(long)]
        overwrite: bool,
    },
    /// Run both modes with the same seed and emit travel-time comparison reports
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        /// Restrict reports to ego vehicles
        #[arg(long)]
        ego_only: bool,
        /// Loop-completion distance threshold, meters
        #[arg(long, default_value_t = 2.5)]
        threshold: f64,
        /// Ignore loop completions before this time, seconds
        #[arg(long, default_value_t = 5.0)]
        warmup: f64,
    },
    /// Smooth a (t,v) speed-trace CSV with outlier rejection
    Smooth {
        #[arg(long)]
        input: PathBuf,
        /// Moving-average window, seconds
        #[arg(long, default_value_t = 0.45)]
        window: f64,
        /// Discard speed samples above this value, m/s
        #[arg(long, default_value_t = 20.0)]
        cutoff: f64,
        /// Output CSV path (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn io(message: String) -> Self {
        Failure { code: EXIT_IO, message }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<engine::RunError> for Failure {
    fn from(e: engine::RunError) -> Self {
        Failure { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::io(e.to_string())
    }
}

/// Parse arguments and dispatch. Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            };
            let _ = e.print();
            return code;
        }
    };

    let result = match cli.command {
        Cmd::Validate { scenario } => cmd_validate(&scenario),
        Cmd::Run { scenario, mode, seed, dt, duration, out, overwrite } => {
            cmd_run(&scenario, mode, seed, dt, duration, out, overwrite)
        }
        Cmd::Compare {
            scenario,
            seed,
            dt,
            duration,
            out,
            overwrite,
            ego_only,
            threshold,
            warmup,
        } => cmd_compare(&scenario, seed, dt, duration, out, overwrite, ego_only, threshold, warmup),
        Cmd::Smooth { input, window, cutoff, out } => cmd_smooth(&input, window, cutoff, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let sc = resolve(load_config(path)?)?;
    println!(
        "ok: {} segments, {} routes, {} zones, {} vehicles, config hash {}",
        sc.network.segments.len(),
        sc.network.routes.len(),
        sc.network.zones.len(),
        sc.fleet.len(),
        sc.config_hash
    );
    Ok(())
}

fn scenario_with_overrides(
    path: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<Scenario, Failure> {
    let mut config = load_config(path)?;
    if let Some(m) = mode {
        config.run.mode = m;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    if let Some(v) = dt {
        config.run.dt = v;
    }
    if let Some(v) = duration {
        config.run.duration = v;
    }
    Ok(resolve(config)?)
}

fn default_out_dir(scenario: &Path, suffix: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stem = scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    root.join(format!("{stem}-{suffix}"))
}

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), Failure> {
    if dir.exists() && !overwrite {
        return Err(Failure::io(format!(
            "output directory {} already exists; pass --overwrite to reuse it",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_trace_csv(path: &Path, records: &[TraceRecord], net: &Network) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut csv = CsvWriter::new(
        io::BufWriter::new(file),
        "t,vehicle,route,p,v,u,zone,queue_index,t_zm,flags",
    )?;
    for r in records {
        csv.row(&[
            fmt_sig(r.t),
            r.vehicle.to_string(),
            net.routes[r.route].id.clone(),
            fmt_sig(r.p),
            fmt_sig(r.v),
            fmt_sig(r.u),
            r.zone.map(|z| net.zones[z].id.clone()).unwrap_or_default(),
            r.queue_index.map(|q| q.to_string()).unwrap_or_default(),
            r.t_zm.map(fmt_sig).unwrap_or_default(),
            r.flags.join(";"),
        ])?;
    }
    csv.into_inner().flush()
}

fn ledger_rows(out: &RunOutput, net: &Network) -> Vec<serde_json::Value> {
    let mut rows = Vec::new();
    for (zone_id, ledger) in &out.ledgers {
        let zone = &net.zones[net.zone_index(zone_id).expect("ledger zones come from the network")];
        for rec in &ledger.records {
            rows.push(json!({
                "zone": zone_id,
                "vehicle": rec.vehicle,
                "approach": zone.approaches[rec.approach].id,
                "scheduled_entry": rec.scheduled.0,
                "scheduled_exit": rec.scheduled.1,
                "realized_entry": rec.realized_entry,
                "realized_exit": rec.realized_exit,
            }));
        }
        for w in &ledger.warnings {
            rows.push(json!({ "zone": zone_id, "warning": w }));
        }
    }
    rows
}

/// Write trace/events/ledger for one run; returns the file names written.
fn write_run_outputs(dir: &Path, sc: &Scenario, out: &RunOutput) -> io::Result<Vec<String>> {
    write_trace_csv(&dir.join("trace.csv"), &out.trace, &sc.network)?;
    write_jsonl(
        io::BufWriter::new(std::fs::File::create(dir.join("events.jsonl"))?),
        &out.events,
    )?;
    write_jsonl(
        io::BufWriter::new(std::fs::File::create(dir.join("ledger.jsonl"))?),
        ledger_rows(out, &sc.network),
    )?;
    Ok(vec!["trace.csv".into(), "events.jsonl".into(), "ledger.jsonl".into()])
}

fn write_manifest(
    dir: &Path,
    scenario_path: &Path,
    sc: &Scenario,
    modes: &[Mode],
    outputs: &[String],
    wall_ms: u128,
) -> io::Result<()> {
    let mut manifest = json!({
        "config_hash": sc.config_hash,
        "scenario": scenario_path.display().to_string(),
        "modes": modes.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "seed": sc.config.run.seed,
        "dt": sc.config.run.dt,
        "duration": sc.config.run.duration,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
        "wall_ms": wall_ms as u64,
    });
    canonicalize_json(&mut manifest);
    let mut file = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario_path: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
    dt: Option<f64>,
    duration: Option<f64>,
    out: Option<PathBuf>,
    overwrite: bool,
) -> Result<(), Failure> {
    let sc = scenario_with_overrides(scenario_path, mode, seed, dt, duration)?;
    let mode = sc.config.run.mode;
    let dir = out.unwrap_or_else(|| default_out_dir(scenario_path, &mode.to_string()));
    prepare_dir(&dir, overwrite)?;

    let started = Instant::now();
    let run_out = engine::run(&sc, mode, sc.config.run.seed)?;
    let mut outputs = write_run_outputs(&dir, &sc, &run_out)?;
    outputs.push("manifest.json".into());
    write_manifest(&dir, scenario_path, &sc, &[mode], &outputs, started.elapsed().as_millis())?;

    println!(
        "{} run complete: {} trace rows, {} events -> {}",
        mode,
        run_out.trace.len(),
        run_out.events.len(),
        dir.display()
    );
    Ok(())
}

fn write_report_csv(path: &Path, reports: &metrics::Reports) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut csv = CsvWriter::new(
        io::BufWriter::new(file),
        "vehicle,route,baseline_s,optimal_s,saved_s,percent_decrease",
    )?;
    let duration = reports.travel.duration;
    for r in &reports.travel.rows {
        csv.row(&[
            r.vehicle.to_string(),
            r.route.clone(),
            metrics::format_travel_time(r.baseline, duration),
            metrics::format_travel_time(r.optimal, duration),
            r.saved.map(fmt_sig).unwrap_or_default(),
            r.percent.map(fmt_sig).unwrap_or_default(),
        ])?;
    }
    csv.into_inner().flush()
}

fn write_histogram_csv(path: &Path, reports: &metrics::Reports) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut csv = CsvWriter::new(io::BufWriter::new(file), "mode,bin,lo,hi,count")?;
    for (mode, hist) in
        [("baseline", &reports.baseline_hist), ("optimal", &reports.optimal_hist)]
    {
        for (k, count) in hist.counts.iter().enumerate() {
            let lo = hist.lo + k as f64 * hist.width;
            csv.row(&[
                mode.to_string(),
                k.to_string(),
                fmt_sig(lo),
                fmt_sig(lo + hist.width),
                count.to_string(),
            ])?;
        }
    }
    csv.into_inner().flush()
}

fn write_speed_stats_csv(
    path: &Path,
    stats: &[metrics::SpeedStatsRow],
    net: &Network,
) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut csv = CsvWriter::new(io::BufWriter::new(file), "t,route,min,mean,max")?;
    for s in stats {
        csv.row(&[
            fmt_sig(s.t),
            net.routes[s.route].id.clone(),
            fmt_sig(s.min),
            fmt_sig(s.mean),
            fmt_sig(s.max),
        ])?;
    }
    csv.into_inner().flush()
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    scenario_path: &Path,
    seed: Option<u64>,
    dt: Option<f64>,
    duration: Option<f64>,
    out: Option<PathBuf>,
    overwrite: bool,
    ego_only: bool,
    threshold: f64,
    warmup: f64,
) -> Result<(), Failure> {
    let sc = scenario_with_overrides(scenario_path, None, seed, dt, duration)?;
    let dir = out.unwrap_or_else(|| default_out_dir(scenario_path, "compare"));
    prepare_dir(&dir, overwrite)?;

    let started = Instant::now();
    let mut outputs = Vec::new();
    let mut traces = Vec::new();
    for mode in [Mode::Baseline, Mode::Optimal] {
        let sub = dir.join(mode.to_string());
        std::fs::create_dir_all(&sub)?;
        let run_out = engine::run(&sc, mode, sc.config.run.seed)?;
        for name in write_run_outputs(&sub, &sc, &run_out)? {
            outputs.push(format!("{mode}/{name}"));
        }
        traces.push(run_out.trace);
    }
    let (baseline, optimal) = (&traces[0], &traces[1]);

    let reports = metrics::build_reports(baseline, optimal, &sc, threshold, warmup, ego_only)
        .map_err(|message| Failure { code: EXIT_RUNTIME, message })?;

    write_report_csv(&dir.join("report.csv"), &reports)?;
    write_histogram_csv(&dir.join("histogram.csv"), &reports)?;
    write_speed_stats_csv(&dir.join("speed_stats_baseline.csv"), &reports.baseline_stats, &sc.network)?;
    write_speed_stats_csv(&dir.join("speed_stats_optimal.csv"), &reports.optimal_stats, &sc.network)?;

    let mut summary = serde_json::to_value(&reports.travel)?;
    summary["config_hash"] = json!(sc.config_hash);
    summary["seed"] = json!(sc.config.run.seed);
    summary["ego_only"] = json!(ego_only);
    summary["threshold"] = json!(threshold);
    summary["warmup"] = json!(warmup);
    canonicalize_json(&mut summary);
    let mut file = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut file, &summary)?;
    file.write_all(b"\n")?;

    outputs.extend(
        [
            "report.csv",
            "histogram.csv",
            "speed_stats_baseline.csv",
            "speed_stats_optimal.csv",
            "summary.json",
            "manifest.json",
        ]
        .map(String::from),
    );
    write_manifest(
        &dir,
        scenario_path,
        &sc,
        &[Mode::Baseline, Mode::Optimal],
        &outputs,
        started.elapsed().as_millis(),
    )?;

    match (reports.travel.mean_saved, reports.travel.mean_percent) {
        (Some(saved), Some(percent)) => println!(
            "compare complete: mean saving {} s ({} %) over {} vehicles -> {}",
            fmt_sig(saved),
            fmt_sig(percent),
            reports.travel.rows.len(),
            dir.display()
        ),
        _ => println!(
            "compare complete: no vehicle finished a loop in both modes -> {}",
            dir.display()
        ),
    }
    Ok(())
}

fn cmd_smooth(input: &Path, window: f64, cutoff: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", input.display())))?;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| {
            s.and_then(|x| x.trim().parse::<f64>().ok()).ok_or(Failure {
                code: EXIT_VALIDATION,
                message: format!("{}:{}: expected t,v", input.display(), lineno + 1),
            })
        };
        ts.push(parse(parts.next())?);
        vs.push(parse(parts.next())?);
    }
    if ts.len() < 2 {
        return Err(Failure {
            code: EXIT_VALIDATION,
            message: "need at least two samples to smooth".to_string(),
        });
    }
    let dt = ts[1] - ts[0];
    let smoothed = smooth_or_fail(&vs, dt, window, cutoff)?;

    let mut csv_out: Box<dyn Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(io::stdout()),
    };
    writeln!(csv_out, "t,v")?;
    for (t, v) in ts.iter().zip(&smoothed) {
        writeln!(csv_out, "{},{}", fmt_sig(*t), fmt_sig(*v))?;
    }
    Ok(())
}

fn smooth_or_fail(vs: &[f64], dt: f64, window: f64, cutoff: f64) -> Result<Vec<f64>, Failure> {
    metrics::smooth_speed(vs, dt, window, cutoff)
        .map_err(|message| Failure { code: EXIT_VALIDATION, message })
}
