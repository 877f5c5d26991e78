//! `v2itrack` — command-line front end for the tracking simulator.
//!
//! Three subcommands: `map` precomputes a service-area map CSV, `track` runs
//! one Monte Carlo tracking experiment, `sweep` runs the tracker × antenna
//! cartesian product with a shared seed. Every run writes a JSON sidecar with
//! the fully resolved configuration; a sidecar can be fed back via `--config`
//! to reproduce the run exactly.
//!
//! Exit codes: 0 success; 2 usage; 3 unreadable or invalid config;
//! 4 invalid `--set` override; 5 unknown preset; 6 output write failure;
//! 7 sweep combination failure.

mod config;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::exit;

use config::{apply_override, RunSpec};
use v2itrack_core::selection::{
    build_service_area_map, write_map_csv, GridSpec, TAU_SANR_DEFAULT, TAU_SNR_DEFAULT,
};
use v2itrack_core::sim::{run_monte_carlo, write_track_csv, MseSeries, PRESET_NAMES};

const EXIT_CONFIG: i32 = 3;
const EXIT_OVERRIDE: i32 = 4;
const EXIT_PRESET: i32 = 5;
const EXIT_OUTPUT: i32 = 6;
const EXIT_SWEEP: i32 = 7;

#[derive(Parser)]
#[command(name = "v2itrack", version, about = "mmWave V2I vehicle-tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute a service-area map over the road grid.
    Map(MapArgs),
    /// Run one Monte Carlo tracking experiment.
    Track(TrackArgs),
    /// Run the tracker × antenna sweep with a shared seed.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Preset name: fig3_crossoverB, fig4a_rsu1area, fig4b_rsu2area,
    /// fig5_rsu12 (and fig2 for `map`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON config file; a previous run's sidecar works as-is.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set motion.Ts=0.005 (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Monte Carlo trials (overrides the config value).
    #[arg(long)]
    trials: Option<u32>,
    /// Master seed (overrides the config value).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Selection metric: snr or sanr. Resets tau_th to the metric's default
    /// (0.662 / 0.98) unless --tau is also given.
    #[arg(long)]
    policy: Option<String>,
    /// Threshold τ_th ∈ (0, 1]; τ = 1 degenerates to the pure argmax map.
    #[arg(long)]
    tau: Option<f64>,
    /// Grid pitch in meters (default 0.5).
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tracker: fixed:<1|2|3>, snr, sanr, snr-joint, sanr-joint, full.
    #[arg(long)]
    tracker: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated tracker list.
    #[arg(long, default_value = "sanr,snr-joint,sanr-joint,full")]
    trackers: String,
    /// Comma-separated antenna counts.
    #[arg(long, default_value = "32,64")]
    antennas: String,
}

fn fail(code: i32, msg: &str) -> ! {
    eprintln!("v2itrack: {msg}");
    exit(code);
}

/// Usage errors that clap cannot catch (it exits with 2 on its own).
fn usage_error(msg: &str) -> ! {
    eprintln!("v2itrack: {msg}");
    exit(2);
}

/// Loads the base config tree from --preset or --config.
fn base_tree(common: &CommonArgs, map_command: bool) -> Value {
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).unwrap_or_else(|e| {
            fail(EXIT_CONFIG, &format!("cannot read config {}: {e}", path.display()))
        });
        return serde_json::from_str(&text).unwrap_or_else(|e| {
            fail(EXIT_CONFIG, &format!("config {} is not valid JSON: {e}", path.display()))
        });
    }
    let Some(name) = &common.preset else {
        usage_error("one of --preset or --config is required");
    };
    // fig2 is the map-geometry alias: same network as fig5_rsu12; only the
    // geometry/radio/policy sections matter to the map command.
    let resolved = if map_command && name == "fig2" { "fig5_rsu12" } else { name };
    let spec = RunSpec::from_preset(resolved).unwrap_or_else(|e| {
        let mut names: Vec<&str> = PRESET_NAMES.to_vec();
        if map_command {
            names.insert(0, "fig2");
        }
        fail(EXIT_PRESET, &format!("{e}; available: {}", names.join(", ")))
    });
    serde_json::to_value(&spec).expect("RunSpec serializes")
}

/// Resolves the fully-overridden RunSpec for a command.
fn resolve_spec(common: &CommonArgs, map_command: bool) -> RunSpec {
    let mut tree = base_tree(common, map_command);
    for assignment in &common.set {
        apply_override(&mut tree, assignment)
            .unwrap_or_else(|e| fail(EXIT_OVERRIDE, &format!("invalid override: {e}")));
    }
    let had_overrides = !common.set.is_empty();
    let mut spec: RunSpec = serde_json::from_value(tree).unwrap_or_else(|e| {
        if had_overrides {
            fail(EXIT_OVERRIDE, &format!("override produced an invalid config: {e}"))
        } else {
            fail(EXIT_CONFIG, &format!("config does not match the run schema: {e}"))
        }
    });
    if let Some(t) = common.trials {
        spec.trials = t;
    }
    if let Some(s) = common.seed {
        spec.master_seed = s;
    }
    spec.meta = None;
    spec
}

/// Attaches the provenance block and writes `<csv_path>.run.json`.
fn write_sidecar(spec: &RunSpec, csv_path: &Path, extra_meta: Value) -> Vec<PathBuf> {
    let mut stamped = spec.clone();
    let argv: Vec<String> = std::env::args().collect();
    let mut meta = json!({
        "schema": "v2itrack-run/1",
        "tool": format!("v2itrack {}", env!("CARGO_PKG_VERSION")),
        "command": argv.join(" "),
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut meta, extra_meta) {
        m.extend(extra);
    }
    stamped.meta = Some(meta);
    let body = serde_json::to_string_pretty(&stamped).expect("RunSpec serializes");
    let sidecar = csv_path.with_extension("csv.run.json");
    fs::write(&sidecar, body.as_bytes())
        .unwrap_or_else(|e| fail(EXIT_OUTPUT, &format!("cannot write {}: {e}", sidecar.display())));
    vec![sidecar]
}

fn ensure_out_dir(dir: &Path) {
    fs::create_dir_all(dir).unwrap_or_else(|e| {
        fail(EXIT_OUTPUT, &format!("cannot create output directory {}: {e}", dir.display()))
    });
}

fn write_file(path: &Path, bytes: &[u8]) {
    fs::write(path, bytes)
        .unwrap_or_else(|e| fail(EXIT_OUTPUT, &format!("cannot write {}: {e}", path.display())));
}

fn series_is_finite(series: &MseSeries) -> bool {
    series.mse_x.iter().chain(&series.mse_v).all(|v| v.is_finite())
}

/// Runs one tracking scenario and writes `<stem>.csv` plus its sidecar.
/// Returns the CSV path.
fn run_and_write_track(spec: &RunSpec, out: &Path, stem: &str) -> Result<PathBuf, String> {
    let scenario = spec.to_scenario()?;
    let series = run_monte_carlo(&scenario);
    if !series_is_finite(&series) {
        return Err("MSE series contains non-finite values".into());
    }
    let mut csv = Vec::new();
    write_track_csv(&series, &mut csv).map_err(|e| e.to_string())?;
    let csv_path = out.join(format!("{stem}.csv"));
    write_file(&csv_path, &csv);
    write_sidecar(spec, &csv_path, json!({}));
    Ok(csv_path)
}

fn cmd_track(args: &TrackArgs) {
    let mut spec = resolve_spec(&args.common, false);
    if let Some(t) = &args.tracker {
        spec.tracker = t.clone();
    }
    ensure_out_dir(&args.common.out);
    let csv_path = run_and_write_track(&spec, &args.common.out, "track")
        .unwrap_or_else(|e| fail(EXIT_CONFIG, &e));
    // The sidecar is duplicated under the plain name for discoverability.
    let run_json = args.common.out.join("run.json");
    let sidecar = csv_path.with_extension("csv.run.json");
    let body = fs::read(&sidecar)
        .unwrap_or_else(|e| fail(EXIT_OUTPUT, &format!("cannot reread sidecar: {e}")));
    write_file(&run_json, &body);
    println!("{}", csv_path.display());
    println!("{}", sidecar.display());
    println!("{}", run_json.display());
}

fn cmd_map(args: &MapArgs) {
    let mut spec = resolve_spec(&args.common, true);
    if let Some(metric) = &args.policy {
        match metric.as_str() {
            "snr" => {
                spec.policy.metric = "snr".into();
                spec.policy.tau_th = TAU_SNR_DEFAULT;
            }
            "sanr" => {
                spec.policy.metric = "sanr".into();
                spec.policy.tau_th = TAU_SANR_DEFAULT;
            }
            other => usage_error(&format!("unknown --policy '{other}' (snr or sanr)")),
        }
    }
    if let Some(tau) = args.tau {
        spec.policy.tau_th = tau;
    }
    let scenario = spec.to_scenario().unwrap_or_else(|e| fail(EXIT_CONFIG, &e));
    let mut grid = GridSpec::default_for(&scenario.geometry);
    if let Some(res) = args.resolution {
        grid.resolution = res;
    }
    if let Err(e) = grid.validate() {
        fail(EXIT_CONFIG, &e.to_string());
    }
    let map = build_service_area_map(&scenario.policy, &grid, &scenario.geometry, &scenario.radio);
    let mut csv = Vec::new();
    write_map_csv(&map, &mut csv)
        .unwrap_or_else(|e| fail(EXIT_OUTPUT, &format!("cannot render map: {e}")));
    ensure_out_dir(&args.common.out);
    let csv_path = args.common.out.join("map.csv");
    write_file(&csv_path, &csv);
    let meta = json!({ "map": {
        "grid": { "x_min": grid.x_min, "x_max": grid.x_max, "y_min": grid.y_min,
                   "y_max": grid.y_max, "resolution": grid.resolution },
    }});
    write_sidecar(&spec, &csv_path, meta);
    println!("{}", csv_path.display());
    println!("{}", csv_path.with_extension("csv.run.json").display());
}

fn cmd_sweep(args: &SweepArgs) {
    let trackers: Vec<&str> =
        args.trackers.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let antennas: Vec<usize> = args
        .antennas
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .unwrap_or_else(|_| usage_error(&format!("--antennas entry '{s}' is not a count")))
        })
        .collect();
    if trackers.is_empty() || antennas.is_empty() {
        usage_error("sweep needs at least one tracker and one antenna count");
    }
    let base = resolve_spec(&args.common, false);
    ensure_out_dir(&args.common.out);
    for tracker in &trackers {
        for &m in &antennas {
            let mut spec = base.clone();
            spec.tracker = (*tracker).to_string();
            spec.radio.m = m;
            // Each joint tracker runs under its own metric's canonical
            // threshold so the curves are comparable at matched usage.
            if tracker.starts_with("snr") {
                spec.policy.metric = "snr".into();
                spec.policy.tau_th = TAU_SNR_DEFAULT;
            } else if tracker.starts_with("sanr") {
                spec.policy.metric = "sanr".into();
                spec.policy.tau_th = TAU_SANR_DEFAULT;
            }
            let stem = format!("track_{}_M{m}", tracker.replace(':', "-"));
            match run_and_write_track(&spec, &args.common.out, &stem) {
                Ok(csv_path) => println!("{}", csv_path.display()),
                Err(e) => fail(
                    EXIT_SWEEP,
                    &format!("sweep combination tracker={tracker} M={m} failed: {e}"),
                ),
            }
        }
    }
}

fn main() {
    match Cli::parse().command {
        Command::Map(args) => cmd_map(&args),
        Command::Track(args) => cmd_track(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}
