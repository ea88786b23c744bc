//! Command-line front end: synthesize scenarios, replay filter variants,
//! run scenario batches, and execute the acceptance check suite.
//!
//! Exit codes: 0 success, 1 input/configuration error (or failed check),
//! 2 filter divergence.

use chainfusion::check;
use chainfusion::config::{batch_from_file, run_from_file, scenario_from_file};
use chainfusion::ekf::FilterError;
use chainfusion::harness::{
    aggregate_batch, compute_metrics, run_batch, run_filter, simulate_scenario, truth_meta_of,
    write_aggregate_csv, write_errors_csv, write_estimates_csv, write_metrics_csv,
    write_params_csv, write_report, HarnessError, RunSetup,
};
use chainfusion::io::{
    read_truth, write_chain, write_fixes, write_imu, write_truth, write_truth_meta,
};
use chainfusion::runner::{FilterKind, PosSource};
use chainfusion::{build_layout, io::fmt_f64};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "chainfusion", version, about = "Pose fusion for IMU link chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: IMU, camera fix, reference fix, and
    /// ground-truth files.
    Simulate {
        /// Scenario config file (flat key-value).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay one filter over recorded or simulated streams.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured filter kind.
        #[arg(long, value_parser = parse_filter)]
        filter: Option<FilterKind>,
        /// Overrides the configured position source.
        #[arg(long, value_name = "slam|mocap|none", value_parser = parse_source)]
        pos_source: Option<PosSource>,
    },
    /// Run a scenario matrix across filter variants and aggregate the RMSEs.
    Batch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base seed; scenario i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acceptance suite, one pass/fail line per criterion.
    Check {
        /// Optional directory for the detailed report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated criterion numbers to run (default: all).
        #[arg(long)]
        only: Option<String>,
    },
}

fn parse_filter(s: &str) -> Result<FilterKind, String> {
    s.parse()
}

fn parse_source(s: &str) -> Result<PosSource, String> {
    s.parse()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Filter(FilterError::NonFinite)
                | HarnessError::Filter(FilterError::FactorNotPositive(_))
                | HarnessError::Filter(FilterError::InnovationNotSpd) => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn ensure_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = scenario_from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            ensure_dir(&out)?;
            let sim = simulate_scenario(&cfg)?;
            write_chain(&out.join("chain.cfg"), &cfg.model)?;
            write_imu(&out.join("imu.csv"), &sim.imu)?;
            write_fixes(&out.join("slam.csv"), &sim.slam)?;
            write_fixes(&out.join("mocap.csv"), &sim.mocap)?;
            write_truth(&out.join("truth.csv"), &sim.truth)?;
            write_truth_meta(&out.join("truth_meta.cfg"), &truth_meta_of(&cfg))?;
            write_run_config(&out, &cfg)?;
            println!(
                "simulated {} epochs, {} camera fixes, {} reference fixes -> {}",
                sim.truth.times.len(),
                sim.slam.len(),
                sim.mocap.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Run { config, out, filter, pos_source } => {
            let loaded = run_from_file(&config, filter, pos_source)?;
            ensure_dir(&out)?;
            let fixes = match loaded.pos_source {
                PosSource::Slam => loaded.slam.clone(),
                PosSource::Mocap => loaded.mocap.clone(),
                PosSource::None => Vec::new(),
            };
            let setup = RunSetup {
                model: loaded.model.clone(),
                imu: loaded.imu.clone(),
                fixes,
                pos_source: loaded.pos_source,
                runner: loaded.runner_template.clone(),
                leveling_window: loaded.leveling_window,
            };
            let run = run_filter(&setup)?;
            write_estimates_csv(&out.join("estimates.csv"), &run)?;
            write_params_csv(&out.join("params.csv"), &run)?;
            if let Some(truth_path) = &loaded.truth_path {
                let layout = Arc::new(build_layout(&loaded.model)?);
                let truth = read_truth(truth_path, &layout)?;
                let metrics = compute_metrics(
                    &run,
                    &truth.times,
                    &truth.states,
                    loaded.truth_meta.as_ref(),
                )?;
                write_errors_csv(&out.join("errors.csv"), &run, &truth.times, &truth.states)?;
                write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
                write_report(&out.join("report.cfg"), &metrics, run.skipped_channels)?;
                for lm in &metrics.links {
                    println!(
                        "{:12} position RMSE {:7.2} cm, attitude RMSE {:5.2} deg",
                        lm.label, lm.pos_rmse_cm, lm.att_rmse_deg
                    );
                }
                println!("mean cycle {} ms", fmt_f64(metrics.mean_cycle_ms));
            } else {
                println!(
                    "replayed {} epochs (no ground truth configured; estimates written)",
                    run.times.len()
                );
            }
            Ok(0)
        }
        Command::Batch { config, out, seed } => {
            let spec = batch_from_file(&config, seed)?;
            ensure_dir(&out)?;
            let runs = run_batch(&spec.scenarios, &spec.variants)?;
            let rows = aggregate_batch(&runs);
            write_aggregate_csv(&out.join("aggregate.csv"), &rows)?;
            for r in &rows {
                println!(
                    "{:8} {:12} mean pos RMSE {:7.2} cm  mean att RMSE {:5.2} deg",
                    r.variant, r.label, r.mean_pos_rmse_cm, r.mean_att_rmse_deg
                );
            }
            Ok(0)
        }
        Command::Check { out, only } => {
            let selected: Option<Vec<usize>> = match only {
                None => None,
                Some(list) => Some(
                    list.split(',')
                        .map(|s| {
                            s.trim().parse().map_err(|_| {
                                HarnessError::Input(format!("bad criterion id `{s}`"))
                            })
                        })
                        .collect::<Result<_, _>>()?,
                ),
            };
            let reports = check::run_suite(selected.as_deref());
            let mut all_pass = true;
            let mut text = String::new();
            for r in &reports {
                let line = format!(
                    "criterion {:2} [{}] {:<38} {} ({:.1} s)",
                    r.id,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.details,
                    r.seconds
                );
                println!("{line}");
                text.push_str(&line);
                text.push('\n');
                all_pass &= r.passed;
            }
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                std::fs::write(dir.join("check_report.txt"), text)
                    .map_err(|e| HarnessError::Input(e.to_string()))?;
            }
            Ok(if all_pass { 0 } else { 1 })
        }
    }
}

/// Writes a run config next to the simulated streams so `run` works out of
/// the box, with filter noise densities matching the scenario's sensors.
fn write_run_config(
    out: &Path,
    cfg: &chainfusion::sim::ScenarioConfig,
) -> Result<(), HarnessError> {
    let noise = chainfusion::harness::noise_for_scenario(cfg);
    let grav = noise
        .sigma_grav
        .map(|v| fmt_f64(v))
        .unwrap_or_else(|| "derive".into());
    let content = format!(
        "chain = chain.cfg\nimu = imu.csv\nslam = slam.csv\nmocap = mocap.csv\n\
         truth = truth.csv\ntruth_meta = truth_meta.cfg\nfilter = ekf\npos_source = slam\n\
         noise.sigma_a_psd = {}\nnoise.sigma_g_psd = {}\nnoise.sigma_cam = {}\n\
         noise.sigma_grav = {}\n",
        fmt_f64(noise.sigma_a[0]),
        fmt_f64(noise.sigma_g[0]),
        fmt_f64(noise.sigma_cam),
        grav,
    );
    std::fs::write(out.join("run.cfg"), content)
        .map_err(|e| HarnessError::Input(e.to_string()))
}
