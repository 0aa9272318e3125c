use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use robust_track::harness::adapt::{adapt, excitation_run, identification_csv, identify, tune_scalings, tuning_csv};
use robust_track::harness::emit::{emit_run, plot_script, read_metrics, METRICS_FILE};
use robust_track::harness::{baseline_boundaries, boundaries, compare, run_seeds, Config, Mode, RunMetrics};

#[derive(Parser)]
#[command(name = "robust-track", version, about = "Adaptive robust path tracking on a double lane change")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Arc,
    #[value(alias = "lmi-fixed")]
    Lmi,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Arc => Mode::Arc,
            ModeArg::Lmi => Mode::LmiFixed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and write trace, metrics and a plot script.
    Run {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "arc")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds; each gets a `seed-N` subdirectory when above one.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Override the configured scalings, as three comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        alpha: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the boundary scalings and write the evaluation history.
    Tune {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Disturbance seed of the objective run.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify tyre stiffness from an excitation run.
    Identify {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the mismatch regressions and write the envelope tables.
    FitGpr {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median metric comparison of two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write a plotting script next to a trace file.
    Plot {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn load(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Metrics files in `dir` and its immediate subdirectories.
fn collect_metrics(dir: &Path) -> Result<Vec<RunMetrics>> {
    let mut found = Vec::new();
    let direct = dir.join(METRICS_FILE);
    if direct.is_file() {
        found.push(read_metrics(&direct)?);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file())
        .collect();
    subdirs.sort();
    for d in subdirs {
        found.push(read_metrics(&d.join(METRICS_FILE))?);
    }
    if found.is_empty() {
        bail!("no {METRICS_FILE} under {}", dir.display());
    }
    Ok(found)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, mode, seed, count, alpha, out } => {
            let mut config = load(scenario.as_deref())?;
            if let Some(a) = alpha {
                config.arc.alpha = [a[0], a[1], a[2]];
                config.validate()?;
            }
            let mode = Mode::from(mode);
            let adaptation = adapt(&config)?;
            let bounds = match mode {
                Mode::Arc => boundaries(&adaptation, &config.arc.alpha),
                Mode::LmiFixed => baseline_boundaries(&config, &adaptation),
            };
            let seeds: Vec<u64> = (seed..seed + count.max(1)).collect();
            let outputs = run_seeds(&config, &bounds, mode, &seeds)?;
            for (s, output) in seeds.iter().zip(&outputs) {
                let dir = if seeds.len() > 1 { out.join(format!("seed-{s}")) } else { out.clone() };
                emit_run(&dir, output)?;
                let m = &output.metrics;
                println!(
                    "{mode} seed {s}: max |e_y| {:.4} m, max |beta| {:.4} rad, smoothness {:.4} rad, cost {:.3}{}",
                    m.max_lateral_error,
                    m.max_beta,
                    m.steering_smoothness,
                    m.cost,
                    if m.diverged { ", diverged" } else { "" }
                );
            }
        }
        Command::Tune { scenario, seed, out } => {
            let config = load(scenario.as_deref())?;
            let adaptation = adapt(&config)?;
            let result = tune_scalings(&config, &adaptation, seed)?;
            create(&out)?;
            write(&out.join("tuning.csv"), &tuning_csv(&result))?;
            write(&out.join("best.json"), &serde_json::to_string_pretty(&result.best)?)?;
            let a = &result.best.alpha;
            println!("best scalings [{:.4}, {:.4}, {:.4}], cost {:.4}", a[0], a[1], a[2], result.best.cost);
        }
        Command::Identify { scenario, out } => {
            let config = load(scenario.as_deref())?;
            let id = &config.identification;
            let samples = excitation_run(&config, id.duration, id.seed, false)?;
            let result = identify(&config, &samples);
            create(&out)?;
            write(&out.join("identification.csv"), &identification_csv(&result.trace))?;
            let theta = result.rls.stiffness();
            let truth = config.plant_params();
            println!("slip stiffness {:.1} (plant {:.1})", theta.slip, truth.slip_stiffness);
            println!("cornering stiffness {:.1} (plant {:.1})", theta.cornering, truth.cornering_stiffness);
            println!("{} updates, {} samples rejected", result.trace.len(), result.rejected);
        }
        Command::FitGpr { scenario, out } => {
            let config = load(scenario.as_deref())?;
            let adaptation = adapt(&config)?;
            create(&out)?;
            write(&out.join("yaw_gpr.csv"), &adaptation.yaw_gpr.to_csv())?;
            write(&out.join("wheel_gpr.csv"), &adaptation.wheel_gpr.to_csv())?;
            write(&out.join("yaw_envelope.csv"), &adaptation.yaw_envelope.to_csv())?;
            write(&out.join("wheel_envelope.csv"), &adaptation.wheel_envelope.to_csv())?;
            println!("yaw envelope: max {:.4}, held-out coverage {:.3}", adaptation.yaw_envelope.max_bound(), adaptation.yaw_coverage);
            println!("wheel envelope: max {:.4}, held-out coverage {:.3}", adaptation.wheel_envelope.max_bound(), adaptation.wheel_coverage);
        }
        Command::Compare { a, b } => {
            let comparison = compare(&collect_metrics(&a)?, &collect_metrics(&b)?)?;
            print!("{}", comparison.table());
        }
        Command::Plot { trace } => {
            let name = trace.file_name().and_then(|n| n.to_str()).context("trace path has no file name")?;
            if !trace.is_file() {
                bail!("{} does not exist", trace.display());
            }
            let script = trace.with_file_name("plot.py");
            write(&script, &plot_script(&[name]))?;
            println!("wrote {}; run it with python3 from that directory", script.display());
        }
    }
    Ok(())
}
