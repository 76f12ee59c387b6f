use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use phd_jdtc::harness::{load_scenario, run_monte_carlo, run_once, write_outputs, Overrides, RunOptions};

/// Run filter-versus-smoother experiments on a scenario file.
#[derive(Debug, Parser)]
#[command(name = "phd-jdtc", version)]
struct Cli {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of Monte Carlo runs.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Base seed; run i uses seed + i. Defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Smoothing lag in scans.
    #[arg(long)]
    lag: Option<usize>,
    /// Particles per target and per birth component.
    #[arg(long)]
    particles: Option<usize>,
    /// Expected clutter detections per sensor per scan.
    #[arg(long)]
    clutter_rate: Option<f64>,
    /// Gate radius for the backward kernel; `inf` evaluates every particle pair.
    #[arg(long)]
    gate_radius: Option<f64>,
    /// Run the forward filter only.
    #[arg(long)]
    no_smoother: bool,
    /// Write each scan's filter particles of the first run under <out>/particles.
    #[arg(long)]
    dump_particles: bool,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        lag: cli.lag,
        particles: cli.particles,
        clutter_rate: cli.clutter_rate,
        gate_radius: cli.gate_radius,
        no_smoother: cli.no_smoother,
    };
    let scenario = load_scenario(&cli.scenario, &overrides).with_context(|| format!("loading {}", cli.scenario.display()))?;
    let seed = cli.seed.unwrap_or(scenario.config.seed);
    if cli.dump_particles {
        let options = RunOptions { dump_particles: Some(cli.out.join("particles")) };
        run_once(&scenario, seed, &options).context("particle dump run")?;
    }
    let report = run_monte_carlo(&scenario, cli.runs, seed)?;
    write_outputs(&cli.out, &scenario, &report).with_context(|| format!("writing to {}", cli.out.display()))?;
    if let Some(summary) = &report.summary {
        print!("{}", summary.render());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
