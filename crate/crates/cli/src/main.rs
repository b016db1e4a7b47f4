//! `discal simulate | calibrate | score`.
//!
//! Exit codes: 0 success, 1 bad input or I/O failure, 2 the solver stopped
//! without converging (the result is still written).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use discal::imu::IntegrationScheme;
use discal::io::{emit_report, load_truth, score, summary, write_simulation, ResultFile, RunConfig, SimulateConfig};
use discal::pipeline::calibrate;
use discal::synth::simulate;

#[derive(Parser)]
#[command(name = "discal", version, about = "Camera-IMU spatial-temporal calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data set and a matching calibrate config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write into this directory instead of the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the calibration described by a run config.
    Calibrate {
        config: PathBuf,
        /// `midpoint` or `euler`.
        #[arg(long)]
        scheme: Option<IntegrationScheme>,
        /// Keep every k-th camera frame.
        #[arg(long)]
        cam_rate_decimate: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a `result.json` with a `truth.json`.
    Score {
        result: PathBuf,
        truth: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = SimulateConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let dir = out.unwrap_or(cfg.output_dir);
            let sim = simulate(&cfg.synth)?;
            let run_config = write_simulation(&sim, &cfg.synth, &dir)?;
            println!(
                "wrote {} IMU samples and {} detection records; run `discal calibrate {}`",
                sim.imu.len(),
                sim.detections.len(),
                run_config.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate { config, scheme, cam_rate_decimate, out } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = scheme {
                cfg.solver.scheme = s;
            }
            if let Some(k) = cam_rate_decimate {
                cfg.cam_rate_decimate = k;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.paths.output_dir.clone());
            let input = cfg.load_input()?;
            log::info!("{} IMU samples, {} frames", input.imu.len(), input.frames.len());
            let report = calibrate(&input)?;
            let result = emit_report(&report, &dir)?;
            print!("{}", summary(&result));
            println!("results in {}", dir.display());
            Ok(if result.converged() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Score { result, truth, json } => {
            let r = ResultFile::load(&result).with_context(|| format!("loading {}", result.display()))?;
            let t = load_truth(&truth).with_context(|| format!("loading {}", truth.display()))?;
            let s = score(&r, &t)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                println!("{s}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
