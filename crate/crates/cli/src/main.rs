use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sslio_core::config::PipelineConfig;
use sslio_core::eval::{ape, end_to_end_error};
use sslio_core::io::{read_tum, scan_file_name, write_imu_csv, write_ply, write_scan, write_tum, StampedPose, TrajectoryRecord};
use sslio_core::pipeline::{load_inputs, run_pipeline, PipelineError, PipelineOutput};
use sslio_core::sim::{Scenario, SCENARIOS};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_TRACKING_LOST: u8 = 3;

#[derive(Parser)]
#[command(name = "sslio", version, about = "LiDAR-inertial odometry and mapping for solid-state LiDARs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry and mapping on a recorded sequence.
    Run {
        /// Flat key=value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Directory of scan files.
        #[arg(long)]
        scans: PathBuf,
        /// IMU CSV file.
        #[arg(long)]
        imu: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Disable loop closure.
        #[arg(long)]
        no_loop: bool,
        /// Disable IMU constraints in the backend.
        #[arg(long)]
        no_imu: bool,
        /// Output frontend odometry only (no backend, no loop closure).
        #[arg(long)]
        frontend_only: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic sequence with ground truth.
    Simulate {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare an estimated trajectory against a reference.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

/// An error with its exit code.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(1, e.into())
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_INPUT, e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, scans, imu, out, no_loop, no_imu, frontend_only, seed } => {
            run(&config, &scans, &imu, &out, no_loop, no_imu, frontend_only, seed)
        }
        Command::Simulate { scenario, out, seed } => simulate(&scenario, &out, seed).map_err(Failure::from),
        Command::Eval { est, reference } => evaluate(&est, &reference),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn write_output(out: &Path, output: &PipelineOutput) -> Result<()> {
    write_tum(&out.join("trajectory.tum"), &output.trajectory)?;
    write_tum(&out.join("odometry.tum"), &output.odometry)?;
    write_ply(&out.join("map.ply"), &output.map)?;
    std::fs::write(out.join("report.txt"), output.report.to_text()).context("writing report")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(config: &Path, scans: &Path, imu: &Path, out: &Path, no_loop: bool, no_imu: bool, frontend_only: bool, seed: Option<u64>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display())).map_err(input)?;
    let mut cfg = PipelineConfig::parse(&text).with_context(|| format!("parsing {}", config.display())).map_err(input)?;
    cfg.loop_closure &= !no_loop;
    cfg.use_imu &= !no_imu;
    cfg.frontend_only |= frontend_only;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(input)?;
    let (sweeps, samples) = load_inputs(scans, imu).map_err(input)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let _ = std::fs::remove_file(out.join("FAILED"));
    match run_pipeline(&cfg, &sweeps, &samples) {
        Ok(output) => {
            write_output(out, &output)?;
            println!("{} frames, {} keyframes, {} loops", output.report.frames, output.report.keyframes, output.report.loops.len());
            Ok(())
        }
        Err(PipelineError::TrackingLost { frame, partial }) => {
            write_output(out, &partial)?;
            std::fs::write(out.join("FAILED"), format!("tracking lost at frame {frame}\n")).context("writing failure marker")?;
            Err(Failure(EXIT_TRACKING_LOST, anyhow::anyhow!("tracking lost at frame {frame}; partial output written")))
        }
        Err(e @ (PipelineError::InputFormat(_) | PipelineError::Io(_) | PipelineError::Config(_))) => Err(input(e)),
        Err(e) => Err(e.into()),
    }
}

fn simulate(name: &str, out: &Path, seed: u64) -> Result<()> {
    let scenario = Scenario::by_name(name).with_context(|| format!("unknown scenario {name}"))?;
    let data = scenario.generate(seed);
    let scans = out.join("scans");
    std::fs::create_dir_all(&scans).with_context(|| format!("creating {}", scans.display()))?;
    for (k, w) in data.sweeps.iter().enumerate() {
        write_scan(&scans.join(scan_file_name(k)), w)?;
    }
    write_imu_csv(&out.join("imu.csv"), &data.imu)?;
    let truth = TrajectoryRecord::new(data.truth.iter().map(|&(time, pose)| StampedPose { time, pose }).collect()).map_err(anyhow::Error::msg)?;
    write_tum(&out.join("truth.tum"), &truth)?;
    let mut cfg = PipelineConfig::for_scenario(name);
    cfg.seed = seed;
    std::fs::write(out.join("config.txt"), cfg.to_text()).context("writing config")?;
    println!("{} sweeps, {} IMU samples written to {}", data.sweeps.len(), data.imu.len(), out.display());
    Ok(())
}

fn evaluate(est: &Path, reference: &Path) -> Result<(), Failure> {
    let est = read_tum(est).map_err(input)?;
    let reference = read_tum(reference).map_err(input)?;
    let a = ape(&est, &reference).map_err(input)?;
    println!("ape_rmse={}", a.rmse);
    println!("ape_max={}", a.max);
    println!("pairs={}", a.pairs);
    println!("end_to_end={}", end_to_end_error(&est));
    Ok(())
}
