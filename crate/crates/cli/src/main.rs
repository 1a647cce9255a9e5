use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pgslam::config::RunConfig;
use pgslam::pipeline::{self, Stage};
use pgslam::sim::scenes::SCENE_NAMES;

const USAGE: u8 = 1;
const STAGE_FAILURE: u8 = 2;

/// Batch LiDAR/IMU pose-graph back-end.
#[derive(Debug, Parser)]
#[command(name = "pgslam", version)]
struct Cli {
    /// run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// overrides the config worker count
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// skip stages whose outputs already exist
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated dataset and its config.toml
    Simulate {
        #[arg(long, default_value = "two_loop_circuit")]
        scene: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose candidate edges from the odometry
    Propose,
    /// Register candidate edges (parallel)
    Register,
    /// Gate constraints against the odometry
    Filter,
    /// Detect rests, segment biases and write the initial graph
    Build,
    /// Optimize the full graph
    Optimize,
    /// Proxy co-visibility of registered scan pairs
    Covis,
    /// Score the optimized trajectory
    Evaluate,
    /// Every stage in order
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(STAGE_FAILURE)
        }
    }
}

enum Failure {
    Usage(String),
    Stage(pipeline::PipelineError),
}

impl From<pipeline::PipelineError> for Failure {
    fn from(e: pipeline::PipelineError) -> Self {
        Failure::Stage(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let stage = match &cli.command {
        Command::Simulate { scene, out } => {
            if !SCENE_NAMES.contains(&scene.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown scene {scene:?}; expected one of {}",
                    SCENE_NAMES.join(", ")
                )));
            }
            let path = pipeline::simulate_dataset(scene, cli.seed.unwrap_or(0), out, cli.workers.unwrap_or(1))?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Propose => Stage::Propose,
        Command::Register => Stage::Register,
        Command::Filter => Stage::Filter,
        Command::Build => Stage::Build,
        Command::Optimize => Stage::Optimize,
        Command::Covis => Stage::Covis,
        Command::Evaluate => Stage::Evaluate,
        Command::Run => {
            let config = load_config(&cli)?;
            let report = pipeline::run_pipeline(&config, cli.resume)?;
            if let (Some(ate), Some(odom)) = (report.ate_rmse, report.odometry_ate_rmse) {
                println!("ATE {ate:.6} m (odometry {odom:.6} m)");
            }
            println!(
                "edges: {} proposed, {} registered, {} kept",
                report.edges.proposed, report.edges.registered, report.edges.kept
            );
            println!("outputs in {}", config.paths.output.display());
            return Ok(());
        }
    };
    let config = load_config(&cli)?;
    pipeline::run_stage(&config, stage, cli.resume)?;
    if stage == Stage::Evaluate {
        let report = config.paths.output.join(pipeline::REPORT);
        if let Ok(text) = std::fs::read_to_string(report) {
            println!("{text}");
        }
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <path> is required".into()))?;
    let mut config = RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}
