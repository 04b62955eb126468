//! Thin command-line front end over the library pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panoslam::pipeline::{
    self, evaluate_ate, export_map, generate_dataset, run_slam, ExportFormat, GenerateConfig,
    Resolution, RunConfig, TrajectorySpec,
};
use panoslam::sim::scenes::SCENE_NAMES;

#[derive(Parser)]
#[command(name = "panoslam", version, about = "Lidar SLAM on a graph of panoramic depth keyframes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM over a recorded sweep log
    Slam {
        #[command(subcommand)]
        command: SlamCommand,
    },
    /// Generate synthetic datasets
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Trajectory evaluation
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Map archive exports
    Map {
        #[command(subcommand)]
        command: MapCommand,
    },
}

#[derive(Subcommand)]
enum SlamCommand {
    /// Process every sweep of a log and write trajectory, map, and timings
    Run(SlamRunArgs),
}

#[derive(Args)]
struct SlamRunArgs {
    /// Binary sweep log
    #[arg(long)]
    sweeps: PathBuf,
    /// IMU CSV (t,wx,wy,wz,ax,ay,az)
    #[arg(long)]
    imu: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Declarative TOML configuration (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registration quality below which a new keyframe is sought
    #[arg(long)]
    quality_threshold: Option<f64>,
    /// Motion prior: zero-velocity or zero-acceleration
    #[arg(long)]
    motion_prior: Option<String>,
    /// Keyframe resolution: 2048x256 or 1024x128
    #[arg(long)]
    resolution: Option<String>,
    /// Worker thread count (default: PANOSLAM_THREADS or all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Force deterministic reductions (always on; recorded in the summary)
    #[arg(long)]
    deterministic: bool,
    /// Stream far-away keyframes to disk during the run
    #[arg(long)]
    stream_keyframes: bool,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Synthesize a dataset (sweep log + IMU CSV + ground truth)
    Generate(SimGenerateArgs),
}

#[derive(Args)]
struct SimGenerateArgs {
    /// Scene name
    #[arg(long, default_value = "square-loop")]
    scene: String,
    /// Trajectory spec: stationary:<s>, line:<m>x<m/s>, square:<m>x<m/s>
    #[arg(long, default_value = "square:40x2")]
    trajectory: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
    /// Sweep columns per revolution
    #[arg(long, default_value_t = 512)]
    columns: u32,
    /// Range noise standard deviation (meters)
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Per-return dropout probability
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// List available scenes and exit
    #[arg(long)]
    list_scenes: bool,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Absolute trajectory error between two trajectory files
    Ate(EvalAteArgs),
}

#[derive(Args)]
struct EvalAteArgs {
    /// Estimated trajectory (t tx ty tz qx qy qz qw)
    #[arg(long)]
    estimated: PathBuf,
    /// Ground-truth trajectory
    #[arg(long)]
    ground_truth: PathBuf,
    /// Association tolerance in seconds
    #[arg(long, default_value_t = 0.05)]
    max_dt: f64,
    /// Where to write the error series CSV
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MapCommand {
    /// Export a map archive
    Export(MapExportArgs),
}

#[derive(Args)]
struct MapExportArgs {
    /// Map archive directory
    #[arg(long)]
    map: PathBuf,
    /// point-cloud, trajectory, or graph
    #[arg(long)]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> panoslam::Result<()> {
    match cli.command {
        Command::Slam { command: SlamCommand::Run(args) } => {
            let mut config = RunConfig::new(args.sweeps, args.imu, args.out);
            if let Some(path) = &args.config {
                let file = pipeline::config_file::load(path)?;
                pipeline::config_file::apply(&file, &mut config.mapper)?;
                config.threads = file.threads.or(config.threads);
                config.deterministic = file.deterministic.unwrap_or(config.deterministic);
                config.stream_keyframes = file.stream_keyframes.unwrap_or(config.stream_keyframes);
            }
            if let Some(q) = args.quality_threshold {
                config.mapper.quality_threshold = q;
            }
            if let Some(m) = &args.motion_prior {
                config.mapper.motion_prior = panoslam::mapper::MotionPrior::parse(m)?;
            }
            if let Some(r) = &args.resolution {
                config.mapper.keyframe_model = Resolution::parse(r)?.model();
            }
            if args.threads.is_some() {
                config.threads = args.threads;
            }
            config.deterministic |= args.deterministic;
            config.stream_keyframes |= args.stream_keyframes;
            config.mapper.validate()?;
            let summary = run_slam(&config)?;
            print!("{}", summary.render());
            println!("trajectory: {}", summary.trajectory_path.display());
            println!("map:        {}", summary.map_dir.display());
            println!("timing:     {}", summary.timing_path.display());
            Ok(())
        }
        Command::Sim { command: SimCommand::Generate(args) } => {
            if args.list_scenes {
                for name in SCENE_NAMES {
                    println!("{name}");
                }
                return Ok(());
            }
            let spec = TrajectorySpec::parse(&args.trajectory)?;
            let mut config = GenerateConfig::new(&args.scene, spec, args.seed, args.out);
            config.sensor.columns = args.columns;
            config.sensor.noise_sigma = args.noise_sigma;
            config.sensor.dropout = args.dropout;
            let dataset = generate_dataset(&config)?;
            println!("sweeps:       {} ({})", dataset.sweep_log.display(), dataset.sweep_count);
            println!("imu:          {}", dataset.imu_log.display());
            println!("ground truth: {}", dataset.ground_truth.display());
            Ok(())
        }
        Command::Eval { command: EvalCommand::Ate(args) } => {
            let out = evaluate_ate(
                &args.estimated,
                &args.ground_truth,
                args.max_dt,
                args.out_csv.as_deref(),
            )?;
            println!("correspondences: {}", out.report.correspondences);
            println!("median error:    {:.4} m", out.report.median);
            println!("rmse:            {:.4} m", out.report.rmse);
            if let Some(path) = out.series_path {
                println!("error series:    {}", path.display());
            }
            Ok(())
        }
        Command::Map { command: MapCommand::Export(args) } => {
            let format = ExportFormat::parse(&args.format)?;
            let n = export_map(&args.map, format, &args.out)?;
            println!("wrote {} ({n} records)", args.out.display());
            Ok(())
        }
    }
}
