use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imu_moco::experiment::{
    run_experiment, run_noise_sweep, ExperimentConfig, Manifest, Profile, Stage, METRICS_CSV,
};
use imu_moco::recon::Method;
use imu_moco::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "imu-moco", version, about = "IMU-based motion compensation for weight-bearing CBCT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom motion, projections and IMU signals.
    Simulate(Common),
    /// Sensor pose and velocity from the first two projections.
    Init(Common),
    /// Pose tracks, rigid motion series and joint positions.
    Correct(Common),
    /// Reference volume and one volume per method.
    Reconstruct(Common),
    /// SSIM and RMSE per method and region.
    Evaluate(Common),
    /// Motion error over a grid of noise levels.
    NoiseSweep(Common),
    /// Every stage followed by the noise sweep.
    Pipeline(Common),
    /// Prints the effective configuration as JSON.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Geometry profile; overrides the configuration.
    #[arg(long)]
    profile: Option<String>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods, e.g. `none,rigid,mls2d,mls3d`.
    #[arg(long)]
    methods: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(p) = &self.profile {
            cfg.profile = p.parse::<Profile>()?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(list) = &self.methods {
            cfg.methods = list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse::<Method>)
                .collect::<Result<_, _>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(cfg: &ExperimentConfig, manifest: &Manifest) {
    println!(
        "{} artifacts written to {} (stages: {})",
        manifest.artifacts.len(),
        cfg.output_dir.display(),
        manifest.stages.join(", ")
    );
}

fn run(command: Command) -> Result<(), Error> {
    let (common, stage) = match &command {
        Command::Simulate(c) => (c, Some(Stage::Simulate)),
        Command::Init(c) => (c, Some(Stage::Init)),
        Command::Correct(c) => (c, Some(Stage::Correct)),
        Command::Reconstruct(c) => (c, Some(Stage::Reconstruct)),
        Command::Evaluate(c) | Command::Pipeline(c) => (c, Some(Stage::Evaluate)),
        Command::NoiseSweep(c) | Command::ShowConfig(c) => (c, None),
    };
    let cfg = common.resolve()?;
    if let Command::ShowConfig(_) = command {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let out = cfg.output_dir.clone();
    if let Some(stage) = stage {
        let manifest = run_experiment(&cfg, &out, stage)?;
        report(&cfg, &manifest);
        if stage == Stage::Evaluate {
            print!("{}", std::fs::read_to_string(out.join(METRICS_CSV))?);
        }
    }
    if matches!(command, Command::NoiseSweep(_) | Command::Pipeline(_)) {
        let (manifest, table) = run_noise_sweep(&cfg, &out)?;
        report(&cfg, &manifest);
        print!("{}", table.to_table_csv());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_STAGE })
        }
    }
}
