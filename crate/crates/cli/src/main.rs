//! `gif`: gradient checks, DHI projection, dataset generation, augmentation
//! previews, training, evaluation and reports for the gated fusion detector.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gif_fusion::degradation::TestCondition;
use gif_fusion::detector::FusionMode;

use config::ExperimentConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "gif", version, about = "Gated information fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every backward rule and the fusion block.
    Gradcheck(GradcheckArgs),
    /// Project a KITTI-format point cloud to a depth/height/intensity image.
    Project(ProjectArgs),
    /// Generate a synthetic paired-modality dataset.
    Generate(GenerateArgs),
    /// Write a randomly corrupted copy of a dataset with per-sample specs.
    Augment(AugmentArgs),
    /// Train one model per seed and fusion mode.
    Train(TrainArgs),
    /// Evaluate trained models on every test condition.
    Eval(EvalArgs),
    /// Aggregate per-seed evaluation reports.
    Report(ReportArgs),
    /// Print the resolved experiment configuration as TOML.
    Config(ExperimentArgs),
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// ops, gif or all.
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args)]
pub struct ProjectArgs {
    /// Point cloud of little-endian f32 (x, y, z, r) records.
    pub input: PathBuf,
    /// Whitespace-separated matrix: header `rows cols`, then the entries.
    #[arg(long)]
    pub calib: PathBuf,
    /// Output PPM; a JSON sidecar with projection counts is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_x: Option<f64>,
    #[arg(long)]
    pub max_z: Option<f64>,
    #[arg(long)]
    pub max_r: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// nearest or floor.
    #[arg(long, default_value = "nearest")]
    pub rounding: String,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scene parameters are read from the `[scene]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct AugmentArgs {
    /// Dataset directory written by `gif generate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// retarget or resample; overrides the config.
    #[arg(long)]
    pub policy: Option<String>,
    /// Corruption ranges and policy are read from the `[train]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Experiment config file plus flag overrides.
#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the configured seeds; repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Replaces the configured modes; repeatable.
    #[arg(long = "mode")]
    pub modes: Vec<FusionMode>,
    /// Replaces the configured test conditions; repeatable.
    #[arg(long = "condition")]
    pub conditions: Vec<TestCondition>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Defaults to $GIF_OUTPUT_DIR, then `gif-out`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = ExperimentConfig::load(self.config.as_deref())?;
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if !self.modes.is_empty() {
            c.modes = self.modes.clone();
        }
        if !self.conditions.is_empty() {
            c.conditions = self.conditions.clone();
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.train_samples {
            c.train_samples = v;
        }
        if let Some(v) = self.test_samples {
            c.test_samples = v;
        }
        if let Some(v) = &self.dataset_dir {
            c.dataset_dir = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.checkpoint_dir {
            c.checkpoint_dir = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Continue from existing checkpoints instead of starting over.
    #[arg(long)]
    pub resume: bool,
    /// Save a checkpoint every N epochs (0 saves only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Per-seed JSON reports written by `gif eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Enlargement factor of the PGM weight maps.
    #[arg(long, default_value_t = 8)]
    pub map_scale: usize,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
        Command::Project(a) => commands::project::run(&a),
        Command::Generate(a) => commands::data::generate(&a),
        Command::Augment(a) => commands::data::augment(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Report(a) => commands::report::run(&a),
        Command::Config(a) => {
            let c = a.resolve()?;
            print!("# config hash {}\n{}", c.hash(), c.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::Class::Config.exit_code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gif: {e}");
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
