//! Batch command-line front end for `ainet`.
//!
//! Every command reads one JSON run configuration, applies `--set key=value`
//! overrides and writes its artifacts into a fresh timestamped directory
//! under the output root. Exit status: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

pub mod chart;
pub mod commands;
pub mod config;
pub mod error;
pub mod mat;
pub mod rundir;

use std::path::PathBuf;

use ainet::selfcheck::{GradCheckOptions, SelfcheckOptions};
use clap::{Args, Parser, Subcommand};

pub use commands::Outcome;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ainet", version, about = "Hyperspectral image classification with AINet")]
pub struct Cli {
    /// Root directory for run outputs [default: $AINET_OUTPUT_ROOT, then ./runs].
    #[arg(long, global = true, value_name = "DIR")]
    pub output_root: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert MAT v5 cube and label files into a dataset manifest.
    Prepare {
        /// MAT file holding the H x W x L cube.
        #[arg(long)]
        cube: PathBuf,
        /// MAT file holding the H x W label map [default: the cube file].
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        cube_var: Option<String>,
        #[arg(long)]
        labels_var: Option<String>,
        /// Dataset name written into the manifest.
        #[arg(long)]
        name: String,
        /// Class count [default: the largest label].
        #[arg(long)]
        classes: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from scratch on the target split.
    Train(ConfigArgs),
    /// Pre-train on the source scenes of a transfer variant.
    Pretrain(ConfigArgs),
    /// Fine-tune a pre-trained checkpoint on the target split.
    Finetune {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint directory [default: transfer.pretrained].
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Score a checkpoint on the test side of the target split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print parameter counts of the configured network.
    ParamCount {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 103)]
        bands: usize,
        #[arg(long, default_value_t = 9)]
        classes: usize,
    },
    /// Aggregate run directories into comparison tables and charts.
    Report {
        /// Run, suite or parent directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Run the built-in numerical checks.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gradient entries compared against central differences.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Scale one analytic gradient entry by this factor (fault injection).
        #[arg(long, value_name = "FACTOR")]
        inject_fault: Option<f64>,
    },
    /// Train every configured variant for every seed and tabulate them.
    Suite(ConfigArgs),
}

/// Runs one parsed command and prints its outcome.
pub fn run(cli: Cli) -> CliResult<Outcome> {
    let flag = cli.output_root.as_deref();
    let outcome = match cli.command {
        Command::Prepare {
            cube,
            labels,
            cube_var,
            labels_var,
            name,
            classes,
            out,
        } => {
            let req = mat::PrepareRequest {
                labels_file: labels.unwrap_or_else(|| cube.clone()),
                cube_file: cube,
                cube_var,
                labels_var,
                name,
                classes,
                out_dir: out,
            };
            let manifest = mat::prepare(&req)?;
            Outcome {
                dir: manifest.parent().map(PathBuf::from),
                lines: vec![format!("wrote {}", manifest.display())],
            }
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            commands::train(&cfg, &rundir::output_root(flag, Some(&cfg)))?
        }
        Command::Pretrain(args) => {
            let cfg = args.load()?;
            commands::pretrain(&cfg, &rundir::output_root(flag, Some(&cfg)))?
        }
        Command::Finetune { config, pretrained } => {
            let cfg = config.load()?;
            commands::finetune(&cfg, pretrained.as_deref(), &rundir::output_root(flag, Some(&cfg)))?
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = config.load()?;
            commands::evaluate(&cfg, &checkpoint, &rundir::output_root(flag, Some(&cfg)))?
        }
        Command::ParamCount { config, bands, classes } => {
            let cfg = config.load()?;
            commands::param_count(&cfg.model, bands, classes)?
        }
        Command::Report { dirs } => commands::report(&dirs, &rundir::output_root(flag, None))?,
        Command::Selfcheck {
            seed,
            samples,
            inject_fault,
        } => {
            let options = SelfcheckOptions {
                seed,
                grad: GradCheckOptions {
                    samples,
                    seed,
                    fault: inject_fault,
                    ..GradCheckOptions::default()
                },
            };
            commands::selfcheck(&options)?
        }
        Command::Suite(args) => {
            let cfg = args.load()?;
            commands::suite(&cfg, &rundir::output_root(flag, Some(&cfg)))?
        }
    };
    Ok(outcome)
}
