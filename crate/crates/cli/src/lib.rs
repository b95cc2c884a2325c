//! The `bathy` command-line pipeline: synthetic surveys, training, loop
//! closure, registration and the bag-of-words baseline.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod output;
pub mod report;
pub mod synth;
pub mod train;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};
use output::Workspace;

#[derive(Debug, Parser)]
#[command(
    name = "bathy",
    version,
    about = "Learned keypoints for bathymetric loop closure on synthetic surveys"
)]
pub struct Cli {
    /// TOML configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Replace existing outputs instead of refusing to run.
    #[arg(long, global = true)]
    pub overwrite: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Dataset manifest [default: OUT/dataset/manifest.txt].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Trained checkpoint [default: OUT/train/model.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate terrain, simulate the survey and build the pair dataset.
    Synth {
        /// Disable navigation drift (dead reckoning equals ground truth).
        #[arg(long)]
        zero_drift: bool,
    },
    /// Rebuild the pair dataset from a survey directory.
    Dataset {
        /// Survey directory [default: OUT/survey].
        #[arg(long)]
        survey: Option<PathBuf>,
    },
    /// Train the descriptor network with the triplet loss.
    Train {
        /// Dataset manifest [default: OUT/dataset/manifest.txt].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total number of epochs (including resumed ones).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Deliberately break one backward rule (softplus or matmul).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Loop-closure detection on the test pairs.
    Evaluate(ModelArgs),
    /// Coarse-to-fine registration of test pairs.
    Register(ModelArgs),
    /// Harris3D + SHOT bag-of-words similarity on the test pairs.
    Baseline {
        /// Dataset manifest [default: OUT/dataset/manifest.txt].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Summarize the run reports in the output directory.
    Report,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Synth { zero_drift: true } => cfg.drift.zero = true,
        Command::Dataset { survey: Some(s) } => cfg.paths.survey = Some(s.clone()),
        Command::Train {
            manifest, epochs, ..
        } => {
            if let Some(m) = manifest {
                cfg.paths.manifest = Some(m.clone());
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Evaluate(m) | Command::Register(m) => {
            if let Some(p) = &m.manifest {
                cfg.paths.manifest = Some(p.clone());
            }
            if let Some(p) = &m.checkpoint {
                cfg.paths.checkpoint = Some(p.clone());
            }
        }
        Command::Baseline { manifest: Some(m) } => cfg.paths.manifest = Some(m.clone()),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed invocation.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let ws = Workspace::new(cli.out.clone(), cli.overwrite);
    std::fs::create_dir_all(&ws.out)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", ws.out.display())))?;
    match &cli.command {
        Command::Synth { .. } => synth::cmd_synth(&cfg, &ws),
        Command::Dataset { .. } => synth::cmd_dataset(&cfg, &ws),
        Command::Train { resume, .. } => train::cmd_train(&cfg, &ws, resume.as_deref()),
        Command::Gradcheck { inject_fault } => {
            let fault = inject_fault
                .as_deref()
                .map(train::parse_fault)
                .transpose()?;
            train::cmd_gradcheck(&cfg, &ws, fault)
        }
        Command::Evaluate(_) => evaluate::cmd_evaluate(&cfg, &ws),
        Command::Register(_) => evaluate::cmd_register(&cfg, &ws),
        Command::Baseline { .. } => evaluate::cmd_baseline(&cfg, &ws),
        Command::Report => report::cmd_report(&cfg, &ws),
    }
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bathy: {e}");
            e.exit_code()
        }
    }
}
