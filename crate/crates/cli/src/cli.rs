//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use angioseg::eval::table_csv;
use angioseg::train::AugmentPolicy;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{self, Context, TrainArgs, TrainStage};
use crate::config::{LoadedConfig, Preset};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "angioseg", version, about = "Weakly supervised vessel and catheter segmentation")]
pub struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded numerics for byte-identical reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentArg {
    None,
    Augm1,
    Augm2,
}

impl From<AugmentArg> for AugmentPolicy {
    fn from(a: AugmentArg) -> Self {
        match a {
            AugmentArg::None => AugmentPolicy::None,
            AugmentArg::Augm1 => AugmentPolicy::Augm1,
            AugmentArg::Augm2 => AugmentPolicy::Augm2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sequences with ground truth.
    Synth {
        /// Number of sequences.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Auto-label a dataset: top-hat masks, flows, catheter transfer.
    Annotate {
        /// Dataset directory, as written by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one stage; upstream checkpoints are read from --out.
    Train {
        /// Training dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output of `annotate` for --data; every stage but finetune needs it.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, value_enum)]
        stage: TrainStage,
        /// Checkpoint name (default: the stage name).
        #[arg(long)]
        name: Option<String>,
        /// Warm-start checkpoint (default: previous stage in --out).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Binary checkpoint for refined masks (default: --out/binary.ckpt).
        #[arg(long)]
        binary: Option<PathBuf>,
        /// Labelled dataset scored after every epoch.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Augmentation policy, overriding the configured one.
        #[arg(long, value_enum)]
        augment: Option<AugmentArg>,
        /// Epochs, overriding the configured count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Segment a dataset with a checkpoint.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Remove small connected components.
        #[arg(long)]
        cc: bool,
    },
    /// Dice table of top-hat and network variants against ground truth.
    Eval {
        /// Test dataset with ground-truth labels.
        #[arg(long)]
        data: PathBuf,
        /// Directory of `<name>.ckpt` files.
        #[arg(long)]
        models: PathBuf,
        /// `tophat`, or a checkpoint name; append `+cc` for component
        /// filtering. Repeatable; default: everything available.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Inference latency and throughput.
    Bench {
        /// Checkpoint to time.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Untrained network of this preset when no checkpoint is given.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

fn required_out<'a>(out: Option<&'a Path>, command: &str) -> CliResult<&'a Path> {
    out.ok_or_else(|| CliError::Usage(format!("{command} needs --out")))
}

/// Runs a parsed command line, printing tables and reports to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    let config = LoadedConfig::load(cli.config.as_deref())?;
    let ctx = Context::new(config, cli.seed, cli.deterministic);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth { count } => {
            let entries = commands::cmd_synth(&ctx, required_out(out, "synth")?, *count)?;
            println!("wrote {} sequences", entries.len());
        }
        Command::Annotate { data } => {
            let s = commands::cmd_annotate(&ctx, data, required_out(out, "annotate")?)?;
            println!("annotated {} sequences ({} from the flow cache)", s.entries.len(), s.cache_hits);
        }
        Command::Train {
            data,
            annotations,
            stage,
            name,
            init,
            binary,
            validation,
            augment,
            epochs,
        } => {
            let args = TrainArgs {
                data: data.clone(),
                annotations: annotations.clone(),
                stage: *stage,
                out: required_out(out, "train")?.to_path_buf(),
                name: name.clone(),
                init: init.clone(),
                binary: binary.clone(),
                validation: validation.clone(),
                augment: augment.map(Into::into),
                epochs: *epochs,
            };
            let (_, report) = commands::cmd_train(&ctx, &args)?;
            print!("{}", report.summary());
        }
        Command::Infer { data, checkpoint, cc } => {
            let n = commands::cmd_infer(&ctx, checkpoint, data, required_out(out, "infer")?, *cc)?;
            println!("segmented {n} frames");
        }
        Command::Eval { data, models, variants } => {
            let rows = commands::cmd_eval(&ctx, data, models, variants, out)?;
            print!("{}", table_csv(&rows));
        }
        Command::Bench {
            checkpoint,
            preset,
            frames,
            repetitions,
        } => {
            let preset = preset.map(|p| match p {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            });
            let report = commands::cmd_bench(&ctx, checkpoint.as_deref(), preset, *frames, *repetitions, out)?;
            print!("{}", report.summary());
        }
    }
    Ok(())
}
