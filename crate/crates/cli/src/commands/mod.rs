//! One function per subcommand. Each writes its outputs, a config echo and
//! a provenance stamp under the output directory.

mod annotate;
mod bench;
mod eval;
mod infer;
mod synth;
mod train;

pub use annotate::{cmd_annotate, AnnotateSummary, load_annotation, pair_flow_path, reference_flow_path, SequenceAnnotation};
pub use bench::{cmd_bench, BenchReport, BenchRow, BENCH_HEADER};
pub use eval::{cmd_eval, default_variants, TABLE_FILE};
pub use infer::cmd_infer;
pub use synth::cmd_synth;
pub use train::{checkpoint_path, cmd_train, TrainArgs, TrainStage};

use crate::config::LoadedConfig;

/// Settings shared by every command.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
    pub deterministic: bool,
}

impl Context {
    /// `seed` overrides the configured root seed.
    pub fn new(config: LoadedConfig, seed: Option<u64>, deterministic: bool) -> Self {
        let seed = seed.unwrap_or(config.config.seed);
        Context {
            config,
            seed,
            deterministic,
        }
    }
}
