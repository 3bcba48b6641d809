use std::path::Path;

use angioseg::synth::{generate_sequence, write_synthetic};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Context;
use crate::dataset::{entry_dir, sequence_name, write_index, Entry};
use crate::error::CliResult;
use crate::provenance::stamp;

/// Generates `count` sequences whose seeds are drawn from the root seed.
pub fn cmd_synth(ctx: &Context, out: &Path, count: usize) -> CliResult<Vec<Entry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let entries: Vec<Entry> = (0..count)
        .map(|i| Entry {
            name: sequence_name(i),
            seed: Some(rng.random()),
        })
        .collect();
    stamp(out, "synth", &ctx.config, ctx.seed, ctx.deterministic, &[("count".into(), count.to_string())], "")?;
    let base = &ctx.config.config.synth;
    entries.par_iter().try_for_each(|e| -> CliResult<()> {
        let cfg = base.clone().with_seed(e.seed.unwrap());
        let (seq, gt) = generate_sequence(&cfg)?;
        write_synthetic(&seq, &gt, &cfg, entry_dir(out, e))?;
        info!("synth: {} (seed {})", e.name, cfg.seed);
        Ok(())
    })?;
    write_index(out, &entries)?;
    Ok(entries)
}
