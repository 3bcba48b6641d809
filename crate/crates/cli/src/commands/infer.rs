use std::path::Path;

use angioseg::io::{label_path, save_mask};
use angioseg::nnet::read_params;
use angioseg::train::infer;
use log::info;
use rayon::prelude::*;

use super::Context;
use crate::dataset::{entry_dir, load_dataset, write_index};
use crate::error::CliResult;
use crate::provenance::{create_dir, stamp};

/// Segments every frame of `data` with `checkpoint`, writing label PNGs in
/// the sequence layout under `out`.
pub fn cmd_infer(ctx: &Context, checkpoint: &Path, data: &Path, out: &Path, cc: bool) -> CliResult<usize> {
    let params = read_params(checkpoint)?;
    let dataset = load_dataset(data)?;
    let details = [
        ("checkpoint".to_string(), checkpoint.display().to_string()),
        ("data".to_string(), data.display().to_string()),
        ("cc".to_string(), cc.to_string()),
    ];
    stamp(out, "infer", &ctx.config, ctx.seed, ctx.deterministic, &details, "")?;
    let filter = ctx.config.config.postprocess;
    let mut frames = 0;
    for s in &dataset {
        let dir = entry_dir(out, &s.entry);
        create_dir(&dir.join("labels"))?;
        s.sequence
            .frames()
            .par_iter()
            .enumerate()
            .try_for_each(|(t, f)| -> CliResult<()> {
                let p = infer(&params, f, cc.then_some(&filter))?;
                save_mask(&p.labels, label_path(&dir, t))?;
                Ok(())
            })?;
        frames += s.sequence.len();
        info!("infer: {}: {} frames", s.entry.name, s.sequence.len());
    }
    if !dataset.iter().any(|s| s.entry.name.is_empty()) {
        write_index(out, &dataset.iter().map(|s| s.entry.clone()).collect::<Vec<_>>())?;
    }
    Ok(frames)
}
