use std::path::Path;

use angioseg::eval::{evaluate_pipeline, table_csv, TableRow, Variant};
use angioseg::morphology::segment_background;
use angioseg::nnet::read_params;
use angioseg::train::infer;
use angioseg::{Frame, Label, LabelMask};
use rayon::prelude::*;

use super::train::checkpoint_path;
use super::Context;
use crate::dataset::load_dataset;
use crate::error::{CliError, CliResult};
use crate::provenance::{stamp, write_file};

pub const TABLE_FILE: &str = "table.csv";

const CC_SUFFIX: &str = "+cc";
const TOPHAT: &str = "tophat";
const STAGES: [&str; 3] = ["binary", "multiclass", "siamese"];

/// Top-hat rows, then every stage checkpoint present in `models`, each with
/// and without component filtering, then any other checkpoints by name.
pub fn default_variants(models: &Path) -> Vec<String> {
    let mut names: Vec<String> = STAGES
        .iter()
        .filter(|s| checkpoint_path(models, s).exists())
        .map(|s| s.to_string())
        .collect();
    let mut others: Vec<String> = std::fs::read_dir(models)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".ckpt").map(str::to_string))
        .filter(|n| !STAGES.contains(&n.as_str()))
        .collect();
    others.sort();
    names.extend(others);
    let mut out = vec![TOPHAT.to_string(), format!("{TOPHAT}{CC_SUFFIX}")];
    for n in names {
        out.push(n.clone());
        out.push(format!("{n}{CC_SUFFIX}"));
    }
    out
}

fn predict(ctx: &Context, spec: &str, models: &Path, frames: &[Frame]) -> CliResult<Variant> {
    let (base, cc) = match spec.strip_suffix(CC_SUFFIX) {
        Some(b) => (b, true),
        None => (spec, false),
    };
    let cfg = &ctx.config.config;
    if base == TOPHAT {
        let predictions = frames
            .par_iter()
            .map(|f| {
                let s = segment_background(f, &cfg.annotate.background)?;
                let m = if cc { s.filtered } else { s.raw };
                Ok(m.map(|v| if v { Label::Vessel } else { Label::Background }))
            })
            .collect::<angioseg::Result<Vec<LabelMask>>>()?;
        return Ok(Variant {
            name: spec.to_string(),
            multiclass: false,
            predictions,
        });
    }
    let path = checkpoint_path(models, base);
    if !path.exists() {
        return Err(CliError::Data(format!("variant {spec}: missing checkpoint {}", path.display())));
    }
    let params = read_params(&path)?;
    let filter = cfg.postprocess;
    let predictions = frames
        .par_iter()
        .map(|f| infer(&params, f, cc.then_some(&filter)).map(|p| p.labels))
        .collect::<angioseg::Result<Vec<_>>>()?;
    Ok(Variant {
        name: spec.to_string(),
        multiclass: params.config().out_classes == 3,
        predictions,
    })
}

/// One row per requested variant, scored against the dataset's labels.
/// An empty test set gives a table with the header only.
pub fn cmd_eval(
    ctx: &Context,
    data: &Path,
    models: &Path,
    variants: &[String],
    out: Option<&Path>,
) -> CliResult<Vec<TableRow>> {
    let dataset = load_dataset(data)?;
    let mut frames = Vec::new();
    let mut truths = Vec::new();
    for s in &dataset {
        let labels = s
            .sequence
            .labels()
            .ok_or_else(|| CliError::Data(format!("test sequence {} has no ground-truth labels", s.entry.name)))?;
        frames.extend_from_slice(s.sequence.frames());
        truths.extend_from_slice(labels);
    }
    let requested = if variants.is_empty() {
        default_variants(models)
    } else {
        variants.to_vec()
    };
    let predicted = requested
        .iter()
        .map(|v| predict(ctx, v, models, &frames))
        .collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<TableRow> = evaluate_pipeline(&truths, &predicted)?
        .into_iter()
        .filter(|r| r.result.is_some())
        .collect();
    if let Some(out) = out {
        let details = [
            ("data".to_string(), data.display().to_string()),
            ("models".to_string(), models.display().to_string()),
            ("variants".to_string(), requested.join(",")),
        ];
        stamp(out, "eval", &ctx.config, ctx.seed, ctx.deterministic, &details, "")?;
        write_file(&out.join(TABLE_FILE), &table_csv(&rows))?;
    }
    Ok(rows)
}
