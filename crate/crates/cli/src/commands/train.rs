use std::path::{Path, PathBuf};

use angioseg::labelgen::{label_frames, MaskSource};
use angioseg::nnet::{read_params, save_params, UNetParams};
use angioseg::train::{
    infer, pair_plan, train_binary, train_multiclass, train_siamese, AugmentPolicy, BinarySample, MulticlassSample,
    PairSample, TrainConfig, TrainReport, Validation,
};
use angioseg::{BinaryMask, LabelMask};
use clap::ValueEnum;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::annotate::{load_annotations, SequenceAnnotation};
use super::Context;
use crate::dataset::{load_dataset, LoadedSequence};
use crate::error::{CliError, CliResult};
use crate::provenance::{stamp, write_file};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainStage {
    Binary,
    Multiclass,
    Siamese,
    /// Multi-class training on the dataset's own ground-truth labels,
    /// starting from a trained checkpoint.
    Finetune,
}

impl TrainStage {
    pub fn name(self) -> &'static str {
        match self {
            TrainStage::Binary => "binary",
            TrainStage::Multiclass => "multiclass",
            TrainStage::Siamese => "siamese",
            TrainStage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    /// Output of `annotate` for `data`; unused by the fine-tuning stage.
    pub annotations: Option<PathBuf>,
    pub stage: TrainStage,
    pub out: PathBuf,
    /// Checkpoint name; defaults to the stage name.
    pub name: Option<String>,
    /// Warm-start checkpoint; defaults to the previous stage's in `out`.
    pub init: Option<PathBuf>,
    /// Binary checkpoint refining masks; defaults to `out/binary.ckpt`.
    pub binary: Option<PathBuf>,
    /// Labelled dataset scored after every epoch.
    pub validation: Option<PathBuf>,
    pub augment: Option<AugmentPolicy>,
    pub epochs: Option<usize>,
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ckpt"))
}

fn require(path: &Path, stage: TrainStage, upstream: &str) -> CliResult<UNetParams<f32>> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "stage {} needs the {upstream} checkpoint {}; train the {upstream} stage first",
            stage.name(),
            path.display()
        )));
    }
    Ok(read_params(path)?)
}

fn annotations(args: &TrainArgs) -> CliResult<Vec<SequenceAnnotation>> {
    let dir = args
        .annotations
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("stage {} needs --annotations", args.stage.name())))?;
    load_annotations(&args.data, dir)
}

/// Three-class labels: the auto-labels, or the catheter transfer redone on
/// masks predicted by the binary network.
fn class_labels(
    ctx: &Context,
    args: &TrainArgs,
    dataset: &[LoadedSequence],
    anns: &[SequenceAnnotation],
) -> CliResult<Vec<Vec<LabelMask>>> {
    let cfg = &ctx.config.config.annotate;
    match cfg.mask_source {
        MaskSource::Raw => Ok(anns.iter().map(|a| a.labels.clone()).collect()),
        MaskSource::Refined => {
            let path = args.binary.clone().unwrap_or_else(|| checkpoint_path(&args.out, "binary"));
            let net = require(&path, args.stage, "binary")?;
            dataset
                .iter()
                .zip(anns)
                .map(|(s, a)| {
                    let masks = s
                        .sequence
                        .frames()
                        .par_iter()
                        .map(|f| infer(&net, f, None).map(|p| p.labels.foreground()))
                        .collect::<angioseg::Result<Vec<BinaryMask>>>()?;
                    Ok(label_frames(&masks, &a.reference_flows, a.reference, cfg.halo)?)
                })
                .collect()
        }
    }
}

fn validation(path: Option<&Path>) -> CliResult<Option<Validation>> {
    let Some(path) = path else { return Ok(None) };
    let mut v = Validation {
        frames: Vec::new(),
        labels: Vec::new(),
    };
    for s in load_dataset(path)? {
        let labels = s
            .sequence
            .labels()
            .ok_or_else(|| CliError::Data(format!("validation sequence {} has no labels", s.entry.name)))?;
        v.frames.extend_from_slice(s.sequence.frames());
        v.labels.extend_from_slice(labels);
    }
    Ok(Some(v))
}

fn train_config(ctx: &Context, args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut tc = ctx.config.config.train.clone();
    tc.seed = ctx.seed;
    tc.deterministic |= ctx.deterministic;
    if let Some(policy) = args.augment {
        tc.augment.policy = policy;
    }
    if let Some(epochs) = args.epochs {
        tc.epochs = epochs;
    }
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(tc)
}

/// Trains one stage and writes `<name>.ckpt`, `<name>_report.csv` and
/// `<name>_summary.txt` (the only output holding wall-clock time).
pub fn cmd_train(ctx: &Context, args: &TrainArgs) -> CliResult<(UNetParams<f32>, TrainReport)> {
    let tc = train_config(ctx, args)?;
    let net = ctx.config.config.net;
    let name = args.name.clone().unwrap_or_else(|| args.stage.name().to_string());
    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(CliError::Data(format!("{} holds no sequences", args.data.display())));
    }
    let val = validation(args.validation.as_deref())?;
    let mut details = vec![
        ("stage".to_string(), args.stage.name().to_string()),
        ("data".to_string(), args.data.display().to_string()),
    ];
    let frames = |s: &LoadedSequence| s.sequence.frames().to_vec();
    let (params, report) = match args.stage {
        TrainStage::Binary => {
            let anns = annotations(args)?;
            let data: Vec<BinarySample> = dataset
                .iter()
                .zip(&anns)
                .flat_map(|(s, a)| {
                    frames(s)
                        .into_iter()
                        .zip(a.binary.clone())
                        .map(|(frame, mask)| BinarySample { frame, mask })
                })
                .collect();
            train_binary(&data, net.unet(1), &tc, val.as_ref())?
        }
        TrainStage::Multiclass => {
            let anns = annotations(args)?;
            let labels = class_labels(ctx, args, &dataset, &anns)?;
            let init = if tc.warm_start {
                let path = args.init.clone().unwrap_or_else(|| checkpoint_path(&args.out, "binary"));
                details.push(("init".to_string(), path.display().to_string()));
                Some(require(&path, args.stage, "binary")?)
            } else {
                None
            };
            let data: Vec<MulticlassSample> = dataset
                .iter()
                .zip(labels)
                .flat_map(|(s, l)| {
                    frames(s)
                        .into_iter()
                        .zip(l)
                        .map(|(frame, labels)| MulticlassSample { frame, labels })
                })
                .collect();
            train_multiclass(&data, net.unet(3), init.as_ref(), &tc, val.as_ref())?
        }
        TrainStage::Siamese => {
            let anns = annotations(args)?;
            let init = if tc.warm_start {
                let path = args.init.clone().unwrap_or_else(|| checkpoint_path(&args.out, "multiclass"));
                details.push(("init".to_string(), path.display().to_string()));
                Some(require(&path, args.stage, "multiclass")?)
            } else {
                None
            };
            let labels = class_labels(ctx, args, &dataset, &anns)?;
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            let mut data = Vec::new();
            for ((s, a), l) in dataset.iter().zip(&anns).zip(&labels) {
                let f = s.sequence.frames();
                for (t1, t2) in pair_plan(f.len(), &tc.dt_values, &mut rng) {
                    let flow = a.pair_flows.get(&(t1, t2)).ok_or_else(|| {
                        CliError::Data(format!(
                            "{}: no cached flow for pair ({t1}, {t2}); annotate with the same dt_values",
                            s.entry.name
                        ))
                    })?;
                    data.push(PairSample {
                        first: f[t1].clone(),
                        second: f[t2].clone(),
                        flow: flow.clone(),
                        labels: l[t1].clone(),
                    });
                }
            }
            if data.is_empty() {
                return Err(CliError::Data("sequences too short for any Siamese pair".into()));
            }
            train_siamese(&data, net.unet(3), init.as_ref(), &tc, val.as_ref())?
        }
        TrainStage::Finetune => {
            let path = args.init.clone().unwrap_or_else(|| checkpoint_path(&args.out, "siamese"));
            details.push(("init".to_string(), path.display().to_string()));
            let init = require(&path, args.stage, "siamese")?;
            let mut data = Vec::new();
            for s in &dataset {
                let labels = s.sequence.labels().ok_or_else(|| {
                    CliError::Data(format!("fine-tuning needs labels; sequence {} has none", s.entry.name))
                })?;
                data.extend(
                    frames(s)
                        .into_iter()
                        .zip(labels.iter().cloned())
                        .map(|(frame, labels)| MulticlassSample { frame, labels }),
                );
            }
            train_multiclass(&data, net.unet(3), Some(&init), &tc, val.as_ref())?
        }
    };
    details.push(("warm_start".to_string(), report.warm_start.to_string()));
    details.push(("checkpoint".to_string(), format!("{name}.ckpt")));
    stamp(&args.out, "train", &ctx.config, ctx.seed, tc.deterministic, &details, &format!("{name}_"))?;
    save_params(&params, checkpoint_path(&args.out, &name))?;
    write_file(&args.out.join(format!("{name}_report.csv")), &report.csv())?;
    write_file(&args.out.join(format!("{name}_summary.txt")), &report.summary())?;
    info!(
        "train {}: loss {:.4} -> {:.4} in {:.1}s",
        name, report.initial_loss, report.final_loss, report.wall_clock_secs
    );
    Ok((params, report))
}
