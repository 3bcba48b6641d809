//! Training stages (binary, multi-class, Siamese), augmentation and
//! inference.
//!
//! Each step computes per-sample gradients, optionally on the rayon pool,
//! and sums them in sample order, so a threaded run produces the same
//! parameters as a single-threaded one.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{dice, per_class_dice};
use crate::image::{resize_frame, BinaryMask, FlowField, Frame, Label, LabelMask, ProbMask, Raster};
use crate::morphology::{default_min_area, filter_small_components, Connectivity};
use crate::nnet::{
    adam_step, backward, bce, forward, siamese_cce, unet_forward, AdamConfig, AdamState, Gradients, UNetConfig,
    UNetParams,
};
use crate::optflow::ProbWarp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Binary,
    Multiclass,
    Siamese,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Binary => "binary",
            Stage::Multiclass => "multiclass",
            Stage::Siamese => "siamese",
        }
    }

    pub fn out_classes(self) -> usize {
        match self {
            Stage::Binary => 1,
            _ => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentPolicy {
    #[default]
    None,
    /// Rotations and integer translations.
    Augm1,
    /// Rotations only.
    Augm2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    pub policy: AugmentPolicy,
    /// Rotations are drawn from `[−range, range]` degrees.
    pub rotation_range: f64,
    /// Translations (augm1) are drawn from `[−range, range]` pixels per axis.
    pub translation_range: i32,
    /// Chance that a drawn training sample is transformed at all.
    pub probability: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            policy: AugmentPolicy::None,
            rotation_range: 45.0,
            translation_range: 10,
            probability: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Frame offsets of Siamese pairs, drawn uniformly.
    pub dt_values: Vec<usize>,
    pub augment: Augmentation,
    /// Siamese stage starts from the multi-class checkpoint.
    pub warm_start: bool,
    /// Compute sample gradients on the calling thread only.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            dt_values: vec![1, 2, 3],
            augment: Augmentation::default(),
            warm_start: true,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.dt_values.is_empty() {
            return bad("at least one Siamese frame offset is required");
        }
        let a = &self.augment;
        if !(0.0..=180.0).contains(&a.rotation_range) || a.translation_range < 0 || !(0.0..=1.0).contains(&a.probability) {
            return bad("invalid augmentation ranges");
        }
        Ok(())
    }
}

/// A rigid transform about the image centre: `p' = R(θ)(p − c) + c + s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub shift: [i32; 2],
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle_deg: 0.0,
        shift: [0, 0],
    };

    pub fn draw(aug: &Augmentation, rng: &mut impl Rng) -> Transform {
        let rotate = |rng: &mut dyn rand::RngCore| {
            if aug.rotation_range > 0.0 {
                rng.random_range(-aug.rotation_range..=aug.rotation_range)
            } else {
                0.0
            }
        };
        match aug.policy {
            AugmentPolicy::None => Transform::IDENTITY,
            AugmentPolicy::Augm2 => Transform {
                angle_deg: rotate(rng),
                shift: [0, 0],
            },
            AugmentPolicy::Augm1 => {
                let angle_deg = rotate(rng);
                let t = aug.translation_range;
                Transform {
                    angle_deg,
                    shift: [rng.random_range(-t..=t), rng.random_range(-t..=t)],
                }
            }
        }
    }

    fn rotation(&self) -> (f64, f64) {
        let r = self.angle_deg.to_radians();
        (r.cos(), r.sin())
    }

    /// Where output pixel `(x, y)` samples the input.
    pub fn source(&self, x: usize, y: usize, w: usize, h: usize) -> [f64; 2] {
        let (c, s) = self.rotation();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let dx = x as f64 - cx - self.shift[0] as f64;
        let dy = y as f64 - cy - self.shift[1] as f64;
        [c * dx + s * dy + cx, -s * dx + c * dy + cy]
    }

    /// Rotates a displacement vector.
    pub fn rotate_vector(&self, v: [f32; 2]) -> [f32; 2] {
        let (c, s) = self.rotation();
        let (x, y) = (v[0] as f64, v[1] as f64);
        [(c * x - s * y) as f32, (s * x + c * y) as f32]
    }

    pub fn apply_frame(&self, frame: &Frame) -> Frame {
        let (w, h) = frame.dims();
        Frame::from_fn(w, h, |x, y| {
            let [sx, sy] = self.source(x, y, w, h);
            bilinear_zero(frame.data(), w, h, sx, sy)
        })
    }

    pub fn apply_mask<T: Copy + Default>(&self, mask: &Raster<T>) -> Raster<T> {
        let (w, h) = mask.dims();
        Raster::from_fn(w, h, |x, y| {
            let [sx, sy] = self.source(x, y, w, h);
            let (rx, ry) = (sx.round(), sy.round());
            if rx < 0.0 || ry < 0.0 || rx >= w as f64 || ry >= h as f64 {
                T::default()
            } else {
                mask.get(rx as usize, ry as usize)
            }
        })
    }

    /// Transforms a flow so it relates the transformed frames:
    /// `u'(p) = R · u(T⁻¹ p)`.
    pub fn apply_flow(&self, flow: &FlowField) -> FlowField {
        let (w, h) = flow.dims();
        let fx: Vec<f32> = flow.data().iter().map(|v| v[0]).collect();
        let fy: Vec<f32> = flow.data().iter().map(|v| v[1]).collect();
        FlowField::from_fn(w, h, |x, y| {
            let [sx, sy] = self.source(x, y, w, h);
            self.rotate_vector([bilinear_zero(&fx, w, h, sx, sy), bilinear_zero(&fy, w, h, sx, sy)])
        })
    }
}

fn bilinear_zero(src: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ax, ay) = ((x - x0) as f32, (y - y0) as f32);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let mut v = 0.0;
    for (xi, wx) in [(x0, 1.0 - ax), (x0 + 1.0, ax)] {
        for (yi, wy) in [(y0, 1.0 - ay), (y0 + 1.0, ay)] {
            let wgt = wx * wy;
            if wgt != 0.0 {
                v += wgt * at(xi, yi);
            }
        }
    }
    v
}

/// Applies one random draw of `aug` to a frame (bilinear) and its mask
/// (nearest neighbour); outside samples are zero / background.
pub fn augment<T: Copy + Default>(
    frame: &Frame,
    mask: &Raster<T>,
    aug: &Augmentation,
    rng: &mut impl Rng,
) -> (Frame, Raster<T>) {
    let t = Transform::draw(aug, rng);
    (t.apply_frame(frame), t.apply_mask(mask))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinarySample {
    pub frame: Frame,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassSample {
    pub frame: Frame,
    pub labels: LabelMask,
}

/// `flow` maps `first` onto `second`: `first(p) ≈ second(p + u(p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub first: Frame,
    pub second: Frame,
    pub flow: FlowField,
    pub labels: LabelMask,
}

/// One training example of a stage.
pub trait TrainSample: Clone + Send + Sync {
    fn transformed(&self, t: &Transform) -> Self;
    /// Loss and parameter gradient of this sample.
    fn loss_grad(&self, params: &UNetParams<f32>) -> Result<(f64, Gradients<f32>)>;
    fn loss(&self, params: &UNetParams<f32>) -> Result<f64>;
}

impl TrainSample for BinarySample {
    fn transformed(&self, t: &Transform) -> Self {
        BinarySample {
            frame: t.apply_frame(&self.frame),
            mask: t.apply_mask(&self.mask),
        }
    }

    fn loss_grad(&self, params: &UNetParams<f32>) -> Result<(f64, Gradients<f32>)> {
        let trace = forward(params, self.frame.data())?;
        let l = bce(trace.probs(), self.mask.data());
        Ok((l.loss as f64, backward(params, &trace, &l.grad)?))
    }

    fn loss(&self, params: &UNetParams<f32>) -> Result<f64> {
        let trace = forward(params, self.frame.data())?;
        Ok(bce(trace.probs(), self.mask.data()).loss as f64)
    }
}

impl TrainSample for MulticlassSample {
    fn transformed(&self, t: &Transform) -> Self {
        MulticlassSample {
            frame: t.apply_frame(&self.frame),
            labels: t.apply_mask(&self.labels),
        }
    }

    fn loss_grad(&self, params: &UNetParams<f32>) -> Result<(f64, Gradients<f32>)> {
        let trace = forward(params, self.frame.data())?;
        let l = siamese_cce(trace.probs(), None, self.labels.data(), 3);
        Ok((l.loss as f64, backward(params, &trace, &l.grad_first)?))
    }

    fn loss(&self, params: &UNetParams<f32>) -> Result<f64> {
        let trace = forward(params, self.frame.data())?;
        Ok(siamese_cce(trace.probs(), None, self.labels.data(), 3).loss as f64)
    }
}

impl TrainSample for PairSample {
    fn transformed(&self, t: &Transform) -> Self {
        PairSample {
            first: t.apply_frame(&self.first),
            second: t.apply_frame(&self.second),
            flow: t.apply_flow(&self.flow),
            labels: t.apply_mask(&self.labels),
        }
    }

    fn loss_grad(&self, params: &UNetParams<f32>) -> Result<(f64, Gradients<f32>)> {
        let t1 = forward(params, self.first.data())?;
        let t2 = forward(params, self.second.data())?;
        let warp = ProbWarp::new(&self.flow);
        let warped = warp.forward(t2.probs(), 3);
        let l = siamese_cce(t1.probs(), Some(&warped), self.labels.data(), 3);
        let mut grads = backward(params, &t1, &l.grad_first)?;
        let through_warp = warp.backward(t2.probs(), 3, &l.grad_warped);
        grads.add_assign(&backward(params, &t2, &through_warp)?)?;
        Ok((l.loss as f64, grads))
    }

    fn loss(&self, params: &UNetParams<f32>) -> Result<f64> {
        let t1 = forward(params, self.first.data())?;
        let t2 = forward(params, self.second.data())?;
        let warped = ProbWarp::new(&self.flow).forward(t2.probs(), 3);
        Ok(siamese_cce(t1.probs(), Some(&warped), self.labels.data(), 3).loss as f64)
    }
}

/// Frames and truth scored after every epoch.
#[derive(Clone, Debug, Default)]
pub struct Validation {
    pub frames: Vec<Frame>,
    pub labels: Vec<LabelMask>,
}

/// Mean validation Dice: background, vessel, catheter, foreground union.
/// Class scores are `None` for a binary network or when never present.
pub type ValidationDice = [Option<f64>; 4];

impl Validation {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn score(&self, params: &UNetParams<f32>) -> Result<ValidationDice> {
        let multiclass = params.config().out_classes == 3;
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for (f, truth) in self.frames.iter().zip(&self.labels) {
            let pred = infer(params, f, None)?.labels;
            let bg = dice(&pred.class_mask(Label::Background), &truth.class_mask(Label::Background))?;
            let r = per_class_dice(&pred, truth)?;
            let mut add = |i: usize, v: Option<f64>| {
                if let Some(v) = v {
                    sums[i] += v;
                    counts[i] += 1;
                }
            };
            add(3, Some(r.binary));
            if multiclass {
                add(0, Some(bg));
                add(1, r.vessel);
                add(2, r.catheter);
            }
        }
        Ok(std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    /// Mean training loss of each epoch, over the (augmented) samples seen.
    pub epoch_losses: Vec<f64>,
    pub validation: Vec<ValidationDice>,
    /// Mean loss on the unaugmented training set before the first and
    /// after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_clock_secs: f64,
    pub warm_start: bool,
    pub config: TrainConfig,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str =
        "epoch,loss,val_dice_background,val_dice_vessel,val_dice_catheter,val_dice_binary";

    pub fn csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|d| format!("{d:.6}")).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let v = self.validation.get(i).copied().unwrap_or([None; 4]);
            let _ = writeln!(
                out,
                "{},{loss:.8},{},{},{},{}",
                i + 1,
                fmt(v[0]),
                fmt(v[1]),
                fmt(v[2]),
                fmt(v[3])
            );
        }
        out
    }

    /// Plain-text summary written beside the CSV.
    pub fn summary(&self) -> String {
        format!(
            "stage = {}\nseed = {}\nepochs = {}\nwarm_start = {}\ninitial_loss = {:.8}\nfinal_loss = {:.8}\nwall_clock_secs = {:.3}\n",
            self.stage.name(),
            self.config.seed,
            self.epoch_losses.len(),
            self.warm_start,
            self.initial_loss,
            self.final_loss,
            self.wall_clock_secs
        )
    }
}

fn mean_loss<S: TrainSample>(data: &[S], params: &UNetParams<f32>, cfg: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = if cfg.deterministic {
        data.iter().map(|s| s.loss(params)).collect::<Result<_>>()?
    } else {
        data.par_iter().map(|s| s.loss(params)).collect::<Result<_>>()?
    };
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(mean)
}

/// Mini-batch Adam over `data`, starting from `params`.
pub fn train_stage<S: TrainSample>(
    stage: Stage,
    data: &[S],
    mut params: UNetParams<f32>,
    cfg: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<(UNetParams<f32>, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if params.config().out_classes != stage.out_classes() {
        return Err(Error::ConfigMismatch(format!(
            "{} stage needs {} output classes, network has {}",
            stage.name(),
            stage.out_classes(),
            params.config().out_classes
        )));
    }
    let start = Instant::now();
    let hyper = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(params.values().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x7261696e);
    let initial_loss = mean_loss(data, &params, cfg)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut val_scores = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<S> = batch
                .iter()
                .map(|&i| {
                    let aug = &cfg.augment;
                    if aug.policy != AugmentPolicy::None && rng.random_bool(aug.probability) {
                        data[i].transformed(&Transform::draw(aug, &mut rng))
                    } else {
                        data[i].clone()
                    }
                })
                .collect();
            let results: Vec<(f64, Gradients<f32>)> = if cfg.deterministic {
                samples.iter().map(|s| s.loss_grad(&params)).collect::<Result<_>>()?
            } else {
                samples.par_iter().map(|s| s.loss_grad(&params)).collect::<Result<_>>()?
            };
            let mut total = Gradients::zeros(*params.config());
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                total.add_assign(g)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {}", epoch + 1)));
            }
            epoch_loss += batch_loss;
            total.scale(1.0 / results.len() as f32);
            adam_step(&mut params, &total, &mut state, &hyper)?;
            if !params.is_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {}", epoch + 1)));
            }
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
        if let Some(v) = validation.filter(|v| !v.is_empty()) {
            val_scores.push(v.score(&params)?);
        }
        log::debug!("{} epoch {} loss {:.6}", stage.name(), epoch + 1, epoch_losses[epoch]);
    }
    let final_loss = mean_loss(data, &params, cfg)?;
    let report = TrainReport {
        stage,
        epoch_losses,
        validation: val_scores,
        initial_loss,
        final_loss,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        warm_start: false,
        config: cfg.clone(),
    };
    Ok((params, report))
}

/// Binary network from scratch, seeded by `cfg.seed`.
pub fn train_binary(
    data: &[BinarySample],
    net: UNetConfig,
    cfg: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<(UNetParams<f32>, TrainReport)> {
    let params = UNetParams::init(net.with_classes(1), cfg.seed)?;
    train_stage(Stage::Binary, data, params, cfg, validation)
}

/// Three-class network. A three-class `init` is continued as is; from any
/// other (typically the binary one) the body is kept and the head zeroed.
pub fn train_multiclass(
    data: &[MulticlassSample],
    net: UNetConfig,
    init: Option<&UNetParams<f32>>,
    cfg: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<(UNetParams<f32>, TrainReport)> {
    let params = match init {
        Some(p) if p.config().out_classes == 3 => p.clone(),
        Some(p) => p.with_head(3)?,
        None => UNetParams::init(net.with_classes(3), cfg.seed)?,
    };
    let (p, mut report) = train_stage(Stage::Multiclass, data, params, cfg, validation)?;
    report.warm_start = init.is_some();
    Ok((p, report))
}

/// Siamese training of a single shared parameter set, warm-started from
/// `init` when given.
pub fn train_siamese(
    data: &[PairSample],
    net: UNetConfig,
    init: Option<&UNetParams<f32>>,
    cfg: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<(UNetParams<f32>, TrainReport)> {
    let params = match init {
        Some(p) => p.clone(),
        None => UNetParams::init(net.with_classes(3), cfg.seed)?,
    };
    let (p, mut report) = train_stage(Stage::Siamese, data, params, cfg, validation)?;
    report.warm_start = init.is_some();
    Ok((p, report))
}

/// Frame pairs `(t, t + Δt)` with `Δt` drawn from `dt_values`; frames
/// with no admissible offset are skipped.
pub fn pair_plan(len: usize, dt_values: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..len)
        .filter_map(|t| {
            let options: Vec<usize> = dt_values.iter().copied().filter(|&d| d > 0 && t + d < len).collect();
            (!options.is_empty()).then(|| (t, t + options[rng.random_range(0..options.len())]))
        })
        .collect()
}

/// Component filtering applied to a prediction's foreground union.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentFilter {
    /// `None` selects the size-scaled default.
    pub min_area: Option<usize>,
    pub connectivity: Connectivity,
}

impl Default for ComponentFilter {
    fn default() -> Self {
        ComponentFilter {
            min_area: None,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Removes foreground components smaller than the filter's area.
pub fn filter_prediction(labels: &LabelMask, cc: &ComponentFilter) -> LabelMask {
    let (w, h) = labels.dims();
    let min_area = cc.min_area.unwrap_or_else(|| default_min_area(w, h));
    let kept = filter_small_components(&labels.foreground(), min_area, cc.connectivity);
    let data = labels
        .data()
        .iter()
        .zip(kept.data())
        .map(|(&l, &k)| if k { l } else { Label::Background })
        .collect();
    Raster::from_vec(w, h, data).expect("same dimensions")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: LabelMask,
    /// Probabilities at network resolution.
    pub probs: ProbMask,
}

/// Per-pixel argmax (ties to the lowest class), optionally followed by
/// component filtering. Frames of another size are resized for the network
/// and the labels mapped back by nearest neighbour.
pub fn infer(params: &UNetParams<f32>, frame: &Frame, cc: Option<&ComponentFilter>) -> Result<Prediction> {
    let n = params.config().input_size;
    let (w, h) = frame.dims();
    let probs = if (w, h) == (n, n) {
        unet_forward(params, frame)?
    } else {
        unet_forward(params, &resize_frame(frame, n, n)?)?
    };
    let mut labels = probs.argmax();
    if (w, h) != (n, n) {
        labels = Raster::from_fn(w, h, |x, y| {
            let sx = (((x as f64 + 0.5) * n as f64 / w as f64) as usize).min(n - 1);
            let sy = (((y as f64 + 0.5) * n as f64 / h as f64) as usize).min(n - 1);
            labels.get(sx, sy)
        });
    }
    if let Some(cc) = cc {
        labels = filter_prediction(&labels, cc);
    }
    Ok(Prediction { labels, probs })
}
