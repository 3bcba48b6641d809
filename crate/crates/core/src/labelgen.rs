//! Automatic three-class annotation: the catheter is whatever foreground of
//! frame `t` corresponds to foreground of a pre-contrast reference frame;
//! the remaining foreground is contrast-filled vessel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, FlowField, Frame, Label, LabelMask, Raster, Sequence};
use crate::morphology::{dilate, segment_background, BackgroundConfig, StructuringElement};
use crate::optflow::{compose_flows, estimate_flow, warp_labels, FlowConfig};

/// Default reference: the second frame.
pub const DEFAULT_REFERENCE: usize = 1;
/// Relative foreground-area tolerance of the automatic reference policy.
pub const AUTO_AREA_TOLERANCE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePolicy {
    #[default]
    Second,
    /// Latest frame of the initial run whose foreground area stays within
    /// 20% of frame 0's.
    Auto,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// Morphology masks straight from the top-hat stage.
    Raw,
    /// Masks predicted by the binary network trained on the raw masks.
    #[default]
    Refined,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSelection {
    pub index: usize,
    pub rationale: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub background: BackgroundConfig,
    pub flow: FlowConfig,
    pub reference: ReferencePolicy,
    /// Chain frame-to-frame flows instead of estimating reference → t
    /// directly.
    pub chain_flows: bool,
    /// Side of the square tolerance halo around the warped reference mask.
    pub halo: usize,
    pub mask_source: MaskSource,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            background: BackgroundConfig::default(),
            flow: FlowConfig::default(),
            reference: ReferencePolicy::Second,
            chain_flows: false,
            halo: 3,
            mask_source: MaskSource::Refined,
        }
    }
}

pub fn select_reference(seq: &Sequence, masks: &[BinaryMask], policy: ReferencePolicy) -> Result<ReferenceSelection> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            actual: seq.len(),
        });
    }
    if masks.len() != seq.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} frames",
            masks.len(),
            seq.len()
        )));
    }
    match policy {
        ReferencePolicy::Second => Ok(ReferenceSelection {
            index: DEFAULT_REFERENCE,
            rationale: "second frame (default)".into(),
        }),
        ReferencePolicy::Auto => {
            let first = masks[0].count() as f64;
            let similar = |m: &BinaryMask| (m.count() as f64 - first).abs() <= AUTO_AREA_TOLERANCE * first;
            let run = masks.iter().take_while(|m| similar(m)).count();
            let index = run.saturating_sub(1);
            Ok(ReferenceSelection {
                index,
                rationale: format!("auto: last of {run} leading frames with foreground area within 20% of frame 0"),
            })
        }
    }
}

fn dilate_mask(mask: &BinaryMask, side: usize) -> Result<BinaryMask> {
    if side <= 1 {
        return Ok(mask.clone());
    }
    let se = StructuringElement::square(side)?;
    let as_frame = Frame::from_fn(mask.width(), mask.height(), |x, y| if mask.get(x, y) { 1.0 } else { 0.0 });
    let grown = dilate(&as_frame, se);
    Ok(BinaryMask::from_fn(mask.width(), mask.height(), |x, y| grown.get(x, y) > 0.5))
}

/// Three-class labels of frame `t` from the reference mask, using a
/// `halo`×`halo` tolerance around the warped reference.
///
/// `flow` maps frame `t` onto the reference: `f_t(p) ≈ f_ref(p + u(p))`, so
/// warping the reference mask by it lands in frame `t`'s grid.
pub fn transfer_catheter_with_halo(
    ref_mask: &BinaryMask,
    flow: &FlowField,
    mask_t: &BinaryMask,
    halo: usize,
) -> Result<LabelMask> {
    for dims in [flow.dims(), mask_t.dims()] {
        if dims != ref_mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: ref_mask.dims(),
                actual: dims,
            });
        }
    }
    let warped = warp_labels(ref_mask, flow)?;
    let halo = dilate_mask(&warped, halo)?;
    let labels = mask_t
        .data()
        .iter()
        .zip(halo.data())
        .map(|(&fg, &near)| match (fg, near) {
            (false, _) => Label::Background,
            (true, true) => Label::Catheter,
            (true, false) => Label::Vessel,
        })
        .collect();
    Raster::from_vec(mask_t.width(), mask_t.height(), labels)
}

/// [`transfer_catheter_with_halo`] with the default 3×3 halo.
pub fn transfer_catheter(ref_mask: &BinaryMask, flow: &FlowField, mask_t: &BinaryMask) -> Result<LabelMask> {
    transfer_catheter_with_halo(ref_mask, flow, mask_t, 3)
}

/// Filtered morphology masks of every frame.
pub fn background_masks(seq: &Sequence, cfg: &BackgroundConfig) -> Result<Vec<BinaryMask>> {
    seq.frames()
        .par_iter()
        .map(|f| segment_background(f, cfg).map(|s| s.filtered))
        .collect()
}

/// Flow of every frame onto the reference (zero for the reference itself).
pub fn reference_flows(seq: &Sequence, reference: usize, cfg: &AnnotateConfig) -> Result<Vec<FlowField>> {
    let frames = seq.frames();
    if reference >= frames.len() {
        return Err(Error::IndexOutOfRange {
            index: reference,
            len: frames.len(),
        });
    }
    let (w, h) = frames[0].dims();
    if !cfg.chain_flows {
        return (0..frames.len())
            .into_par_iter()
            .map(|t| {
                if t == reference {
                    Ok(FlowField::zeros(w, h))
                } else {
                    estimate_flow(&frames[t], &frames[reference], &cfg.flow)
                }
            })
            .collect();
    }
    // step[t] maps frame t onto its neighbour one step closer to the reference
    let step: Vec<Option<FlowField>> = (0..frames.len())
        .into_par_iter()
        .map(|t| {
            let toward = match t.cmp(&reference) {
                std::cmp::Ordering::Equal => return Ok(None),
                std::cmp::Ordering::Greater => t - 1,
                std::cmp::Ordering::Less => t + 1,
            };
            estimate_flow(&frames[t], &frames[toward], &cfg.flow).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<FlowField> = vec![FlowField::zeros(w, h); frames.len()];
    for t in reference + 1..frames.len() {
        out[t] = compose_flows(step[t].as_ref().unwrap(), &out[t - 1])?;
    }
    for t in (0..reference).rev() {
        out[t] = compose_flows(step[t].as_ref().unwrap(), &out[t + 1])?;
    }
    Ok(out)
}

/// Labels for every frame. Frames up to the reference are taken to be
/// pre-contrast: their foreground is all catheter.
pub fn label_frames(
    masks: &[BinaryMask],
    flows: &[FlowField],
    reference: usize,
    halo: usize,
) -> Result<Vec<LabelMask>> {
    if masks.len() != flows.len() || reference >= masks.len() {
        return Err(Error::InvalidArgument("masks, flows and reference do not align".into()));
    }
    masks
        .iter()
        .zip(flows)
        .enumerate()
        .map(|(t, (mask, flow))| {
            if t <= reference {
                Ok(mask.map(|fg| if fg { Label::Catheter } else { Label::Background }))
            } else {
                transfer_catheter_with_halo(&masks[reference], flow, mask, halo)
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Annotation {
    pub binary: Vec<BinaryMask>,
    pub labels: Vec<LabelMask>,
    pub reference: ReferenceSelection,
    pub flows: Vec<FlowField>,
}

/// Morphology masks, reference selection, flows and catheter transfer for
/// one sequence.
pub fn annotate_sequence(seq: &Sequence, cfg: &AnnotateConfig) -> Result<Annotation> {
    let binary = background_masks(seq, &cfg.background)?;
    annotate_with_masks(seq, binary, None, cfg)
}

/// Like [`annotate_sequence`] with caller-supplied binary masks and,
/// optionally, precomputed reference flows.
pub fn annotate_with_masks(
    seq: &Sequence,
    binary: Vec<BinaryMask>,
    flows: Option<Vec<FlowField>>,
    cfg: &AnnotateConfig,
) -> Result<Annotation> {
    let reference = select_reference(seq, &binary, cfg.reference)?;
    let flows = match flows {
        Some(f) => f,
        None => reference_flows(seq, reference.index, cfg)?,
    };
    let labels = label_frames(&binary, &flows, reference.index, cfg.halo)?;
    Ok(Annotation {
        binary,
        labels,
        reference,
        flows,
    })
}
