//! Dice scores: `2|X ∩ Y| / (|X| + |Y|)`, per class and on the foreground
//! union.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Label, LabelMask};

/// Pixel confusion counts of one binary comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn of(pred: &BinaryMask, truth: &BinaryMask) -> Result<Confusion> {
        if pred.dims() != truth.dims() {
            return Err(Error::DimensionMismatch {
                expected: truth.dims(),
                actual: pred.dims(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `true` when neither mask has any foreground.
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        if self.is_empty() {
            1.0
        } else {
            2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
        }
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

pub fn dice(x: &BinaryMask, y: &BinaryMask) -> Result<f64> {
    Ok(Confusion::of(x, y)?.dice())
}

/// Scores of one frame, or a frame mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Dice of the foreground unions (vessel ∪ catheter).
    pub binary: f64,
    /// `None` when the class is absent from both prediction and truth.
    pub vessel: Option<f64>,
    pub catheter: Option<f64>,
    /// Confusion counts: foreground union, vessel, catheter.
    pub counts: [Confusion; 3],
    pub frames: usize,
}

fn class_dice(c: &Confusion) -> Option<f64> {
    (!c.is_empty()).then(|| c.dice())
}

pub fn per_class_dice(pred: &LabelMask, truth: &LabelMask) -> Result<EvalResult> {
    let union = Confusion::of(&pred.foreground(), &truth.foreground())?;
    let vessel = Confusion::of(&pred.class_mask(Label::Vessel), &truth.class_mask(Label::Vessel))?;
    let catheter = Confusion::of(&pred.class_mask(Label::Catheter), &truth.class_mask(Label::Catheter))?;
    Ok(EvalResult {
        binary: union.dice(),
        vessel: class_dice(&vessel),
        catheter: class_dice(&catheter),
        counts: [union, vessel, catheter],
        frames: 1,
    })
}

/// Unweighted mean over frames. Class scores average over the frames where
/// the class occurs; counts are summed.
pub fn mean_result(results: &[EvalResult]) -> Option<EvalResult> {
    if results.is_empty() {
        return None;
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let mut counts = [Confusion::default(); 3];
    for r in results {
        for (acc, c) in counts.iter_mut().zip(&r.counts) {
            acc.add(c);
        }
    }
    Some(EvalResult {
        binary: mean(results.iter().map(|r| r.binary).collect()).unwrap(),
        vessel: mean(results.iter().filter_map(|r| r.vessel).collect()),
        catheter: mean(results.iter().filter_map(|r| r.catheter).collect()),
        counts,
        frames: results.iter().map(|r| r.frames).sum(),
    })
}

/// Predictions of one method over the whole test set.
#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    /// Binary-only methods have no class scores.
    pub multiclass: bool,
    pub predictions: Vec<LabelMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub variant: String,
    pub result: Option<EvalResult>,
}

/// One row per variant, each the mean over all test frames.
pub fn evaluate_pipeline(truths: &[LabelMask], variants: &[Variant]) -> Result<Vec<TableRow>> {
    variants
        .iter()
        .map(|v| {
            if v.predictions.len() != truths.len() {
                return Err(Error::InvalidArgument(format!(
                    "variant {} has {} predictions for {} frames",
                    v.name,
                    v.predictions.len(),
                    truths.len()
                )));
            }
            let per_frame = v
                .predictions
                .iter()
                .zip(truths)
                .map(|(p, t)| per_class_dice(p, t))
                .collect::<Result<Vec<_>>>()?;
            let mut result = mean_result(&per_frame);
            if !v.multiclass {
                if let Some(r) = result.as_mut() {
                    r.vessel = None;
                    r.catheter = None;
                }
            }
            Ok(TableRow {
                variant: v.name.clone(),
                result,
            })
        })
        .collect()
}

pub const TABLE_HEADER: &str = "variant,binary_dice,catheter_dice,vessel_dice,frames";

/// CSV with one line per row; absent scores are empty fields.
pub fn table_csv(rows: &[TableRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|d| format!("{d:.6}")).unwrap_or_default();
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for row in rows {
        let r = row.result.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.variant,
            fmt(r.map(|r| r.binary)),
            fmt(r.and_then(|r| r.catheter)),
            fmt(r.and_then(|r| r.vessel)),
            r.map_or(0, |r| r.frames)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn hand_enumerated_two_by_two() {
        let x = bm(2, 2, &[(0, 0), (0, 1)]);
        let y = bm(2, 2, &[(0, 1), (1, 1)]);
        let c = Confusion::of(&x, &y).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
        assert_eq!(dice(&x, &y).unwrap(), 0.5);
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let x = bm(3, 3, &[(0, 0), (2, 2)]);
        let y = bm(3, 3, &[(1, 1)]);
        let e = bm(3, 3, &[]);
        assert_eq!(dice(&x, &x).unwrap(), 1.0);
        assert_eq!(dice(&x, &y).unwrap(), 0.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&x, &bm(2, 3, &[])).is_err());
    }

    fn lm(data: &[u8]) -> LabelMask {
        LabelMask::from_vec(2, 2, data.iter().map(|&v| Label::try_from(v).unwrap()).collect()).unwrap()
    }

    #[test]
    fn swapped_classes_keep_binary_score() {
        let truth = lm(&[1, 2, 0, 1]);
        let pred = lm(&[2, 1, 0, 2]);
        let r = per_class_dice(&pred, &truth).unwrap();
        assert_eq!(r.binary, 1.0);
        assert_eq!(r.vessel, Some(0.0));
        assert_eq!(r.catheter, Some(0.0));
    }

    #[test]
    fn absent_classes_are_absent() {
        let bg = lm(&[0, 0, 0, 0]);
        let r = per_class_dice(&bg, &bg).unwrap();
        assert_eq!(r.binary, 1.0);
        assert_eq!((r.vessel, r.catheter), (None, None));
        let only_vessel = lm(&[1, 0, 0, 0]);
        let r = per_class_dice(&only_vessel, &only_vessel).unwrap();
        assert_eq!((r.vessel, r.catheter), (Some(1.0), None));
    }

    #[test]
    fn pipeline_single_frame_matches_per_class() {
        let truth = lm(&[1, 2, 0, 1]);
        let pred = lm(&[1, 1, 0, 0]);
        let rows = evaluate_pipeline(
            &[truth.clone()],
            &[Variant {
                name: "net".into(),
                multiclass: true,
                predictions: vec![pred.clone()],
            }],
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].result.as_ref().unwrap(), &per_class_dice(&pred, &truth).unwrap());
        let csv = table_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with(TABLE_HEADER));
    }

    #[test]
    fn binary_variants_report_no_class_scores() {
        let truth = lm(&[1, 2, 0, 1]);
        let rows = evaluate_pipeline(
            &[truth.clone()],
            &[Variant {
                name: "top-hat".into(),
                multiclass: false,
                predictions: vec![truth],
            }],
        )
        .unwrap();
        let r = rows[0].result.as_ref().unwrap();
        assert_eq!((r.binary, r.vessel, r.catheter), (1.0, None, None));
        assert!(table_csv(&rows).contains("top-hat,1.000000,,,1"));
    }

    #[test]
    fn empty_test_set_gives_header_only_rows() {
        let rows = evaluate_pipeline(
            &[],
            &[Variant {
                name: "x".into(),
                multiclass: true,
                predictions: vec![],
            }],
        )
        .unwrap();
        assert!(rows[0].result.is_none());
        assert!(evaluate_pipeline(&[lm(&[0; 4])], &[Variant { name: "y".into(), multiclass: true, predictions: vec![] }]).is_err());
    }
}
