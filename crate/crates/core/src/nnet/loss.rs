//! Cross-entropy losses with their gradients w.r.t. the predicted probabilities.
//!
//! Probabilities are clamped to `[ε, 1 − ε]` before the logarithm; the
//! gradient is zero where the clamp is active. Losses are means over pixels.

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Label, LabelMask, ProbMask};

pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Binary cross-entropy of foreground probabilities against a mask.
pub fn bce<T: Scalar>(pred: &[T], target: &[bool]) -> LossGrad<T> {
    assert_eq!(pred.len(), target.len());
    let eps = T::lit(PROB_EPSILON);
    let hi = T::one() - eps;
    let n = T::lit(pred.len() as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.max(eps).min(hi);
            let clamped = p < eps || p > hi;
            if t {
                loss = loss - pc.ln();
                if clamped { T::zero() } else { -T::one() / (pc * n) }
            } else {
                loss = loss - (T::one() - pc).ln();
                if clamped { T::zero() } else { T::one() / ((T::one() - pc) * n) }
            }
        })
        .collect();
    LossGrad {
        loss: loss / n,
        grad,
    }
}

/// Gradients of the two-branch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseLossGrad<T> {
    pub loss: T,
    pub grad_first: Vec<T>,
    pub grad_warped: Vec<T>,
}

/// Mean over pixels of `−Σ_c y_c [ln s_c + ln s'_c]` with one-hot `y`.
///
/// `first` and `warped` are channel-major, `classes` planes each. When
/// `warped` is `None` only the first term is evaluated (plain categorical
/// cross-entropy).
pub fn siamese_cce<T: Scalar>(
    first: &[T],
    warped: Option<&[T]>,
    labels: &[Label],
    classes: usize,
) -> SiameseLossGrad<T> {
    let n = labels.len();
    assert_eq!(first.len(), n * classes);
    if let Some(w) = warped {
        assert_eq!(w.len(), n * classes);
    }
    let eps = T::lit(PROB_EPSILON);
    let hi = T::one() - eps;
    let nt = T::lit(n as f64);
    let mut grad_first = vec![T::zero(); first.len()];
    let mut grad_warped = vec![T::zero(); if warped.is_some() { first.len() } else { 0 }];
    // each branch sums separately, so identical branches give exactly twice
    // the single-branch loss
    let term = |probs: &[T], grad: &mut [T]| {
        let mut loss = T::zero();
        for (i, l) in labels.iter().enumerate() {
            let c = l.index();
            let p = probs[c * n + i];
            let pc = p.max(eps).min(hi);
            loss = loss - pc.ln();
            if p >= eps && p <= hi {
                grad[c * n + i] = -T::one() / (pc * nt);
            }
        }
        loss
    };
    let mut loss = term(first, &mut grad_first);
    if let Some(w) = warped {
        loss = loss + term(w, &mut grad_warped);
    }
    SiameseLossGrad {
        loss: loss / nt,
        grad_first,
        grad_warped,
    }
}

fn check(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// [`bce`] on typed masks; the prediction must be a one-class mask.
pub fn bce_loss(pred: &ProbMask, target: &BinaryMask) -> Result<LossGrad<f64>> {
    check(pred.dims(), target.dims())?;
    if pred.classes() != 1 {
        return Err(Error::InvalidArgument("BCE needs a one-class prediction".into()));
    }
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    Ok(bce(&p, target.data()))
}

/// [`siamese_cce`] on typed three-class masks.
pub fn cce_loss_siamese(
    first: &ProbMask,
    warped: &ProbMask,
    labels: &LabelMask,
) -> Result<SiameseLossGrad<f64>> {
    check(first.dims(), labels.dims())?;
    check(warped.dims(), labels.dims())?;
    if first.classes() != 3 || warped.classes() != 3 {
        return Err(Error::InvalidArgument("Siamese loss needs three-class predictions".into()));
    }
    let a: Vec<f64> = first.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = warped.data().iter().map(|&v| v as f64).collect();
    Ok(siamese_cce(&a, Some(&b), labels.data(), 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let half = bce(&[0.5f64; 4], &[true, false, true, false]);
        assert!((half.loss - 2f64.ln()).abs() < 1e-12);
        let single = bce(&[0.9f64], &[true]);
        assert!((single.loss - 0.105_360_515_657_826_3).abs() < 1e-12);
        let perfect = bce(&[1.0f64, 0.0], &[true, false]);
        assert!(perfect.loss <= -(1.0 - PROB_EPSILON).ln() + 1e-15);
        assert!(perfect.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_gradient_matches_difference() {
        let p = [0.3f64, 0.8, 0.55];
        let t = [true, false, true];
        let g = bce(&p, &t).grad;
        for i in 0..3 {
            let mut a = p;
            let mut b = p;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (bce(&a, &t).loss - bce(&b, &t).loss) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn siamese_single_pixel() {
        let r = siamese_cce(&[0.2f64, 0.7, 0.1], Some(&[0.3, 0.6, 0.1]), &[Label::Vessel], 3);
        let expected = -(0.7f64.ln() + 0.6f64.ln());
        assert!((r.loss - expected).abs() < 1e-12);
        assert_eq!(r.grad_first, vec![0.0, -1.0 / 0.7, 0.0]);
    }

    #[test]
    fn siamese_uniform_is_two_ln_three() {
        let u = [1.0f64 / 3.0; 3];
        let r = siamese_cce(&u, Some(&u), &[Label::Catheter], 3);
        assert!((r.loss - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn typed_wrappers_check_shapes() {
        let p = ProbMask::uniform(2, 2, 3);
        let y = LabelMask::filled(2, 3, Label::Background);
        assert!(cce_loss_siamese(&p, &p, &y).is_err());
        let b = BinaryMask::filled(2, 2, false);
        assert!(bce_loss(&p, &b).is_err());
    }
}
