//! Central finite-difference check of analytic parameter gradients.
//!
//! A parameter whose ±h perturbation changes the objective's activation
//! pattern (a ReLU sign or a pooling winner) is skipped: the loss is not
//! differentiable across that kink.

use rand::seq::SliceRandom;
use rand::Rng;

use super::unet::{Gradients, UNetConfig, UNetParams};

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so vanishing gradients are
/// judged on absolute agreement.
pub const FLOOR: f64 = 1e-6;

/// Loss and activation-pattern hash of a parameter set.
pub type Objective<'a> = dyn Fn(&UNetParams<f64>) -> (f64, u64) + 'a;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    /// Largest relative error over the checked parameters.
    pub worst: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic` with central differences of `objective` on up to
/// `wanted` kink-free parameters drawn at random from `candidates`.
pub fn check_parameters(
    params: &UNetParams<f64>,
    analytic: &Gradients<f64>,
    objective: &Objective,
    mut candidates: Vec<usize>,
    wanted: usize,
    rng: &mut impl Rng,
) -> GradCheck {
    let (_, base) = objective(params);
    candidates.shuffle(rng);
    let mut out = GradCheck::default();
    let mut p = params.clone();
    for idx in candidates {
        if out.checked == wanted {
            break;
        }
        let orig = p.values()[idx];
        p.values_mut()[idx] = orig + STEP;
        let (plus, pat_plus) = objective(&p);
        p.values_mut()[idx] = orig - STEP;
        let (minus, pat_minus) = objective(&p);
        p.values_mut()[idx] = orig;
        if pat_plus != base || pat_minus != base {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        out.worst = out.worst.max(relative_error(analytic.values()[idx], numeric));
        out.checked += 1;
    }
    out
}

/// Flat indices of the weights and biases of the given layers.
pub fn layer_parameters(cfg: &UNetConfig, layers: &[usize]) -> Vec<usize> {
    let layout = cfg.layout();
    layers
        .iter()
        .flat_map(|&l| layout[l].weight_offset..layout[l].bias_offset + layout[l].cout)
        .collect()
}
