//! Coarse-to-fine Horn–Schunck optical flow and backward warping.
//!
//! Flow convention everywhere: `estimate_flow(f1, f2)` returns `u` with
//! `f1(p) ≈ f2(p + u(p))`, and warping by `u` computes
//! `out(p) = src(p + u(p))`. Warping `f2` by the estimated flow therefore
//! reproduces `f1`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_plane, FlowField, Frame, ProbMask, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    pub scale_factor: f32,
    /// Smoothness weight, in 8-bit intensity units (see [`estimate_flow`]).
    pub smoothness: f32,
    pub iterations_per_level: usize,
    pub warp_updates_per_level: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            pyramid_levels: 4,
            scale_factor: 0.5,
            smoothness: 15.0,
            iterations_per_level: 50,
            warp_updates_per_level: 2,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pyramid_levels >= 1
            && self.scale_factor > 0.0
            && self.scale_factor < 1.0
            && self.smoothness > 0.0
            && self.iterations_per_level >= 1
            && self.warp_updates_per_level >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid flow config {self:?}")))
        }
    }
}

/// Smallest side allowed at the coarsest pyramid level.
pub const MIN_PYRAMID_SIDE: usize = 8;

/// Separable Gaussian blur with edge replication; radius `ceil(3σ)`.
pub(crate) fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let xx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                acc += k * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let yy = (y as isize + i).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Anti-aliasing blur for a resampling step of `scale`.
fn pyramid_sigma(scale: f32) -> f32 {
    0.5 * (1.0 / (scale * scale) - 1.0).max(0.0).sqrt()
}

fn level_size(n: usize, scale: f32, level: usize) -> usize {
    ((n as f64) * (scale as f64).powi(level as i32)).round().max(1.0) as usize
}

/// Number of levels actually used so the coarsest side stays ≥ 8 px.
pub fn effective_levels(width: usize, height: usize, levels: usize, scale: f32) -> usize {
    let mut n = 1;
    while n < levels
        && level_size(width, scale, n) >= MIN_PYRAMID_SIDE
        && level_size(height, scale, n) >= MIN_PYRAMID_SIDE
    {
        n += 1;
    }
    n
}

/// Level 0 is the input; each further level is blurred and resampled by
/// `scale` relative to the previous one.
pub fn gaussian_pyramid(frame: &Frame, levels: usize, scale: f32) -> Vec<Frame> {
    let (w, h) = frame.dims();
    let levels = effective_levels(w, h, levels.max(1), scale);
    let sigma = pyramid_sigma(scale);
    let mut out = vec![frame.clone()];
    for l in 1..levels {
        let prev = &out[l - 1];
        let blurred = gaussian_blur(prev.data(), prev.width(), prev.height(), sigma);
        let (nw, nh) = (level_size(w, scale, l), level_size(h, scale, l));
        let data = resize_plane(&blurred, prev.width(), prev.height(), nw, nh);
        out.push(Frame::from_vec_clamped(nw, nh, data).expect("resampled level"));
    }
    out
}

/// Bilinear sample with edge clamping.
fn sample_clamped(src: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn warp_plane_clamped(src: &[f32], w: usize, h: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.push(sample_clamped(src, w, h, x as f32 + u[i], y as f32 + v[i]));
        }
    }
    out
}

/// Central-difference gradients with replicated borders.
fn gradients(src: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            gx[y * w + x] = 0.5 * (src[y * w + xr] - src[y * w + xl]);
            gy[y * w + x] = 0.5 * (src[yd * w + x] - src[yu * w + x]);
        }
    }
    (gx, gy)
}

/// Horn–Schunck neighbourhood average (1/6 edge, 1/12 corner weights).
fn neighbour_average(field: &[f32], w: usize, h: usize, out: &mut [f32]) {
    for y in 0..h {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let edges = field[yu * w + x] + field[yd * w + x] + field[y * w + xl] + field[y * w + xr];
            let corners =
                field[yu * w + xl] + field[yu * w + xr] + field[yd * w + xl] + field[yd * w + xr];
            out[y * w + x] = edges / 6.0 + corners / 12.0;
        }
    }
}

const INTENSITY_SCALE: f32 = 255.0;
const DERIVATIVE_SIGMA: f32 = 1.0;

/// Dense flow `u` with `f1(p) ≈ f2(p + u(p))`.
///
/// Per pyramid level, from coarsest to finest, `f2` is re-warped by the
/// current estimate `warp_updates_per_level` times and the linearised
/// Horn–Schunck system is relaxed with `iterations_per_level` Jacobi
/// sweeps. Intensities are scaled to `[0, 255]` internally, which is the
/// unit `smoothness` is expressed in.
pub fn estimate_flow(f1: &Frame, f2: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    if f1.dims() != f2.dims() {
        return Err(Error::DimensionMismatch {
            expected: f1.dims(),
            actual: f2.dims(),
        });
    }
    cfg.validate()?;
    let pyr1 = gaussian_pyramid(f1, cfg.pyramid_levels, cfg.scale_factor);
    let pyr2 = gaussian_pyramid(f2, cfg.pyramid_levels, cfg.scale_factor);
    let alpha2 = cfg.smoothness * cfg.smoothness;

    let (mut u, mut v) = (Vec::new(), Vec::new());
    let (mut pw, mut ph) = (0, 0);
    for level in (0..pyr1.len()).rev() {
        let (w, h) = pyr1[level].dims();
        if u.is_empty() {
            u = vec![0.0; w * h];
            v = vec![0.0; w * h];
        } else {
            let sx = w as f32 / pw as f32;
            let sy = h as f32 / ph as f32;
            u = resize_plane(&u, pw, ph, w, h).into_iter().map(|d| d * sx).collect();
            v = resize_plane(&v, pw, ph, w, h).into_iter().map(|d| d * sy).collect();
        }
        let scaled = |f: &Frame| -> Vec<f32> {
            let s: Vec<f32> = f.data().iter().map(|&p| p * INTENSITY_SCALE).collect();
            gaussian_blur(&s, w, h, DERIVATIVE_SIGMA)
        };
        let i1 = scaled(&pyr1[level]);
        let i2 = scaled(&pyr2[level]);
        let (gx1, gy1) = gradients(&i1, w, h);
        let (gx2, gy2) = gradients(&i2, w, h);

        let mut ubar = vec![0.0; w * h];
        let mut vbar = vec![0.0; w * h];
        for _ in 0..cfg.warp_updates_per_level {
            let i2w = warp_plane_clamped(&i2, w, h, &u, &v);
            let gx2w = warp_plane_clamped(&gx2, w, h, &u, &v);
            let gy2w = warp_plane_clamped(&gy2, w, h, &u, &v);
            let ix: Vec<f32> = gx1.iter().zip(&gx2w).map(|(a, b)| 0.5 * (a + b)).collect();
            let iy: Vec<f32> = gy1.iter().zip(&gy2w).map(|(a, b)| 0.5 * (a + b)).collect();
            let it: Vec<f32> = i2w.iter().zip(&i1).map(|(a, b)| a - b).collect();
            let (u0, v0) = (u.clone(), v.clone());
            for _ in 0..cfg.iterations_per_level {
                neighbour_average(&u, w, h, &mut ubar);
                neighbour_average(&v, w, h, &mut vbar);
                for i in 0..w * h {
                    let r = it[i] + ix[i] * (ubar[i] - u0[i]) + iy[i] * (vbar[i] - v0[i]);
                    let d = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
                    u[i] = ubar[i] - ix[i] * r / d;
                    v[i] = vbar[i] - iy[i] * r / d;
                }
            }
        }
        (pw, ph) = (w, h);
    }
    let data = u.into_iter().zip(v).map(|(a, b)| [a, b]).collect();
    FlowField::from_vec(f1.width(), f1.height(), data)
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        })
    }
}

/// Bilinear taps `(index, weight)` for sampling at `(sx, sy)`; neighbours
/// outside the image are dropped (they read as zero).
fn zero_padded_taps(w: usize, h: usize, sx: f32, sy: f32) -> impl Iterator<Item = (usize, f32)> {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
    .into_iter()
    .filter(move |&(x, y, wgt)| wgt != 0.0 && x >= 0 && y >= 0 && x < w as i64 && y < h as i64)
    .map(move |(x, y, wgt)| (y as usize * w + x as usize, wgt))
}

/// Backward warp with bilinear sampling; samples outside the image read 0.
pub fn warp_frame(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    check_dims(frame.dims(), flow.dims())?;
    let (w, h) = frame.dims();
    let src = frame.data();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = flow.get(x, y);
            if dx == 0.0 && dy == 0.0 {
                out.push(src[y * w + x]);
                continue;
            }
            let v: f32 = zero_padded_taps(w, h, x as f32 + dx, y as f32 + dy)
                .map(|(i, wgt)| src[i] * wgt)
                .sum();
            out.push(v);
        }
    }
    Frame::from_vec_clamped(w, h, out)
}

/// Backward warp with nearest-neighbour sampling; samples outside the
/// image take `T::default()` (background).
pub fn warp_labels<T: Copy + Default>(mask: &Raster<T>, flow: &FlowField) -> Result<Raster<T>> {
    check_dims(mask.dims(), flow.dims())?;
    let (w, h) = mask.dims();
    Ok(Raster::from_fn(w, h, |x, y| {
        let [dx, dy] = flow.get(x, y);
        let sx = (x as f32 + dx).round();
        let sy = (y as f32 + dy).round();
        if sx < 0.0 || sy < 0.0 || sx >= w as f32 || sy >= h as f32 {
            T::default()
        } else {
            mask.get(sx as usize, sy as usize)
        }
    }))
}

/// Interpolation stencil of one output pixel of a probability warp.
#[derive(Clone, Copy, Debug)]
enum ProbTap {
    /// Sample left the image; the pixel becomes one-hot background.
    Outside,
    /// Sample lands exactly on a pixel; copied without renormalisation.
    Exact(usize),
    Inside([(usize, f64); 4]),
}

fn prob_taps(w: usize, h: usize, flow: &FlowField) -> Vec<ProbTap> {
    let mut taps = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = flow.get(x, y);
            let sx = x as f64 + dx as f64;
            let sy = y as f64 + dy as f64;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                taps.push(ProbTap::Outside);
                continue;
            }
            let x0 = (sx.floor() as usize).min(w - 1);
            let y0 = (sy.floor() as usize).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            if fx == 0.0 && fy == 0.0 {
                taps.push(ProbTap::Exact(y0 * w + x0));
                continue;
            }
            taps.push(ProbTap::Inside([
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ]));
        }
    }
    taps
}

/// Channel-major probability planes warped together with their gradient
/// adjoint. Used by Siamese training, where the loss sees the warped
/// prediction of the second frame.
#[derive(Clone, Debug)]
pub struct ProbWarp {
    width: usize,
    height: usize,
    taps: Vec<ProbTap>,
}

impl ProbWarp {
    pub fn new(flow: &FlowField) -> Self {
        let (w, h) = flow.dims();
        ProbWarp {
            width: w,
            height: h,
            taps: prob_taps(w, h, flow),
        }
    }

    /// Warps `classes` planes: bilinear interpolation per channel followed
    /// by per-pixel renormalisation.
    pub fn forward<T: Float>(&self, src: &[T], classes: usize) -> Vec<T> {
        let n = self.width * self.height;
        assert_eq!(src.len(), n * classes);
        let mut out = vec![T::zero(); n * classes];
        for (i, tap) in self.taps.iter().enumerate() {
            match tap {
                ProbTap::Outside => out[i] = T::one(),
                ProbTap::Exact(j) => {
                    for c in 0..classes {
                        out[c * n + i] = src[c * n + j];
                    }
                }
                ProbTap::Inside(t) => {
                    let mut z = T::zero();
                    for c in 0..classes {
                        let q = interpolate(src, c * n, t);
                        out[c * n + i] = q;
                        z = z + q;
                    }
                    for c in 0..classes {
                        out[c * n + i] = out[c * n + i] / z;
                    }
                }
            }
        }
        out
    }

    /// Gradient w.r.t. the unwarped planes given the gradient w.r.t. the
    /// warped ones.
    pub fn backward<T: Float>(&self, src: &[T], classes: usize, grad_out: &[T]) -> Vec<T> {
        let n = self.width * self.height;
        let mut grad = vec![T::zero(); n * classes];
        let mut q = vec![T::zero(); classes];
        for (i, tap) in self.taps.iter().enumerate() {
            let t = match tap {
                ProbTap::Outside => continue,
                ProbTap::Exact(j) => {
                    for c in 0..classes {
                        grad[c * n + j] = grad[c * n + j] + grad_out[c * n + i];
                    }
                    continue;
                }
                ProbTap::Inside(t) => t,
            };
            let mut z = T::zero();
            for (c, qc) in q.iter_mut().enumerate() {
                *qc = interpolate(src, c * n, t);
                z = z + *qc;
            }
            // r_c = q_c / z  =>  dL/dq_j = (g_j - Σ_c g_c r_c) / z
            let dot = (0..classes).fold(T::zero(), |acc, c| acc + grad_out[c * n + i] * q[c] / z);
            for c in 0..classes {
                let gq = (grad_out[c * n + i] - dot) / z;
                for &(j, wgt) in t {
                    grad[c * n + j] = grad[c * n + j] + gq * T::from(wgt).unwrap();
                }
            }
        }
        grad
    }
}

#[inline]
fn interpolate<T: Float>(src: &[T], offset: usize, taps: &[(usize, f64); 4]) -> T {
    taps.iter().fold(T::zero(), |acc, &(j, wgt)| {
        acc + src[offset + j] * T::from(wgt).unwrap()
    })
}

/// Backward warp of class probabilities. Pixels whose sample leaves the
/// image become one-hot background.
pub fn warp_probs(probs: &ProbMask, flow: &FlowField) -> Result<ProbMask> {
    check_dims(probs.dims(), flow.dims())?;
    let (w, h) = probs.dims();
    let out = ProbWarp::new(flow).forward(probs.data(), probs.classes());
    let out = out.into_iter().map(|p: f32| p.clamp(0.0, 1.0)).collect();
    ProbMask::from_vec(w, h, probs.classes(), out)
}

/// Chains `a` (target → intermediate) with `b` (intermediate → source):
/// `c(p) = a(p) + b(p + a(p))`, `b` sampled bilinearly with edge clamping.
pub fn compose_flows(a: &FlowField, b: &FlowField) -> Result<FlowField> {
    check_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    let bx: Vec<f32> = b.data().iter().map(|v| v[0]).collect();
    let by: Vec<f32> = b.data().iter().map(|v| v[1]).collect();
    Ok(FlowField::from_fn(w, h, |x, y| {
        let [ax, ay] = a.get(x, y);
        let sx = x as f32 + ax;
        let sy = y as f32 + ay;
        [
            ax + sample_clamped(&bx, w, h, sx, sy),
            ay + sample_clamped(&by, w, h, sx, sy),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Label;

    #[test]
    fn pyramid_sizes_and_constants() {
        let f = Frame::constant(64, 64, 0.7);
        let p = gaussian_pyramid(&f, 3, 0.5);
        let sizes: Vec<_> = p.iter().map(Frame::width).collect();
        assert_eq!(sizes, vec![64, 32, 16]);
        for level in &p {
            assert!(level.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        }
        assert_eq!(gaussian_pyramid(&f, 1, 0.5).len(), 1);
        // clamped so the coarsest level keeps ≥ 8 px
        assert_eq!(gaussian_pyramid(&f, 10, 0.5).len(), 4);
    }

    #[test]
    fn warp_frame_zero_flow_is_identity() {
        let f = Frame::from_fn(9, 7, |x, y| ((x * 13 + y * 7) % 11) as f32 / 10.0);
        assert_eq!(warp_frame(&f, &FlowField::zeros(9, 7)).unwrap(), f);
    }

    #[test]
    fn warp_frame_shifts_against_flow() {
        let f = Frame::from_fn(16, 4, |x, _| if x == 10 { 1.0 } else { 0.0 });
        let out = warp_frame(&f, &FlowField::constant(16, 4, 2.0, 0.0)).unwrap();
        for x in 0..16 {
            assert_eq!(out.get(x, 1), if x == 8 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn warp_frame_outside_reads_zero() {
        let f = Frame::constant(8, 8, 1.0);
        let out = warp_frame(&f, &FlowField::constant(8, 8, 20.0, 0.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_labels_integer_shift() {
        let m = Raster::from_fn(6, 5, |x, y| Label::ALL[(x * 2 + y) % 3]);
        let out = warp_labels(&m, &FlowField::constant(6, 5, -1.0, 2.0)).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let expected = if x >= 1 && y + 2 < 5 {
                    m.get(x - 1, y + 2)
                } else {
                    Label::Background
                };
                assert_eq!(out.get(x, y), expected);
            }
        }
        assert_eq!(warp_labels(&m, &FlowField::zeros(6, 5)).unwrap(), m);
    }

    #[test]
    fn warp_probs_uniform_unchanged_and_outside_background() {
        let p = ProbMask::uniform(8, 8, 3);
        let flow = FlowField::constant(8, 8, 0.3, -0.6);
        let out = warp_probs(&p, &flow).unwrap();
        for y in 1..8 {
            for x in 0..7 {
                for c in 0..3 {
                    assert!((out.prob(c, x, y) - 1.0 / 3.0).abs() < 1e-6);
                }
            }
        }
        // top row samples y = -0.6
        assert_eq!(out.prob(0, 3, 0), 1.0);
        assert_eq!(out.prob(1, 3, 0), 0.0);
    }

    #[test]
    fn prob_warp_backward_is_adjoint_jacobian() {
        // finite differences through the renormalised warp
        let (w, h, c) = (5, 4, 3);
        let flow = FlowField::from_fn(w, h, |x, y| [0.37 * x as f32 - 0.8, 0.21 * y as f32 - 0.3]);
        let warp = ProbWarp::new(&flow);
        let mut src: Vec<f64> = (0..w * h * c).map(|i| 0.2 + ((i * 37) % 11) as f64 / 13.0).collect();
        let weights: Vec<f64> = (0..w * h * c).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let loss = |s: &[f64]| -> f64 {
            warp.forward(s, c).iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let grad = warp.backward(&src, c, &weights);
        for i in 0..src.len() {
            let orig = src[i];
            src[i] = orig + 1e-6;
            let lp = loss(&src);
            src[i] = orig - 1e-6;
            let lm = loss(&src);
            src[i] = orig;
            let fd = (lp - lm) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6, "index {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn compose_with_zero_is_identity() {
        let a = FlowField::from_fn(6, 6, |x, y| [x as f32 * 0.1, -(y as f32) * 0.2]);
        assert_eq!(compose_flows(&a, &FlowField::zeros(6, 6)).unwrap(), a);
        let c = compose_flows(&FlowField::constant(6, 6, 1.0, 0.0), &FlowField::constant(6, 6, 2.0, -1.0)).unwrap();
        assert_eq!(c.get(2, 2), [3.0, -1.0]);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let f = Frame::constant(8, 8, 0.5);
        let g = Frame::constant(8, 9, 0.5);
        assert!(matches!(
            estimate_flow(&f, &g, &FlowConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(warp_frame(&f, &FlowField::zeros(9, 8)).is_err());
    }
}
