//! Single-sample layer kernels on channel-major `C × H × W` tensors.

use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds `input` into a `(C·k·k) × (H·W)` matrix for a stride-1,
/// zero-padded "same" convolution with an odd `k × k` kernel.
pub fn im2col<T: Scalar>(input: &Tensor<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let hw = h * w;
    if k == 1 {
        return input.data.clone();
    }
    let r = (k / 2) as isize;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &input.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (oy, ox) = (ky as isize - r, kx as isize - r);
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx_lo = (x_lo as isize + ox) as usize;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&src_row[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    if k == 1 {
        return cols.to_vec();
    }
    let r = (k / 2) as isize;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (oy, ox) = (ky as isize - r, kx as isize - r);
                let x_lo = (-ox).max(0) as usize;
                let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let base = sy as usize * w;
                    for x in x_lo..x_hi {
                        let sx = (x as isize + ox) as usize;
                        plane[base + sx] = plane[base + sx] + src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// Same-size convolution. `weight` is `[cout][cin][k][k]`, `bias` is `[cout]`.
/// Returns the output and the unfolded input kept for the backward pass.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
) -> (Tensor<T>, Vec<T>) {
    let hw = input.plane_len();
    let kk = input.channels * k * k;
    assert_eq!(weight.len(), cout * kk);
    let cols = im2col(input, k);
    let mut out = Vec::with_capacity(cout * hw);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(
        cout,
        kk,
        hw,
        T::one(),
        weight,
        (kk as isize, 1),
        &cols,
        (hw as isize, 1),
        T::one(),
        &mut out,
        (hw as isize, 1),
    );
    (Tensor::from_vec(cout, input.height, input.width, out), cols)
}

/// Accumulates weight/bias gradients and returns the input gradient when
/// `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    cols: &[T],
    in_shape: (usize, usize, usize),
    weight: &[T],
    k: usize,
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input: bool,
) -> Option<Tensor<T>> {
    let (cin, h, w) = in_shape;
    let hw = h * w;
    let cout = grad_out.channels;
    let kk = cin * k * k;
    // dW += dOut · colsᵀ
    T::gemm(
        cout,
        hw,
        kk,
        T::one(),
        &grad_out.data,
        (hw as isize, 1),
        cols,
        (1, hw as isize),
        T::one(),
        grad_weight,
        (kk as isize, 1),
    );
    for (co, gb) in grad_bias.iter_mut().enumerate() {
        *gb = *gb + grad_out.data[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
    }
    if !need_input {
        return None;
    }
    // dCols = Wᵀ · dOut
    let mut dcols = vec![T::zero(); kk * hw];
    T::gemm(
        kk,
        cout,
        hw,
        T::one(),
        weight,
        (1, kk as isize),
        &grad_out.data,
        (hw as isize, 1),
        T::zero(),
        &mut dcols,
        (hw as isize, 1),
    );
    Some(Tensor::from_vec(cin, h, w, col2im(&dcols, cin, h, w, k)))
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in &mut t.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the post-activation output is not positive.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling, stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the winning element (first maximum in
/// raster order).
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = (input.channels, input.height, input.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if input.data[i] > input.data[best] {
                        best = i;
                    }
                }
                out.push(input.data[best]);
                arg.push(best as u32);
            }
        }
    }
    (Tensor::from_vec(c, oh, ow, out), arg)
}

pub fn maxpool_backward<T: Scalar>(
    argmax: &[u32],
    in_shape: (usize, usize, usize),
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = in_shape;
    let mut grad = Tensor::zeros(c, h, w);
    for (&i, &g) in argmax.iter().zip(&grad_out.data) {
        grad.data[i as usize] = grad.data[i as usize] + g;
    }
    grad
}

/// Interpolation taps for ×2 bilinear upsampling along one axis
/// (pixel-centre aligned, edges clamped).
fn upsample_taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|i| {
            let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn upsample_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input.channels, input.height, input.width);
    let (oh, ow) = (2 * h, 2 * w);
    let ys = upsample_taps(h);
    let xs = upsample_taps(w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let p = &input.data[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for &(x0, x1, fx) in &xs {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let top = p[y0 * w + x0] * gx + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * gx + p[y1 * w + x1] * fx;
                out.push(top * gy + bottom * fy);
            }
        }
    }
    Tensor::from_vec(c, oh, ow, out)
}

pub fn upsample_backward<T: Scalar>(grad_out: &Tensor<T>, in_shape: (usize, usize, usize)) -> Tensor<T> {
    let (c, h, w) = in_shape;
    let ow = 2 * w;
    let ys = upsample_taps(h);
    let xs = upsample_taps(w);
    let mut grad = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let g = &grad_out.data[ci * 4 * h * w..(ci + 1) * 4 * h * w];
        let p = &mut grad.data[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let v = g[oy * ow + ox];
                p[y0 * w + x0] = p[y0 * w + x0] + v * gy * gx;
                p[y0 * w + x1] = p[y0 * w + x1] + v * gy * fx;
                p[y1 * w + x0] = p[y1 * w + x0] + v * fy * gx;
                p[y1 * w + x1] = p[y1 * w + x1] + v * fy * fx;
            }
        }
    }
    grad
}

/// Channel concatenation `[a; b]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.height, a.width), (b.height, b.width));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Splits a gradient of `[a; b]` into the parts for `a` (first `ca` channels) and `b`.
pub fn split<T: Scalar>(t: Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let hw = t.plane_len();
    let mut a = t.data;
    let b = a.split_off(ca * hw);
    let cb = t.channels - ca;
    (
        Tensor::from_vec(ca, t.height, t.width, a),
        Tensor::from_vec(cb, t.height, t.width, b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(c: usize, h: usize, w: usize, seed: usize) -> Tensor<f64> {
        let data = (0..c * h * w)
            .map(|i| (((i + seed) * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        Tensor::from_vec(c, h, w, data)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let input = tensor(2, 5, 4, 1);
        let (cout, k) = (3, 3);
        let weight: Vec<f64> = (0..cout * 2 * 9).map(|i| ((i * 13) % 17) as f64 / 8.0 - 1.0).collect();
        let bias = vec![0.5, -0.25, 1.0];
        let (out, _) = conv_forward(&input, &weight, &bias, cout, k);
        for co in 0..cout {
            for y in 0..5isize {
                for x in 0..4isize {
                    let mut s = bias[co];
                    for ci in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= 5 || sx >= 4 {
                                    continue;
                                }
                                s += weight[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * input.data[(ci * 5 + sy as usize) * 4 + sx as usize];
                            }
                        }
                    }
                    let got = out.data[(co * 5 + y as usize) * 4 + x as usize];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = tensor(3, 6, 5, 3);
        let cols = im2col(&x, 3);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 31) % 19) as f64 - 9.0).collect();
        let back = col2im(&y, 3, 6, 5, 3);
        assert!((dot(&cols, &y) - dot(&x.data, &back)).abs() < 1e-9);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = tensor(2, 3, 4, 5);
        let up = upsample_forward(&x);
        let g = tensor(2, 6, 8, 11);
        let back = upsample_backward(&g, (2, 3, 4));
        assert!((dot(&up.data, &g.data) - dot(&x.data, &back.data)).abs() < 1e-9);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::from_vec(1, 3, 3, vec![0.25; 9]);
        assert!(upsample_forward(&x).data.iter().all(|&v| (v - 0.25f64).abs() < 1e-15));
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = Tensor::from_vec(1, 2, 4, vec![1.0, 3.0, 0.0, -1.0, 2.0, 0.5, -2.0, 4.0]);
        let (p, arg) = maxpool_forward(&x);
        assert_eq!(p.data, vec![3.0, 4.0]);
        let g = maxpool_backward(&arg, (1, 2, 4), &Tensor::from_vec(1, 1, 2, vec![10.0, 20.0]));
        assert_eq!(g.data, vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }
}
