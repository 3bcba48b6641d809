//! U-Net definition, forward pass with trace, and exact backward pass.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Tensor};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::image::{Frame, ProbMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    /// ×2 bilinear interpolation followed by a 3×3 convolution + ReLU.
    BilinearConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    /// Side of the square input; divisible by `2^levels`.
    pub input_size: usize,
    /// Number of pooling steps; the bottleneck sits below the last one.
    pub levels: usize,
    pub convs_per_level: usize,
    /// Features at level `k` are `base_features · 2^k`.
    pub base_features: usize,
    /// 1 = sigmoid foreground probability, 3 = softmax over
    /// background / vessel / catheter.
    pub out_classes: usize,
    pub upsample: UpsampleMode,
}

impl UNetConfig {
    /// 256² input, 4 levels of 3 convolutions, 64 base features (1024 at the bottleneck).
    pub fn paper(out_classes: usize) -> Self {
        UNetConfig {
            input_size: 256,
            levels: 4,
            convs_per_level: 3,
            base_features: 64,
            out_classes,
            upsample: UpsampleMode::BilinearConv,
        }
    }

    /// 64² input, 3 levels of 2 convolutions, 8 base features.
    pub fn desk(out_classes: usize) -> Self {
        UNetConfig {
            input_size: 64,
            levels: 3,
            convs_per_level: 2,
            base_features: 8,
            out_classes,
            upsample: UpsampleMode::BilinearConv,
        }
    }

    pub fn with_classes(self, out_classes: usize) -> Self {
        UNetConfig { out_classes, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.levels == 0 || self.convs_per_level == 0 || self.base_features == 0 {
            return fail(format!("degenerate network config {self:?}"));
        }
        if self.input_size == 0 || self.input_size % (1 << self.levels) != 0 {
            return fail(format!(
                "input size {} not divisible by 2^{}",
                self.input_size, self.levels
            ));
        }
        if !matches!(self.out_classes, 1 | 3) {
            return fail(format!("out_classes must be 1 or 3, got {}", self.out_classes));
        }
        Ok(())
    }

    pub fn features(&self, level: usize) -> usize {
        self.base_features << level
    }

    pub fn bottleneck_features(&self) -> usize {
        self.features(self.levels)
    }

    /// Convolution layers in parameter order: encoder levels, bottleneck,
    /// then per decoder level the post-upsample convolution followed by the
    /// post-concatenation convolutions, and finally the 1×1 head.
    pub fn layout(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |cin: usize, cout: usize, k: usize, relu: bool| {
            let weights = cin * cout * k * k;
            specs.push(ConvSpec {
                cin,
                cout,
                k,
                relu,
                weight_offset: offset,
                bias_offset: offset + weights,
            });
            offset += weights + cout;
        };
        let mut cin = 1;
        for level in 0..=self.levels {
            for _ in 0..self.convs_per_level {
                push(cin, self.features(level), 3, true);
                cin = self.features(level);
            }
        }
        for level in (0..self.levels).rev() {
            let f = self.features(level);
            push(cin, f, 3, true);
            cin = 2 * f;
            for _ in 0..self.convs_per_level {
                push(cin, f, 3, true);
                cin = f;
            }
        }
        push(cin, self.out_classes, 1, false);
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layout()
            .last()
            .map(|s| s.bias_offset + s.cout)
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub relu: bool,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }
}

/// All kernels and biases in [`UNetConfig::layout`] order, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams<T> {
    config: UNetConfig,
    values: Vec<T>,
}

impl<T: Scalar> UNetParams<T> {
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(UNetParams {
            values: vec![T::zero(); config.parameter_count()],
            config,
        })
    }

    /// Fan-in scaled uniform kernels `U(±√(6/fan_in))`, zero biases.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in config.layout() {
            let bound = (6.0 / (spec.cin * spec.k * spec.k) as f64).sqrt();
            for w in &mut params.values[spec.weight_offset..spec.bias_offset] {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn from_values(config: UNetConfig, values: Vec<T>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.parameter_count() {
            return Err(Error::ConfigMismatch(format!(
                "{} parameters for a config expecting {}",
                values.len(),
                config.parameter_count()
            )));
        }
        Ok(UNetParams { config, values })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        UNetParams {
            config: self.config,
            values: self
                .values
                .iter()
                .map(|v| U::lit(v.to_f64().unwrap()))
                .collect(),
        }
    }

    /// Same network with a zeroed output head of `out_classes` channels, so
    /// training starts from a uniform prediction; every other layer keeps
    /// its weights.
    pub fn with_head(&self, out_classes: usize) -> Result<Self> {
        let config = self.config.with_classes(out_classes);
        let mut out = Self::zeros(config)?;
        let head = *config.layout().last().unwrap();
        out.values[..head.weight_offset].copy_from_slice(&self.values[..head.weight_offset]);
        Ok(out)
    }
}

/// Parameter gradients, congruent with [`UNetParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    config: UNetConfig,
    values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(config: UNetConfig) -> Self {
        Gradients {
            values: vec![T::zero(); config.parameter_count()],
            config,
        }
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch("adding gradients of different networks".into()));
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v = *v * factor;
        }
    }
}

struct ConvRecord<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    output: Tensor<T>,
    relu: bool,
}

/// Intermediates of one forward pass, consumed by [`backward`].
pub struct Trace<T> {
    convs: Vec<ConvRecord<T>>,
    pools: Vec<(Vec<u32>, (usize, usize, usize))>,
    ups: Vec<(usize, usize, usize)>,
    probs: Vec<T>,
    classes: usize,
    size: usize,
}

impl<T: Scalar> Trace<T> {
    /// Channel-major output probabilities.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Hash of every ReLU on/off state and pooling winner. Two inputs or
    /// parameter sets with the same pattern lie on the same linear piece of
    /// the network, which finite-difference checks rely on.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for rec in self.convs.iter().filter(|r| r.relu) {
            for v in &rec.output.data {
                (*v > T::zero()).hash(&mut h);
            }
        }
        for (arg, _) in &self.pools {
            arg.hash(&mut h);
        }
        h.finish()
    }
}

fn conv<T: Scalar>(
    params: &UNetParams<T>,
    spec: &ConvSpec,
    input: &Tensor<T>,
    records: &mut Vec<ConvRecord<T>>,
) -> Tensor<T> {
    let w = &params.values[spec.weight_offset..spec.bias_offset];
    let b = &params.values[spec.bias_offset..spec.bias_offset + spec.cout];
    let (mut out, cols) = layers::conv_forward(input, w, b, spec.cout, spec.k);
    if spec.relu {
        layers::relu_inplace(&mut out);
    }
    records.push(ConvRecord {
        cols,
        in_shape: (input.channels, input.height, input.width),
        output: out.clone(),
        relu: spec.relu,
    });
    out
}

/// Zero-mean, unit-variance copy of the input; the standard deviation is
/// floored so flat images stay finite.
fn standardize<T: Scalar>(input: &[T]) -> Vec<T> {
    let n = T::lit(input.len() as f64);
    let mean = input.iter().copied().sum::<T>() / n;
    let var = input.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let scale = T::one() / var.sqrt().max(T::lit(1e-3));
    input.iter().map(|&v| (v - mean) * scale).collect()
}

/// Runs the network on one `input_size²` single-channel image. The image
/// is standardised per frame before the first convolution.
pub fn forward<T: Scalar>(params: &UNetParams<T>, input: &[T]) -> Result<Trace<T>> {
    let cfg = params.config;
    let n = cfg.input_size;
    if input.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "network input has {} pixels, expected {n}x{n}",
            input.len()
        )));
    }
    let layout = cfg.layout();
    let mut specs = layout.iter();
    let mut convs = Vec::with_capacity(layout.len());
    let mut pools = Vec::with_capacity(cfg.levels);
    let mut ups = Vec::with_capacity(cfg.levels);
    let mut skips = Vec::with_capacity(cfg.levels);

    let mut x = Tensor::from_vec(1, n, n, standardize(input));
    for _ in 0..cfg.levels {
        for _ in 0..cfg.convs_per_level {
            x = conv(params, specs.next().unwrap(), &x, &mut convs);
        }
        let (pooled, arg) = layers::maxpool_forward(&x);
        pools.push((arg, (x.channels, x.height, x.width)));
        skips.push(x);
        x = pooled;
    }
    for _ in 0..cfg.convs_per_level {
        x = conv(params, specs.next().unwrap(), &x, &mut convs);
    }
    for level in (0..cfg.levels).rev() {
        ups.push((x.channels, x.height, x.width));
        x = layers::upsample_forward(&x);
        x = conv(params, specs.next().unwrap(), &x, &mut convs);
        x = layers::concat(&x, &skips[level]);
        for _ in 0..cfg.convs_per_level {
            x = conv(params, specs.next().unwrap(), &x, &mut convs);
        }
    }
    let logits = conv(params, specs.next().unwrap(), &x, &mut convs);
    let probs = head_forward(&logits.data, cfg.out_classes);
    Ok(Trace {
        convs,
        pools,
        ups,
        probs,
        classes: cfg.out_classes,
        size: n,
    })
}

fn head_forward<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    if classes == 1 {
        return logits
            .iter()
            .map(|&z| T::one() / (T::one() + (-z).exp()))
            .collect();
    }
    let n = logits.len() / classes;
    let mut out = vec![T::zero(); logits.len()];
    for i in 0..n {
        let max = (0..classes)
            .map(|c| logits[c * n + i])
            .fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for c in 0..classes {
            let e = (logits[c * n + i] - max).exp();
            out[c * n + i] = e;
            z = z + e;
        }
        for c in 0..classes {
            out[c * n + i] = out[c * n + i] / z;
        }
    }
    out
}

fn head_backward<T: Scalar>(probs: &[T], grad: &[T], classes: usize) -> Vec<T> {
    if classes == 1 {
        return probs
            .iter()
            .zip(grad)
            .map(|(&p, &g)| g * p * (T::one() - p))
            .collect();
    }
    let n = probs.len() / classes;
    let mut out = vec![T::zero(); probs.len()];
    for i in 0..n {
        let dot = (0..classes).fold(T::zero(), |acc, c| acc + grad[c * n + i] * probs[c * n + i]);
        for c in 0..classes {
            out[c * n + i] = probs[c * n + i] * (grad[c * n + i] - dot);
        }
    }
    out
}

/// Exact parameter gradients given `dL/dprobs` for the traced forward pass.
pub fn backward<T: Scalar>(
    params: &UNetParams<T>,
    trace: &Trace<T>,
    grad_probs: &[T],
) -> Result<Gradients<T>> {
    let cfg = params.config;
    if grad_probs.len() != trace.probs.len() || trace.size != cfg.input_size || trace.classes != cfg.out_classes {
        return Err(Error::InvalidArgument(
            "gradient does not match the traced forward pass".into(),
        ));
    }
    let layout = cfg.layout();
    let mut grads = Gradients::zeros(cfg);
    let mut li = layout.len();

    let conv_back = |li: usize, mut g: Tensor<T>, grads: &mut Gradients<T>, need_input: bool| {
        let spec = &layout[li];
        let rec = &trace.convs[li];
        if spec.relu {
            layers::relu_backward(&rec.output, &mut g);
        }
        let (gw, rest) = grads.values[spec.weight_offset..].split_at_mut(spec.weight_len());
        let gb = &mut rest[..spec.cout];
        let w = &params.values[spec.weight_offset..spec.bias_offset];
        layers::conv_backward(&rec.cols, rec.in_shape, w, spec.k, &g, gw, gb, need_input)
    };

    let n = cfg.input_size;
    let dlogits = head_backward(&trace.probs, grad_probs, cfg.out_classes);
    li -= 1;
    let mut g = conv_back(li, Tensor::from_vec(cfg.out_classes, n, n, dlogits), &mut grads, true).unwrap();

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..cfg.levels).map(|_| None).collect();
    // decoder steps run from the deepest level up; unwind them in reverse
    for step in (0..cfg.levels).rev() {
        let level = cfg.levels - 1 - step;
        for _ in 0..cfg.convs_per_level {
            li -= 1;
            g = conv_back(li, g, &mut grads, true).unwrap();
        }
        let (gup, gskip) = layers::split(g, cfg.features(level));
        skip_grads[level] = Some(gskip);
        li -= 1;
        let gup = conv_back(li, gup, &mut grads, true).unwrap();
        g = layers::upsample_backward(&gup, trace.ups[step]);
    }
    for _ in 0..cfg.convs_per_level {
        li -= 1;
        g = conv_back(li, g, &mut grads, true).unwrap();
    }
    for level in (0..cfg.levels).rev() {
        let (arg, shape) = &trace.pools[level];
        let mut gl = layers::maxpool_backward(arg, *shape, &g);
        let skip = skip_grads[level].take().unwrap();
        for (a, &b) in gl.data.iter_mut().zip(&skip.data) {
            *a = *a + b;
        }
        g = gl;
        for j in 0..cfg.convs_per_level {
            li -= 1;
            let need_input = !(level == 0 && j + 1 == cfg.convs_per_level);
            match conv_back(li, g, &mut grads, need_input) {
                Some(next) => g = next,
                None => return Ok(grads),
            }
        }
    }
    unreachable!("first encoder convolution returns early")
}

fn check_frame(cfg: &UNetConfig, frame: &Frame) -> Result<()> {
    let n = cfg.input_size;
    if frame.dims() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: (n, n),
            actual: frame.dims(),
        });
    }
    Ok(())
}

/// Class probabilities for a frame of the configured input size.
pub fn unet_forward(params: &UNetParams<f32>, frame: &Frame) -> Result<ProbMask> {
    check_frame(&params.config, frame)?;
    let trace = forward(params, frame.data())?;
    let n = params.config.input_size;
    let probs = trace.probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    ProbMask::from_vec(n, n, params.config.out_classes, probs)
}

/// Parameter gradients for one frame given `dL/dprobs`.
pub fn unet_backward<T: Scalar>(
    params: &UNetParams<T>,
    frame: &Frame,
    grad_probs: &[T],
) -> Result<Gradients<T>> {
    check_frame(&params.config, frame)?;
    let input: Vec<T> = frame.data().iter().map(|&v| T::lit(v as f64)).collect();
    let trace = forward(params, &input)?;
    backward(params, &trace, grad_probs)
}
