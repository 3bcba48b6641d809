//! Pixel containers shared by every stage.
//!
//! All rasters are row-major with the origin at the top-left corner,
//! `x` increasing to the right and `y` increasing downwards.

use crate::error::{Error, Result};

/// A row-major grid of plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Foreground/background mask.
pub type BinaryMask = Raster<bool>;

/// Per-pixel class map.
pub type LabelMask = Raster<Label>;

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "raster data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// `true` when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Segmentation classes. The discriminant is the on-disk palette index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    #[default]
    Background = 0,
    Vessel = 1,
    Catheter = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Background, Label::Vessel, Label::Catheter];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn is_foreground(self) -> bool {
        self != Label::Background
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Label::from_index(value as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("label value {value} not in {{0,1,2}}")))
    }
}

impl LabelMask {
    /// Vessel ∪ catheter.
    pub fn foreground(&self) -> BinaryMask {
        self.map(Label::is_foreground)
    }

    pub fn class_mask(&self, label: Label) -> BinaryMask {
        self.map(|l| l == label)
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

/// Single-channel intensity image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    /// Builds a frame, rejecting wrong lengths and values outside `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Frame> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "frame data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "frame intensity {v} outside [0, 1]"
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    /// Builds a frame, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn from_vec_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Frame> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Frame::from_vec(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Frame {
        Frame {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Frame {
        let raster = Raster::from_fn(width, height, |x, y| f(x, y).clamp(0.0, 1.0));
        Frame {
            width,
            height,
            data: raster.into_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64) as f32
    }
}

/// Per-pixel class probabilities, channel-major (`classes` planes of `width × height`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f32>,
}

/// Allowed deviation of a pixel's probabilities from summing to one.
pub const PROB_SUM_TOLERANCE: f32 = 1e-5;

impl ProbMask {
    /// Builds a probability mask from channel-major data.
    ///
    /// With one class the single plane holds the foreground probability of a
    /// sigmoid head and only the `[0, 1]` range is checked. With two or more
    /// classes each pixel must sum to one.
    pub fn from_vec(width: usize, height: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 || data.len() != width * height * classes {
            return Err(Error::InvalidArgument(format!(
                "prob mask data has {} values, expected {classes}x{width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "probability outside [0, 1]".to_string(),
            ));
        }
        let mask = ProbMask {
            width,
            height,
            classes,
            data,
        };
        if classes > 1 {
            let plane = width * height;
            for i in 0..plane {
                let sum: f32 = (0..classes).map(|c| mask.data[c * plane + i]).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "pixel {i} probabilities sum to {sum}"
                    )));
                }
            }
        }
        Ok(mask)
    }

    pub fn uniform(width: usize, height: usize, classes: usize) -> Self {
        let p = if classes == 1 { 0.5 } else { 1.0 / classes as f32 };
        ProbMask {
            width,
            height,
            classes,
            data: vec![p; width * height * classes],
        }
    }

    /// Three-class one-hot encoding of a label mask.
    pub fn one_hot(labels: &LabelMask) -> Self {
        let plane = labels.width() * labels.height();
        let mut data = vec![0.0; plane * 3];
        for (i, l) in labels.data().iter().enumerate() {
            data[l.index() * plane + i] = 1.0;
        }
        ProbMask {
            width: labels.width(),
            height: labels.height(),
            classes: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[class * n..(class + 1) * n]
    }

    #[inline]
    pub fn prob(&self, class: usize, x: usize, y: usize) -> f32 {
        self.data[class * self.width * self.height + y * self.width + x]
    }

    /// Per-pixel argmax, ties resolved towards the lowest class index.
    ///
    /// A one-class (sigmoid) mask is foreground where `p > 0.5`; the
    /// foreground is reported as [`Label::Vessel`].
    pub fn argmax(&self) -> LabelMask {
        let n = self.width * self.height;
        let data = (0..n)
            .map(|i| {
                if self.classes == 1 {
                    return if self.data[i] > 0.5 {
                        Label::Vessel
                    } else {
                        Label::Background
                    };
                }
                let mut best = 0;
                for c in 1..self.classes {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                Label::from_index(best).unwrap_or(Label::Background)
            })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Dense displacement field in pixels.
///
/// Convention: a flow `u` relating a target grid to a source image means
/// `target(p) ≈ source(p + u(p))`, so warping is a single gather.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            data: vec![[dx, dy]; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "flow data has {} vectors, expected {width}x{height}",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow field".to_string()));
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let raster = Raster::from_fn(width, height, f);
        FlowField {
            width,
            height,
            data: raster.into_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// Mean endpoint error against `other` over the centred crop keeping
    /// `fraction` of each dimension.
    pub fn mean_endpoint_error(&self, other: &FlowField, fraction: f64) -> f64 {
        let (x0, x1) = central_range(self.width, fraction);
        let (y0, y1) = central_range(self.height, fraction);
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let a = self.get(x, y);
                let b = other.get(x, y);
                sum += ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64);
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }

    /// Vector magnitudes in raster order.
    pub fn magnitudes(&self) -> Vec<f32> {
        self.data.iter().map(|v| v[0].hypot(v[1])).collect()
    }
}

/// Half-open index range of the centred window covering `fraction` of `len`.
pub fn central_range(len: usize, fraction: f64) -> (usize, usize) {
    let keep = ((len as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let start = (len - keep) / 2;
    (start, start + keep)
}

/// An ordered run of frames, optionally labelled.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
    labels: Option<Vec<LabelMask>>,
    frame_period: f64,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, labels: Option<Vec<LabelMask>>, frame_period: f64) -> Result<Self> {
        if let Some(first) = frames.first() {
            let dims = first.dims();
            if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: bad.dims(),
                });
            }
            if let Some(labels) = &labels {
                if labels.len() != frames.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} label masks for {} frames",
                        labels.len(),
                        frames.len()
                    )));
                }
                if let Some(bad) = labels.iter().find(|l| l.dims() != dims) {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        actual: bad.dims(),
                    });
                }
            }
        } else if labels.as_ref().is_some_and(|l| !l.is_empty()) {
            return Err(Error::InvalidArgument("labels without frames".to_string()));
        }
        if !(frame_period.is_finite() && frame_period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame period {frame_period} must be positive"
            )));
        }
        Ok(Sequence {
            frames,
            labels,
            frame_period,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn labels(&self) -> Option<&[LabelMask]> {
        self.labels.as_deref()
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_frame(frame: &Frame, width: usize, height: usize) -> Result<Frame> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {width}x{height} has a zero dimension"
        )));
    }
    if frame.dims() == (width, height) {
        return Ok(frame.clone());
    }
    let data = resize_plane(frame.data(), frame.width(), frame.height(), width, height);
    Frame::from_vec_clamped(width, height, data)
}

/// Pixel-centre aligned bilinear resize of one plane. Edge samples clamp.
pub(crate) fn resize_plane(src: &[f32], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f32> {
    if (w, h) == (nw, nh) {
        return src.to_vec();
    }
    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(nw, w);
    let ys = taps(nh, h);
    let mut out = Vec::with_capacity(nw * nh);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_out_of_range() {
        assert!(Frame::from_vec(2, 1, vec![0.0, 1.5]).is_err());
        assert!(Frame::from_vec(2, 1, vec![0.0]).is_err());
        assert!(Frame::from_vec(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let f = Frame::from_fn(5, 3, |x, y| (x * 7 + y * 3) as f32 / 40.0);
        assert_eq!(resize_frame(&f, 5, 3).unwrap(), f);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let f = Frame::constant(7, 5, 0.3);
        let r = resize_frame(&f, 13, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn resize_two_to_three() {
        let f = Frame::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_frame(&f, 3, 1).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_rejects_zero() {
        let f = Frame::constant(4, 4, 0.5);
        assert!(matches!(resize_frame(&f, 0, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn argmax_ties_go_to_background() {
        let p = ProbMask::uniform(3, 2, 3);
        assert!(p.argmax().data().iter().all(|&l| l == Label::Background));
    }

    #[test]
    fn sequence_rejects_mixed_sizes() {
        let frames = vec![Frame::constant(4, 4, 0.0), Frame::constant(4, 5, 0.0)];
        assert!(Sequence::new(frames, None, 0.1).is_err());
    }

    #[test]
    fn central_range_keeps_fraction() {
        assert_eq!(central_range(100, 0.8), (10, 90));
        assert_eq!(central_range(64, 1.0), (0, 64));
    }
}
