//! Flat grey-level morphology, thresholding and connected components.
//!
//! Min/max filters replicate edge pixels, so closing never darkens the
//! image border.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Frame, Raster};

/// Flat rectangular structuring element with odd side lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
}

impl StructuringElement {
    pub fn rect(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "structuring element {width}x{height} must have odd sides >= 1"
            )));
        }
        Ok(StructuringElement { width, height })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::rect(side, side)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Separable running extremum with edge replication.
fn rect_filter(frame: &Frame, se: StructuringElement, pick: fn(f32, f32) -> f32) -> Vec<f32> {
    let (w, h) = frame.dims();
    let (rx, ry) = (se.width / 2, se.height / 2);
    let src = frame.data();
    let mut rows = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(rx);
            let hi = (x + rx).min(w - 1);
            rows[y * w + x] = row[lo..=hi].iter().copied().reduce(pick).unwrap();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(ry);
        let hi = (y + ry).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).reduce(pick).unwrap();
        }
    }
    out
}

pub fn erode(frame: &Frame, se: StructuringElement) -> Frame {
    let data = rect_filter(frame, se, f32::min);
    Frame::from_vec(frame.width(), frame.height(), data).expect("min filter stays in range")
}

pub fn dilate(frame: &Frame, se: StructuringElement) -> Frame {
    let data = rect_filter(frame, se, f32::max);
    Frame::from_vec(frame.width(), frame.height(), data).expect("max filter stays in range")
}

pub fn close(frame: &Frame, se: StructuringElement) -> Frame {
    erode(&dilate(frame, se), se)
}

/// Closing minus the original: bright response on dark structures thinner
/// than the structuring element.
pub fn black_top_hat(frame: &Frame, se: StructuringElement) -> Frame {
    let closed = close(frame, se);
    let data = closed
        .data()
        .iter()
        .zip(frame.data())
        .map(|(&c, &f)| (c - f).max(0.0))
        .collect();
    Frame::from_vec(frame.width(), frame.height(), data).expect("top-hat stays in range")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f32),
}

#[derive(Clone, Debug)]
pub struct Thresholded {
    pub mask: BinaryMask,
    /// Intensity cut; foreground is strictly above it.
    pub threshold: f32,
    /// Set when Otsu found nothing to split (single-valued histogram).
    pub degenerate: bool,
}

const HIST_BINS: usize = 256;

fn hist_bin(v: f32) -> usize {
    ((v as f64 * 255.0 + 0.5).floor() as usize).min(HIST_BINS - 1)
}

/// Otsu's threshold on a 256-bin histogram. Returns the last background
/// bin, or `None` when the histogram has a single occupied bin.
///
/// Among equally good splits the lowest bin wins.
pub fn otsu_bin(frame: &Frame) -> Option<usize> {
    let mut hist = [0u64; HIST_BINS];
    for &v in frame.data() {
        hist[hist_bin(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = frame.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best: Option<(usize, f64)> = None;
    for (k, &count) in hist.iter().enumerate().take(HIST_BINS - 1) {
        w0 += count as f64;
        sum0 += k as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

pub fn threshold(frame: &Frame, method: ThresholdMethod) -> Result<Thresholded> {
    let (w, h) = frame.dims();
    match method {
        ThresholdMethod::Fixed(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!(
                    "fixed threshold {t} outside [0, 1]"
                )));
            }
            let mask = Raster::from_vec(w, h, frame.data().iter().map(|&v| v > t).collect())?;
            Ok(Thresholded {
                mask,
                threshold: t,
                degenerate: false,
            })
        }
        ThresholdMethod::Otsu => match otsu_bin(frame) {
            Some(k) => {
                let mask =
                    Raster::from_vec(w, h, frame.data().iter().map(|&v| hist_bin(v) > k).collect())?;
                Ok(Thresholded {
                    mask,
                    threshold: (k as f32 + 0.5) / 255.0,
                    degenerate: false,
                })
            }
            None => Ok(Thresholded {
                mask: Raster::filled(w, h, false),
                threshold: frame.max(),
                degenerate: true,
            }),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComponentStats {
    /// Label in the component map, starting at 1.
    pub label: u32,
    pub area: usize,
    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`.
    pub bbox: (usize, usize, usize, usize),
}

/// Labels foreground components in raster order of their first pixel.
/// Background is 0 in the returned map.
pub fn connected_components(
    mask: &BinaryMask,
    connectivity: Connectivity,
) -> (Raster<u32>, Vec<ComponentStats>) {
    let (w, h) = mask.dims();
    let mut labels = Raster::filled(w, h, 0u32);
    let mut stats = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels.data()[start] != 0 {
            continue;
        }
        let label = stats.len() as u32 + 1;
        let (sx, sy) = (start % w, start / w);
        let mut s = ComponentStats {
            label,
            area: 0,
            bbox: (sx, sy, sx, sy),
        };
        labels.data_mut()[start] = label;
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            s.area += 1;
            s.bbox = (s.bbox.0.min(x), s.bbox.1.min(y), s.bbox.2.max(x), s.bbox.3.max(y));
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if mask.get(nx, ny) && labels.get(nx, ny) == 0 {
                    labels.set(nx, ny, label);
                    queue.push_back((nx, ny));
                }
            }
        }
        stats.push(s);
    }
    (labels, stats)
}

/// Removes components with fewer than `min_area` pixels.
pub fn filter_small_components(
    mask: &BinaryMask,
    min_area: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let (labels, stats) = connected_components(mask, connectivity);
    labels.map(|l| l != 0 && stats[l as usize - 1].area >= min_area)
}

/// Default minimum component area: 50 px at 256×256, scaled by image area.
pub fn default_min_area(width: usize, height: usize) -> usize {
    (50.0 * (width * height) as f64 / (256.0 * 256.0)).round() as usize
}

/// Settings of the low-level background segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub se_size: usize,
    pub method: ThresholdMethod,
    /// `None` selects [`default_min_area`] for the frame size.
    pub min_area: Option<usize>,
    pub connectivity: Connectivity,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            se_size: 9,
            method: ThresholdMethod::Otsu,
            min_area: None,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Raw and component-filtered masks of one frame.
#[derive(Clone, Debug)]
pub struct BackgroundSegmentation {
    pub raw: BinaryMask,
    pub filtered: BinaryMask,
    pub degenerate: bool,
}

/// Black top-hat → threshold → small-component removal.
pub fn segment_background(frame: &Frame, cfg: &BackgroundConfig) -> Result<BackgroundSegmentation> {
    let se = StructuringElement::square(cfg.se_size)?;
    let response = black_top_hat(frame, se);
    let t = threshold(&response, cfg.method)?;
    let min_area = cfg
        .min_area
        .unwrap_or_else(|| default_min_area(frame.width(), frame.height()));
    let filtered = filter_small_components(&t.mask, min_area, cfg.connectivity);
    Ok(BackgroundSegmentation {
        raw: t.mask,
        filtered,
        degenerate: t.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se(n: usize) -> StructuringElement {
        StructuringElement::square(n).unwrap()
    }

    fn brute(frame: &Frame, n: usize, max: bool) -> Vec<f32> {
        let (w, h) = frame.dims();
        let r = (n / 2) as isize;
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = if max { f32::NEG_INFINITY } else { f32::INFINITY };
                for dy in -r..=r {
                    for dx in -r..=r {
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let v = frame.get(xx, yy);
                        acc = if max { acc.max(v) } else { acc.min(v) };
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn structuring_element_must_be_odd() {
        assert!(StructuringElement::rect(2, 3).is_err());
        assert!(StructuringElement::rect(0, 1).is_err());
        assert!(StructuringElement::rect(1, 9).is_ok());
    }

    #[test]
    fn constant_frames_are_fixed_points() {
        let f = Frame::constant(6, 5, 0.4);
        assert_eq!(erode(&f, se(3)), f);
        assert_eq!(dilate(&f, se(3)), f);
        assert!(black_top_hat(&f, se(9)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_erode_and_dilate() {
        let dark = Frame::from_fn(7, 7, |x, y| if (x, y) == (3, 3) { 0.0 } else { 1.0 });
        let e = erode(&dark, se(3));
        let bright = Frame::from_fn(7, 7, |x, y| if (x, y) == (3, 3) { 1.0 } else { 0.0 });
        let d = dilate(&bright, se(3));
        for y in 0..7 {
            for x in 0..7 {
                let inside = (x as usize).abs_diff(3) <= 1 && (y as usize).abs_diff(3) <= 1;
                assert_eq!(e.get(x, y), if inside { 0.0 } else { 1.0 });
                assert_eq!(d.get(x, y), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn unit_element_is_identity() {
        let f = Frame::from_fn(5, 4, |x, y| ((x * 3 + y * 5) % 7) as f32 / 7.0);
        assert_eq!(erode(&f, se(1)), f);
        assert_eq!(dilate(&f, se(1)), f);
    }

    #[test]
    fn top_hat_on_single_dark_pixel() {
        let f = Frame::from_fn(7, 7, |x, y| if (x, y) == (2, 4) { 0.0 } else { 1.0 });
        let th = black_top_hat(&f, se(3));
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(th.get(x, y), if (x, y) == (2, 4) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn top_hat_marks_thin_dark_line() {
        let f = Frame::from_fn(16, 16, |x, _| if x == 7 { 0.2 } else { 0.9 });
        let th = black_top_hat(&f, se(9));
        let closed = brute(&Frame::from_vec(16, 16, brute(&f, 9, true)).unwrap(), 9, false);
        for y in 0..16 {
            for x in 0..16 {
                let expected = closed[y * 16 + x] - f.get(x, y);
                assert!((th.get(x, y) - expected).abs() < 1e-6);
                if x == 7 {
                    assert!(th.get(x, y) > 0.5);
                }
            }
        }
    }

    #[test]
    fn filters_match_brute_force() {
        let f = Frame::from_fn(13, 11, |x, y| ((x * 31 + y * 17 + x * y) % 23) as f32 / 22.0);
        for n in [1, 3, 5, 9] {
            assert_eq!(erode(&f, se(n)).data(), &brute(&f, n, false)[..]);
            assert_eq!(dilate(&f, se(n)).data(), &brute(&f, n, true)[..]);
        }
    }

    #[test]
    fn fixed_threshold_checkerboard() {
        let f = Frame::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { 0.2 } else { 0.8 });
        let t = threshold(&f, ThresholdMethod::Fixed(0.5)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(t.mask.get(x, y), (x + y) % 2 == 1);
            }
        }
        assert!(threshold(&f, ThresholdMethod::Fixed(1.5)).is_err());
    }

    #[test]
    fn otsu_constant_is_degenerate() {
        let t = threshold(&Frame::constant(5, 5, 0.3), ThresholdMethod::Otsu).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.mask.count(), 0);
    }

    #[test]
    fn connectivity_on_diagonal_pair() {
        let m = Raster::from_fn(2, 2, |x, y| x == y);
        assert_eq!(connected_components(&m, Connectivity::Eight).1.len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).1.len(), 2);
        let empty = Raster::filled(3, 3, false);
        assert!(connected_components(&empty, Connectivity::Eight).1.is_empty());
    }

    #[test]
    fn raster_order_labels_and_bbox() {
        // second blob starts earlier in raster order than the first blob's tail
        let m = Raster::from_fn(6, 4, |x, y| (x == 0 && y <= 3) || (x == 4 && y == 1));
        let (map, stats) = connected_components(&m, Connectivity::Eight);
        assert_eq!(map.get(0, 0), 1);
        assert_eq!(map.get(4, 1), 2);
        assert_eq!(stats[0].bbox, (0, 0, 0, 3));
        assert_eq!(stats[0].area, 4);
        assert_eq!(stats[1].bbox, (4, 1, 4, 1));
    }

    #[test]
    fn min_area_scales_with_image() {
        assert_eq!(default_min_area(256, 256), 50);
        assert_eq!(default_min_area(512, 512), 200);
        assert_eq!(default_min_area(64, 64), 3);
    }
}
