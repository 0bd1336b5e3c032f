//! Image, mask, and score containers plus the pixel-set operations the loss
//! and metric layers are built from.
//!
//! The containers validate their domain on construction and never again:
//! a [`Frame`] holds finite values in `[0, 1]`, a [`BinaryMask`] holds only
//! `{0, 1}`, a [`LogitMap`] holds finite reals, and a [`ProbMap`] holds
//! finite values in `[0, 1]`. Downstream code relies on those invariants
//! instead of re-checking.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign function with `sign(0) = 0`.
///
/// `f64::signum` maps `0.0` to `1.0`, which would turn a zero gradient into
/// a full-size perturbation step; gradient steps must leave zero-gradient
/// pixels untouched.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// An HxWxC image with every value finite and inside `[0, 1]`.
///
/// `C` is 1 (grayscale) or 3 (RGB). Axis order is `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f64>,
}

impl Frame {
    /// Validates and wraps raw pixel data.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue {
                context: "Frame::new",
                reason: format!("degenerate spatial dims {h}x{w}"),
            });
        }
        if c != 1 && c != 3 {
            return Err(Error::InvalidValue {
                context: "Frame::new",
                reason: format!("channel count {c} not in {{1, 3}}"),
            });
        }
        for &v in pixels.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "Frame::new",
                });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue {
                    context: "Frame::new",
                    reason: format!("pixel value {v} outside [0, 1]"),
                });
            }
        }
        Ok(Frame { pixels })
    }

    /// Builds a frame by evaluating `f(row, col, channel)`.
    pub fn from_fn<F>(h: usize, w: usize, c: usize, f: F) -> Result<Self>
    where
        F: FnMut((usize, usize, usize)) -> f64,
    {
        Frame::new(Array3::from_shape_fn((h, w, c), f))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    /// `(height, width, channels)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// Largest absolute per-value difference to `other`.
    pub fn linf_distance(&self, other: &Frame) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                context: "Frame::linf_distance",
                expected: vec![self.height(), self.width(), self.channels()],
                got: vec![other.height(), other.width(), other.channels()],
            });
        }
        let mut worst = 0.0f64;
        for (a, b) in self.pixels.iter().zip(other.pixels.iter()) {
            worst = worst.max((a - b).abs());
        }
        Ok(worst)
    }

    pub fn min_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// An HxW segmentation mask; 1 marks an object pixel, 0 background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    labels: Array2<u8>,
}

impl BinaryMask {
    /// Validates and wraps raw labels; every entry must be 0 or 1.
    pub fn new(labels: Array2<u8>) -> Result<Self> {
        let (h, w) = labels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue {
                context: "BinaryMask::new",
                reason: format!("degenerate dims {h}x{w}"),
            });
        }
        for &v in labels.iter() {
            if v > 1 {
                return Err(Error::InvalidValue {
                    context: "BinaryMask::new",
                    reason: format!("label {v} not in {{0, 1}}"),
                });
            }
        }
        Ok(BinaryMask { labels })
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn<F>(h: usize, w: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> bool,
    {
        BinaryMask {
            labels: Array2::from_shape_fn((h, w), |(y, x)| u8::from(f(y, x))),
        }
    }

    /// All-background mask.
    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask {
            labels: Array2::zeros((h, w)),
        }
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    #[inline]
    pub fn is_object(&self, y: usize, x: usize) -> bool {
        self.labels[(y, x)] == 1
    }

    /// Label as a float, for loss arithmetic.
    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f64 {
        f64::from(self.labels[(y, x)])
    }

    /// Number of object pixels.
    pub fn area(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    /// A mask with object and background swapped.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            labels: self.labels.mapv(|v| 1 - v),
        }
    }
}

/// Dense per-pixel scores on the real line; finite everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    scores: Array2<f64>,
}

impl LogitMap {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        let (h, w) = scores.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue {
                context: "LogitMap::new",
                reason: format!("degenerate dims {h}x{w}"),
            });
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "LogitMap::new",
            });
        }
        Ok(LogitMap { scores })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.scores[(y, x)]
    }

    /// Element-wise sigmoid of the scores.
    pub fn probabilities(&self) -> ProbMap {
        ProbMap {
            probs: self.scores.mapv(sigmoid),
        }
    }
}

/// Dense per-pixel probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    probs: Array2<f64>,
}

impl ProbMap {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (h, w) = probs.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue {
                context: "ProbMap::new",
                reason: format!("degenerate dims {h}x{w}"),
            });
        }
        for &v in probs.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue {
                    context: "ProbMap::new",
                    reason: format!("probability {v} outside [0, 1]"),
                });
            }
        }
        Ok(ProbMap { probs })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.probs.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.probs
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.probs[(y, x)]
    }
}

/// Axis-aligned box, inclusive pixel extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub col_min: usize,
    /// Rows covered; always >= 1.
    pub height: usize,
    /// Columns covered; always >= 1.
    pub width: usize,
}

impl BoundingBox {
    pub fn row_max(&self) -> usize {
        self.row_min + self.height - 1
    }

    pub fn col_max(&self) -> usize {
        self.col_min + self.width - 1
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.row_min && y <= self.row_max() && x >= self.col_min && x <= self.col_max()
    }

    /// Intersection-over-union of two boxes, in `[0, 1]`.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let top = self.row_min.max(other.row_min);
        let left = self.col_min.max(other.col_min);
        let bottom = self.row_max().min(other.row_max());
        let right = self.col_max().min(other.col_max());
        if bottom < top || right < left {
            return 0.0;
        }
        let inter = ((bottom - top + 1) * (right - left + 1)) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        inter / union
    }
}

/// Thresholds logits into a binary mask: strictly positive margin over
/// `threshold` marks an object pixel, ties fall to background.
///
/// The tie rule keeps the complement relation coherent: a pixel exactly at
/// the threshold belongs to the background class, never to both.
pub fn binarize(logits: &LogitMap, threshold: f64) -> Result<BinaryMask> {
    if !threshold.is_finite() {
        return Err(Error::InvalidParam {
            name: "threshold",
            reason: format!("must be finite, got {threshold}"),
        });
    }
    Ok(BinaryMask {
        labels: logits.scores().mapv(|z| u8::from(z > threshold)),
    })
}

/// Splits all pixel coordinates into (correctly classified, wrongly
/// classified) with respect to `gt`. The two sets partition the grid.
///
/// Coordinates are emitted in row-major order.
pub fn split_pixels(
    pred: &BinaryMask,
    gt: &BinaryMask,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch {
            context: "split_pixels",
            expected: vec![gt.dim().0, gt.dim().1],
            got: vec![pred.dim().0, pred.dim().1],
        });
    }
    let (h, w) = pred.dim();
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if pred.labels[(y, x)] == gt.labels[(y, x)] {
                correct.push((y, x));
            } else {
                wrong.push((y, x));
            }
        }
    }
    Ok((correct, wrong))
}

/// Mask intersection-over-union in `[0, 1]`.
///
/// Two empty masks agree perfectly, so `IoU(empty, empty) = 1`.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context: "mask_iou",
            expected: vec![a.dim().0, a.dim().1],
            got: vec![b.dim().0, b.dim().1],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&va, &vb) in a.labels.iter().zip(b.labels.iter()) {
        if va == 1 && vb == 1 {
            inter += 1;
        }
        if va == 1 || vb == 1 {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Tightest axis-aligned box around the object pixels, or `None` when the
/// mask is empty.
pub fn bbox_from_mask(mask: &BinaryMask) -> Option<BoundingBox> {
    let (h, w) = mask.dim();
    let mut row_min = h;
    let mut row_max = 0usize;
    let mut col_min = w;
    let mut col_max = 0usize;
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if mask.is_object(y, x) {
                any = true;
                row_min = row_min.min(y);
                row_max = row_max.max(y);
                col_min = col_min.min(x);
                col_max = col_max.max(x);
            }
        }
    }
    if !any {
        return None;
    }
    Some(BoundingBox {
        row_min,
        col_min,
        height: row_max - row_min + 1,
        width: col_max - col_min + 1,
    })
}

/// Boundary pixels of `mask`, thickened by Chebyshev dilation of `radius`.
///
/// A pixel is a boundary pixel when it is an object pixel with at least one
/// of its 8 neighbors either background or outside the grid. `radius = 0`
/// returns the raw boundary.
pub fn boundary(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = mask.dim();
    let mut edge = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if !mask.is_object(y, x) {
                continue;
            }
            let mut exposed = false;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        exposed = true;
                        break 'scan;
                    }
                    if !mask.is_object(ny as usize, nx as usize) {
                        exposed = true;
                        break 'scan;
                    }
                }
            }
            if exposed {
                edge[(y, x)] = 1;
            }
        }
    }
    if radius == 0 {
        return BinaryMask { labels: edge };
    }
    let r = radius as i64;
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if edge[(y, x)] == 0 {
                continue;
            }
            let y0 = (y as i64 - r).max(0) as usize;
            let y1 = ((y as i64 + r) as usize).min(h - 1);
            let x0 = (x as i64 - r).max(0) as usize;
            let x1 = ((x as i64 + r) as usize).min(w - 1);
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    out[(ny, nx)] = 1;
                }
            }
        }
    }
    BinaryMask { labels: out }
}
