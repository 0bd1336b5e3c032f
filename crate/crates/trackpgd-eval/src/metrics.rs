//! Segmentation and tracking metrics.
//!
//! Per frame: Jaccard index J (mask IoU), contour accuracy F (boundary
//! F-measure with a pixel tolerance), and bounding-box overlap. Per
//! sequence: reset-based failure counting with a re-initialization gap, and
//! the one-pass (unsupervised) average overlap.
//!
//! Directionality: J, F, and overlaps are in `[0, 1]`, higher is better.
//! `reset_robustness` reports failures normalized by sequence length, so
//! higher is worse; raw counts are reported alongside to avoid ambiguity.

use trackpgd_core::mask::{bbox_from_mask, boundary, mask_iou, BinaryMask};

use crate::error::{Error, Result};

/// Mask intersection-over-union. Both masks empty counts as perfect
/// agreement (1), matching the underlying IoU definition.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(mask_iou(pred, gt)?)
}

/// Boundary F-measure with Chebyshev tolerance `tol`.
///
/// Precision counts predicted boundary pixels within `tol` of the ground
/// truth boundary; recall the reverse; F = 2PR/(P+R). Both boundaries
/// empty means the masks agree on having no contour, so F = 1; exactly one
/// empty means total mismatch, F = 0.
pub fn contour_f(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Metric {
            reason: format!(
                "contour_f shape mismatch: pred {:?} vs gt {:?}",
                pred.dim(),
                gt.dim()
            ),
        });
    }
    let pred_edge = boundary(pred, 0);
    let gt_edge = boundary(gt, 0);
    let pred_n = pred_edge.area();
    let gt_n = gt_edge.area();
    if pred_n == 0 && gt_n == 0 {
        return Ok(1.0);
    }
    if pred_n == 0 || gt_n == 0 {
        return Ok(0.0);
    }
    let gt_reach = boundary(gt, tol);
    let pred_reach = boundary(pred, tol);
    let mut matched_pred = 0usize;
    let mut matched_gt = 0usize;
    let (h, w) = pred.dim();
    for y in 0..h {
        for x in 0..w {
            if pred_edge.is_object(y, x) && gt_reach.is_object(y, x) {
                matched_pred += 1;
            }
            if gt_edge.is_object(y, x) && pred_reach.is_object(y, x) {
                matched_gt += 1;
            }
        }
    }
    let precision = matched_pred as f64 / pred_n as f64;
    let recall = matched_gt as f64 / gt_n as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Bounding-box overlap between the tightest boxes around two masks.
///
/// Both masks empty: the tracker correctly reports "object gone", overlap
/// 1. Exactly one empty: no box to compare against, overlap 0. Otherwise,
/// box IoU.
pub fn bbox_overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Metric {
            reason: format!(
                "bbox_overlap shape mismatch: pred {:?} vs gt {:?}",
                pred.dim(),
                gt.dim()
            ),
        });
    }
    match (bbox_from_mask(pred), bbox_from_mask(gt)) {
        (None, None) => Ok(1.0),
        (Some(p), Some(g)) => Ok(p.iou(&g)),
        _ => Ok(0.0),
    }
}

/// How the reset protocol classified one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMark {
    /// Overlap was positive and the frame counted normally.
    Tracked,
    /// Overlap hit zero here; a failure was recorded.
    Failure,
    /// Frame fell inside the re-initialization gap after a failure and was
    /// excluded from failure counting.
    Skipped,
}

/// Classifies each frame of an ordered overlap stream under the reset
/// protocol: a failure is a frame whose overlap is exactly zero; after a
/// failure the next `reinit_gap` frames are skipped while the tracker
/// re-initializes; scanning then resumes.
pub fn reset_marks(overlaps: &[f64], reinit_gap: usize) -> Result<Vec<ResetMark>> {
    if overlaps.is_empty() {
        return Err(Error::Metric {
            reason: "reset protocol needs at least one frame".into(),
        });
    }
    for (i, &v) in overlaps.iter().enumerate() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Metric {
                reason: format!("overlap at frame {i} must be in [0, 1], got {v}"),
            });
        }
    }
    let mut marks = vec![ResetMark::Tracked; overlaps.len()];
    let mut i = 0;
    while i < overlaps.len() {
        if overlaps[i] == 0.0 {
            marks[i] = ResetMark::Failure;
            for j in i + 1..(i + 1 + reinit_gap).min(overlaps.len()) {
                marks[j] = ResetMark::Skipped;
            }
            i += reinit_gap + 1;
        } else {
            i += 1;
        }
    }
    Ok(marks)
}

/// Failure count and normalized robustness statistic over an ordered
/// overlap stream.
///
/// Returns `(failures, failures / frames)`. The normalized value is a
/// failure rate: higher means a less robust tracker.
pub fn reset_robustness(overlaps: &[f64], reinit_gap: usize) -> Result<(usize, f64)> {
    let marks = reset_marks(overlaps, reinit_gap)?;
    let failures = marks.iter().filter(|m| **m == ResetMark::Failure).count();
    Ok((failures, failures as f64 / overlaps.len() as f64))
}

/// Mean per-frame mask IoU of a one-pass run.
///
/// Every evaluated frame must carry ground truth; a `None` entry means the
/// sequence is only partially annotated and has no defined one-pass
/// overlap.
pub fn unsupervised_overlap(jaccards: &[Option<f64>]) -> Result<f64> {
    if jaccards.is_empty() {
        return Err(Error::Metric {
            reason: "unsupervised overlap needs at least one frame".into(),
        });
    }
    let mut acc = 0.0;
    for (i, j) in jaccards.iter().enumerate() {
        match j {
            Some(v) if v.is_finite() => acc += v,
            Some(v) => {
                return Err(Error::Metric {
                    reason: format!("non-finite overlap {v} at frame {i}"),
                })
            }
            None => {
                return Err(Error::Metric {
                    reason: format!("missing ground truth at frame {i}"),
                })
            }
        }
    }
    Ok(acc / jaccards.len() as f64)
}
