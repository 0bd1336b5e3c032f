//! Adversarial segmentation losses with analytic logit-space gradients.
//!
//! The attack objective stacks four pieces:
//!
//! 1. a weighted per-pixel cross entropy that splits the image into
//!    correctly and wrongly classified pixels and weights them `1 - lam`
//!    versus `lam` ([`segpgd_loss`]), with `lam` annealed over the attack
//!    iterations by [`lambda_schedule`];
//! 2. the difference of that loss against the pseudo ground truth and
//!    against its complement ([`delta_loss`]), which rises as the predicted
//!    mask simultaneously leaves the object and covers the background;
//! 3. a focal reweighting of the per-pixel difference map that concentrates
//!    the budget on pixels the tracker is unsure about
//!    ([`focal_delta_loss`]);
//! 4. a soft dice overlap term that directly pushes the predicted
//!    probability mass off the object ([`dice_loss`]).
//!
//! [`trackpgd_loss`] composes the pieces into the full objective and
//! [`objective_with_grad`] evaluates any supported objective together with
//! its exact gradient in one fused pass. The component functions and the
//! fused kernel are implemented separately on purpose; tests hold the two
//! routes together.
//!
//! Pixel classification everywhere uses the binarization rule of
//! [`crate::mask::binarize`] at threshold 0 (ties to background). The
//! classification weights are treated as constants when differentiating:
//! they are piecewise constant in the logits, so the gradient is exact
//! almost everywhere.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{sigmoid, BinaryMask, LogitMap, ProbMap};

/// Coefficients of the composite objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the focal difference term.
    pub lambda1: f64,
    /// Weight of the dice term.
    pub lambda2: f64,
    /// Focal exponent; 0 disables focal reweighting exactly.
    pub gamma: f64,
    /// Focal scale; with `gamma = 0` the focal term is `alpha_t` times the
    /// plain difference loss.
    pub alpha_t: f64,
    /// Total attack iterations the annealing schedule runs over.
    pub total_iters: usize,
    /// Additive smoothing of the dice ratio; keeps it defined on empty
    /// masks.
    pub dice_smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: 2.0,
            alpha_t: 0.25,
            total_iters: 10,
            dice_smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma", self.gamma),
            ("alpha_t", self.alpha_t),
            ("dice_smooth", self.dice_smooth),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParam {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidParam {
                name: "lambda1/lambda2",
                reason: "term weights must be non-negative".into(),
            });
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(Error::InvalidParam {
                name: "lambda1/lambda2",
                reason: "at least one term weight must be positive".into(),
            });
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParam {
                name: "gamma",
                reason: format!("must be >= 0, got {}", self.gamma),
            });
        }
        if self.alpha_t <= 0.0 {
            return Err(Error::InvalidParam {
                name: "alpha_t",
                reason: format!("must be > 0, got {}", self.alpha_t),
            });
        }
        if self.total_iters == 0 {
            return Err(Error::InvalidParam {
                name: "total_iters",
                reason: "must be >= 1".into(),
            });
        }
        if self.dice_smooth <= 0.0 {
            return Err(Error::InvalidParam {
                name: "dice_smooth",
                reason: format!("must be > 0, got {}", self.dice_smooth),
            });
        }
        Ok(())
    }
}

/// Every term of one objective evaluation.
///
/// `total` is the value the attack ascends. For the composite and the
/// single-sided variants it always satisfies
/// `total = lambda1 * focal + lambda2 * dice`. For the plain cross-entropy
/// control there is no focal or dice term; `total` and `delta` carry the
/// mean cross entropy and `focal`/`dice` are zero.
///
/// `segpgd_pos_term` and `segpgd_neg_term` are diagnostics of the current
/// prediction against the pseudo ground truth (the correctly and wrongly
/// classified halves of the weighted cross entropy); they are reported for
/// every objective kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub focal: f64,
    pub dice: f64,
    /// Spatial mean of the unweighted core map: the difference map for the
    /// composite, the single-sided cross-entropy map for the variants.
    pub delta: f64,
    pub segpgd_pos_term: f64,
    pub segpgd_neg_term: f64,
}

impl LossBreakdown {
    /// Breakdown carrying only a raw scalar; used by probe objectives.
    pub fn scalar(total: f64) -> Self {
        LossBreakdown {
            total,
            focal: 0.0,
            dice: 0.0,
            delta: 0.0,
            segpgd_pos_term: 0.0,
            segpgd_neg_term: 0.0,
        }
    }
}

/// The two halves of the weighted cross entropy plus their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegPgdTerms {
    /// Contribution of correctly classified pixels, weighted `1 - lam`.
    pub pos_term: f64,
    /// Contribution of wrongly classified pixels, weighted `lam`.
    pub neg_term: f64,
    pub total: f64,
}

/// Objective variants the fused kernel can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Focal difference loss plus dice: the full composite.
    TrackPgd,
    /// Object side only: focal-weighted cross entropy against the pseudo
    /// ground truth, plus dice.
    SegPgdObject,
    /// Background side only: focal-weighted negated cross entropy against
    /// the complement mask, plus dice.
    SegPgdBackground,
    /// Plain mean binary cross entropy against the pseudo ground truth;
    /// control without weighting, focal, or dice.
    BcePgd,
}

/// Annealing weight for attack iteration `t` (1-based) out of
/// `total_iters`: `(t - 1) / (2 * total_iters)`.
///
/// Starts at 0 (all weight on correctly classified pixels) and grows toward
/// but never reaches 1/2.
pub fn lambda_schedule(t: usize, total_iters: usize) -> Result<f64> {
    if total_iters == 0 {
        return Err(Error::InvalidParam {
            name: "total_iters",
            reason: "must be >= 1".into(),
        });
    }
    if t < 1 || t > total_iters {
        return Err(Error::InvalidParam {
            name: "t",
            reason: format!("iteration {t} outside 1..={total_iters}"),
        });
    }
    Ok((t - 1) as f64 / (2 * total_iters) as f64)
}

/// Binary cross entropy from a logit, computed in the overflow-free form
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
fn check_lam(lam: f64) -> Result<()> {
    if !lam.is_finite() || !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidParam {
            name: "lam",
            reason: format!("must lie in [0, 1], got {lam}"),
        });
    }
    Ok(())
}

fn check_shapes(context: &'static str, logits: &LogitMap, gt: &BinaryMask) -> Result<()> {
    if logits.dim() != gt.dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: vec![gt.dim().0, gt.dim().1],
            got: vec![logits.dim().0, logits.dim().1],
        });
    }
    Ok(())
}

/// Classification weight of one pixel: `1 - lam` when the thresholded
/// prediction matches `g`, `lam` otherwise.
#[inline]
fn class_weight(z: f64, g: f64, lam: f64) -> f64 {
    let pred = if z > 0.0 { 1.0 } else { 0.0 };
    if pred == g {
        1.0 - lam
    } else {
        lam
    }
}

/// Weighted segmentation cross entropy against `gt`.
///
/// Correctly classified pixels contribute with weight `1 - lam`, wrongly
/// classified ones with weight `lam`; both sums are normalized by the pixel
/// count. Every per-pixel contribution is non-negative for `lam` in
/// `[0, 1]`.
pub fn segpgd_loss(logits: &LogitMap, gt: &BinaryMask, lam: f64) -> Result<SegPgdTerms> {
    check_shapes("segpgd_loss", logits, gt)?;
    check_lam(lam)?;
    let (h, w) = logits.dim();
    let n = (h * w) as f64;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for ((y, x), &z) in logits.scores().indexed_iter() {
        let g = gt.value(y, x);
        let correct = (z > 0.0) == (g == 1.0);
        let term = class_weight(z, g, lam) * bce_with_logits(z, g);
        if correct {
            pos += term;
        } else {
            neg += term;
        }
    }
    Ok(SegPgdTerms {
        pos_term: pos / n,
        neg_term: neg / n,
        total: pos / n + neg / n,
    })
}

/// Per-pixel difference map underlying [`delta_loss`]:
/// `w_G bce(z, G) - w_{1-G} bce(z, 1 - G)`.
///
/// The complement weight is `1 - w_G`: a pixel classified correctly against
/// `G` is by definition classified wrongly against `1 - G`.
fn delta_map(logits: &LogitMap, gt: &BinaryMask, lam: f64) -> Array2<f64> {
    Array2::from_shape_fn(logits.dim(), |(y, x)| {
        let z = logits.get(y, x);
        let g = gt.value(y, x);
        let wg = class_weight(z, g, lam);
        wg * bce_with_logits(z, g) - (1.0 - wg) * bce_with_logits(z, 1.0 - g)
    })
}

/// Difference loss: weighted cross entropy against `gt` minus weighted
/// cross entropy against its complement, as a spatial mean.
///
/// Antisymmetric in the ground truth: swapping `gt` for its complement
/// flips the sign exactly.
pub fn delta_loss(logits: &LogitMap, gt: &BinaryMask, lam: f64) -> Result<f64> {
    check_shapes("delta_loss", logits, gt)?;
    check_lam(lam)?;
    let (h, w) = logits.dim();
    Ok(delta_map(logits, gt, lam).sum() / (h * w) as f64)
}

/// Focal confidence weight of one pixel: `alpha_t * (1 - p_t)^gamma` with
/// `p_t = G p + (1 - G)(1 - p)` the probability assigned to the true class.
///
/// `gamma = 0` returns exactly `alpha_t` so the reweighting can be switched
/// off without floating-point drift.
#[inline]
fn focal_weight(p: f64, g: f64, gamma: f64, alpha_t: f64) -> f64 {
    if gamma == 0.0 {
        return alpha_t;
    }
    let p_t = g * p + (1.0 - g) * (1.0 - p);
    let u = 1.0 - p_t;
    alpha_t * u.powf(gamma)
}

/// Focal-reweighted difference loss: spatial mean of the per-pixel
/// difference map scaled by `alpha_t (1 - p_t)^gamma`.
///
/// With `gamma = 0` and `alpha_t = 1` this equals [`delta_loss`] exactly.
pub fn focal_delta_loss(
    logits: &LogitMap,
    gt: &BinaryMask,
    cfg: &LossConfig,
    lam: f64,
) -> Result<f64> {
    check_shapes("focal_delta_loss", logits, gt)?;
    check_lam(lam)?;
    cfg.validate()?;
    let (h, w) = logits.dim();
    let map = delta_map(logits, gt, lam);
    let mut acc = 0.0;
    for ((y, x), &d) in map.indexed_iter() {
        let p = sigmoid(logits.get(y, x));
        acc += focal_weight(p, gt.value(y, x), cfg.gamma, cfg.alpha_t) * d;
    }
    Ok(acc / (h * w) as f64)
}

/// Soft dice loss `1 - (2 sum(P G) + s) / (sum P + sum G + s)`.
///
/// Zero means perfect overlap; the smoothing `s > 0` makes the empty/empty
/// case evaluate to 0 as well. Rising dice means the predicted probability
/// mass is leaving the object.
pub fn dice_loss(probs: &ProbMap, gt: &BinaryMask, smooth: f64) -> Result<f64> {
    if probs.dim() != gt.dim() {
        return Err(Error::ShapeMismatch {
            context: "dice_loss",
            expected: vec![gt.dim().0, gt.dim().1],
            got: vec![probs.dim().0, probs.dim().1],
        });
    }
    if !smooth.is_finite() || smooth <= 0.0 {
        return Err(Error::InvalidParam {
            name: "smooth",
            reason: format!("must be > 0, got {smooth}"),
        });
    }
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for ((y, x), &p) in probs.values().indexed_iter() {
        let g = gt.value(y, x);
        inter += p * g;
        psum += p;
        gsum += g;
    }
    Ok(1.0 - (2.0 * inter + smooth) / (psum + gsum + smooth))
}

/// Full composite objective at attack iteration `t` (1-based):
/// `lambda1 * focal_delta + lambda2 * dice`, with the annealing weight
/// taken from [`lambda_schedule`].
///
/// Composes the component functions; the fused kernel in
/// [`objective_with_grad`] recomputes the same quantities independently.
pub fn trackpgd_loss(
    logits: &LogitMap,
    gt: &BinaryMask,
    cfg: &LossConfig,
    t: usize,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let lam = lambda_schedule(t, cfg.total_iters)?;
    let terms = segpgd_loss(logits, gt, lam)?;
    let delta = delta_loss(logits, gt, lam)?;
    let focal = focal_delta_loss(logits, gt, cfg, lam)?;
    let dice = dice_loss(&logits.probabilities(), gt, cfg.dice_smooth)?;
    Ok(LossBreakdown {
        total: cfg.lambda1 * focal + cfg.lambda2 * dice,
        focal,
        dice,
        delta,
        segpgd_pos_term: terms.pos_term,
        segpgd_neg_term: terms.neg_term,
    })
}

/// Evaluates one objective and its exact gradient with respect to every
/// logit in a single fused pass.
///
/// The returned gradient has the same shape as `logits`. All four kinds
/// share the diagnostics in the breakdown; see [`LossBreakdown`] for the
/// field semantics per kind.
pub fn objective_with_grad(
    kind: ObjectiveKind,
    logits: &LogitMap,
    gt: &BinaryMask,
    cfg: &LossConfig,
    t: usize,
) -> Result<(LossBreakdown, Array2<f64>)> {
    check_shapes("objective_with_grad", logits, gt)?;
    cfg.validate()?;
    let lam = lambda_schedule(t, cfg.total_iters)?;
    let (h, w) = logits.dim();
    let n = (h * w) as f64;

    if kind == ObjectiveKind::BcePgd {
        let mut acc = 0.0;
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut grad = Array2::<f64>::zeros((h, w));
        for ((y, x), &z) in logits.scores().indexed_iter() {
            let g = gt.value(y, x);
            acc += bce_with_logits(z, g);
            grad[(y, x)] = (sigmoid(z) - g) / n;
            let term = class_weight(z, g, lam) * bce_with_logits(z, g);
            if (z > 0.0) == (g == 1.0) {
                pos += term;
            } else {
                neg += term;
            }
        }
        let mean = acc / n;
        return Ok((
            LossBreakdown {
                total: mean,
                focal: 0.0,
                dice: 0.0,
                delta: mean,
                segpgd_pos_term: pos / n,
                segpgd_neg_term: neg / n,
            },
            grad,
        ));
    }

    // Dice needs its global sums before any per-pixel gradient exists, so
    // the kernel runs two passes over the grid.
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    let mut probs = Array2::<f64>::zeros((h, w));
    for ((y, x), &z) in logits.scores().indexed_iter() {
        let p = sigmoid(z);
        probs[(y, x)] = p;
        let g = gt.value(y, x);
        inter += p * g;
        psum += p;
        gsum += g;
    }
    let s = cfg.dice_smooth;
    let num = 2.0 * inter + s;
    let den = psum + gsum + s;
    let dice = 1.0 - num / den;

    let mut focal_acc = 0.0;
    let mut core_acc = 0.0;
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut grad = Array2::<f64>::zeros((h, w));
    for ((y, x), &z) in logits.scores().indexed_iter() {
        let g = gt.value(y, x);
        let p = probs[(y, x)];
        let wg = class_weight(z, g, lam);
        let bce_g = bce_with_logits(z, g);
        let bce_c = bce_with_logits(z, 1.0 - g);

        let correct = (z > 0.0) == (g == 1.0);
        let diag = wg * bce_g;
        if correct {
            pos += diag;
        } else {
            neg += diag;
        }

        // Core map and its derivative for the chosen kind. The complement
        // side always carries weight 1 - wg.
        let (core, dcore) = match kind {
            ObjectiveKind::TrackPgd => (
                wg * bce_g - (1.0 - wg) * bce_c,
                wg * (p - g) - (1.0 - wg) * (p - (1.0 - g)),
            ),
            ObjectiveKind::SegPgdObject => (wg * bce_g, wg * (p - g)),
            ObjectiveKind::SegPgdBackground => {
                (-(1.0 - wg) * bce_c, -(1.0 - wg) * (p - (1.0 - g)))
            }
            ObjectiveKind::BcePgd => unreachable!("handled above"),
        };
        core_acc += core;

        // Focal weight and its derivative. p_t is the probability of the
        // true class; u = 1 - p_t shrinks as confidence grows.
        let p_t = g * p + (1.0 - g) * (1.0 - p);
        let u = 1.0 - p_t;
        let sig_prime = p * (1.0 - p);
        let (wf, dwf) = if cfg.gamma == 0.0 {
            (cfg.alpha_t, 0.0)
        } else if u == 0.0 {
            // Fully saturated pixel: the focal weight underflows to zero.
            // Freeze it here so u^(gamma - 1) cannot produce inf for
            // gamma < 1.
            (0.0, 0.0)
        } else {
            let du_dz = -(2.0 * g - 1.0) * sig_prime;
            (
                cfg.alpha_t * u.powf(cfg.gamma),
                cfg.alpha_t * cfg.gamma * u.powf(cfg.gamma - 1.0) * du_dz,
            )
        };
        focal_acc += wf * core;

        let dfocal = (wf * dcore + dwf * core) / n;
        let ddice_dp = -(2.0 * g * den - num) / (den * den);
        let ddice = ddice_dp * sig_prime;
        grad[(y, x)] = cfg.lambda1 * dfocal + cfg.lambda2 * ddice;
    }

    let focal = focal_acc / n;
    Ok((
        LossBreakdown {
            total: cfg.lambda1 * focal + cfg.lambda2 * dice,
            focal,
            dice,
            delta: core_acc / n,
            segpgd_pos_term: pos / n,
            segpgd_neg_term: neg / n,
        },
        grad,
    ))
}
