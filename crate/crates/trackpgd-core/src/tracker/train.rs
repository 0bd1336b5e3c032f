//! Supervised training of the toy tracker on synthetic sequences.
//!
//! The victim is trained like an ordinary segmentation model: mean binary
//! cross entropy plus soft dice against the ground-truth mask, optimized
//! with Adam. Nothing here shares machinery with the attack objectives;
//! the victim must be a credible independent model, not something shaped
//! to make the attack look good.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::toy::{crop_template, masked_mean, Encoder, EncoderGrads, TEMPLATE_MARGIN};
use super::{ToyTracker, ToyTrackerWeights, TrackerAdapter};
use crate::error::{Error, Result};
use crate::mask::{binarize, mask_iou, BinaryMask};
use crate::synth::SyntheticSequence;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Encoder channel width.
    pub features: usize,
    /// Stop early once the running train IoU clears this value.
    pub target_iou: f64,
    /// Soft BCE targets s/2 and 1 - s/2 instead of 0 and 1. Caps the
    /// optimal logit magnitude so predictions keep usable gradients.
    pub label_smoothing: f64,
    /// Decoupled L2 decay applied to weight tensors (not biases).
    pub weight_decay: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            seed: 7,
            // An upper bound, not a duration: early stopping at target_iou
            // ends large-corpus runs long before this. The headroom exists
            // for small corpora, where an epoch carries few optimizer
            // steps and convergence is step-limited.
            epochs: 120,
            learning_rate: 5e-3,
            batch_size: 8,
            features: 8,
            target_iou: 0.85,
            label_smoothing: 0.1,
            weight_decay: 1e-4,
        }
    }
}

/// What training achieved.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Mean IoU over the training sequences after the last epoch.
    pub train_iou: f64,
}

/// Gradient buffers mirroring every weight tensor.
struct ParamGrads {
    search: EncoderGrads,
    template: EncoderGrads,
    head_corr: f64,
    head_feat: Array1<f64>,
    head_bias: f64,
}

fn zero_encoder_grads(enc: &Encoder) -> EncoderGrads {
    EncoderGrads {
        conv1_w: Array4::zeros(enc.conv1.weights.dim()),
        conv1_b: Array1::zeros(enc.conv1.bias.len()),
        conv2_w: Array4::zeros(enc.conv2.weights.dim()),
        conv2_b: Array1::zeros(enc.conv2.bias.len()),
    }
}

impl ParamGrads {
    fn zeros_like(w: &ToyTrackerWeights) -> Self {
        ParamGrads {
            search: zero_encoder_grads(&w.search),
            template: zero_encoder_grads(&w.template),
            head_corr: 0.0,
            head_feat: Array1::zeros(w.head_feat.len()),
            head_bias: 0.0,
        }
    }

    fn accumulate(&mut self, other: &ParamGrads) {
        for (dst, src) in [
            (&mut self.search, &other.search),
            (&mut self.template, &other.template),
        ] {
            dst.conv1_w += &src.conv1_w;
            dst.conv1_b += &src.conv1_b;
            dst.conv2_w += &src.conv2_w;
            dst.conv2_b += &src.conv2_b;
        }
        self.head_corr += other.head_corr;
        self.head_feat += &other.head_feat;
        self.head_bias += other.head_bias;
    }

    fn scale(&mut self, s: f64) {
        for enc in [&mut self.search, &mut self.template] {
            enc.conv1_w *= s;
            enc.conv1_b *= s;
            enc.conv2_w *= s;
            enc.conv2_b *= s;
        }
        self.head_corr *= s;
        self.head_feat *= s;
        self.head_bias *= s;
    }
}

/// Adam with bias correction; state matches the weight layout.
struct Adam {
    m: ParamGrads,
    v: ParamGrads,
    step: usize,
    lr: f64,
    weight_decay: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_update_slice(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr_t: f64,
    decay: f64,
) {
    for i in 0..w.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        // Decoupled decay: shrink the weight directly, outside the moments.
        w[i] -= lr_t * (m[i] / (v[i].sqrt() + ADAM_EPS) + decay * w[i]);
    }
}

fn adam_update_scalar(w: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr_t: f64, decay: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    *w -= lr_t * (*m / (v.sqrt() + ADAM_EPS) + decay * *w);
}

impl Adam {
    fn new(w: &ToyTrackerWeights, lr: f64, weight_decay: f64) -> Self {
        Adam {
            m: ParamGrads::zeros_like(w),
            v: ParamGrads::zeros_like(w),
            step: 0,
            lr,
            weight_decay,
        }
    }

    fn step(&mut self, w: &mut ToyTrackerWeights, g: &ParamGrads) {
        self.step += 1;
        let t = self.step as f64;
        let wd = self.weight_decay;
        // Fold both bias corrections into the step size.
        let lr_t = self.lr * (1.0 - ADAM_BETA2.powf(t)).sqrt() / (1.0 - ADAM_BETA1.powf(t));

        let pairs: [(&mut Encoder, &EncoderGrads, &mut EncoderGrads, &mut EncoderGrads); 2] = [
            (&mut w.search, &g.search, &mut self.m.search, &mut self.v.search),
            (
                &mut w.template,
                &g.template,
                &mut self.m.template,
                &mut self.v.template,
            ),
        ];
        for (enc, ge, me, ve) in pairs {
            adam_update_slice(
                enc.conv1.weights.as_slice_mut().expect("layout"),
                ge.conv1_w.as_slice().expect("layout"),
                me.conv1_w.as_slice_mut().expect("layout"),
                ve.conv1_w.as_slice_mut().expect("layout"),
                lr_t,
                wd,
            );
            adam_update_slice(
                enc.conv1.bias.as_slice_mut().expect("layout"),
                ge.conv1_b.as_slice().expect("layout"),
                me.conv1_b.as_slice_mut().expect("layout"),
                ve.conv1_b.as_slice_mut().expect("layout"),
                lr_t,
                0.0,
            );
            adam_update_slice(
                enc.conv2.weights.as_slice_mut().expect("layout"),
                ge.conv2_w.as_slice().expect("layout"),
                me.conv2_w.as_slice_mut().expect("layout"),
                ve.conv2_w.as_slice_mut().expect("layout"),
                lr_t,
                wd,
            );
            adam_update_slice(
                enc.conv2.bias.as_slice_mut().expect("layout"),
                ge.conv2_b.as_slice().expect("layout"),
                me.conv2_b.as_slice_mut().expect("layout"),
                ve.conv2_b.as_slice_mut().expect("layout"),
                lr_t,
                0.0,
            );
        }
        adam_update_slice(
            w.head_feat.as_slice_mut().expect("layout"),
            g.head_feat.as_slice().expect("layout"),
            self.m.head_feat.as_slice_mut().expect("layout"),
            self.v.head_feat.as_slice_mut().expect("layout"),
            lr_t,
            wd,
        );
        adam_update_scalar(
            &mut w.head_corr,
            g.head_corr,
            &mut self.m.head_corr,
            &mut self.v.head_corr,
            lr_t,
            wd,
        );
        adam_update_scalar(
            &mut w.head_bias,
            g.head_bias,
            &mut self.m.head_bias,
            &mut self.v.head_bias,
            lr_t,
            0.0,
        );
    }
}

/// Class-balanced label-smoothed BCE plus soft dice against the ground
/// truth, with the gradient at the logits. This is the victim's own
/// objective, unrelated to any attack loss. Balancing weights each class
/// inversely to its pixel count, otherwise the dominant background trains
/// to extreme confidence while object logits hug the decision boundary.
fn training_loss(logits: &Array2<f64>, gt: &BinaryMask, smoothing: f64) -> (f64, Array2<f64>) {
    let (h, w) = logits.dim();
    let n = (h * w) as f64;
    let smooth = 1.0;

    let n_obj: f64 = gt
        .labels()
        .iter()
        .map(|&v| v as f64)
        .sum::<f64>()
        .max(1.0);
    let n_bg = (n - n_obj).max(1.0);
    // Normalized so the weights sum to n over the frame.
    let w_obj = n / (2.0 * n_obj);
    let w_bg = n / (2.0 * n_bg);

    let mut bce = 0.0;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    let mut probs = Array2::<f64>::zeros((h, w));
    for ((y, x), &z) in logits.indexed_iter() {
        let g = gt.value(y, x);
        let gs = g * (1.0 - smoothing) + 0.5 * smoothing;
        let cw = if g == 1.0 { w_obj } else { w_bg };
        let p = crate::mask::sigmoid(z);
        probs[(y, x)] = p;
        bce += cw * (z.max(0.0) - z * gs + (-z.abs()).exp().ln_1p());
        inter += p * g;
        psum += p;
        gsum += g;
    }
    let num = 2.0 * inter + smooth;
    let den = psum + gsum + smooth;
    let dice = 1.0 - num / den;
    let loss = bce / n + dice;

    let grad = Array2::from_shape_fn((h, w), |(y, x)| {
        let g = gt.value(y, x);
        let gs = g * (1.0 - smoothing) + 0.5 * smoothing;
        let cw = if g == 1.0 { w_obj } else { w_bg };
        let p = probs[(y, x)];
        let dbce = cw * (p - gs) / n;
        let ddice = -(2.0 * g * den - num) / (den * den) * p * (1.0 - p);
        dbce + ddice
    });
    (loss, grad)
}

/// One training sample: a fixed template plus one target frame.
struct Sample {
    seq: usize,
    frame: usize,
}

/// Forward and backward for one sample; returns loss and parameter grads.
fn sample_grads(
    w: &ToyTrackerWeights,
    template: &Array3<f64>,
    template_mask: &Array2<f64>,
    frame: &Array3<f64>,
    gt: &BinaryMask,
    smoothing: f64,
) -> Result<(f64, ParamGrads)> {
    let tcache = w.template.forward_cached(template.clone());
    let embed = masked_mean(&tcache.act2, template_mask)?;
    let scache = w.search.forward_cached(frame.clone());
    let (h, wd, feats) = scache.act2.dim();

    let mut logits = Array2::<f64>::zeros((h, wd));
    for y in 0..h {
        for x in 0..wd {
            let mut corr = 0.0;
            let mut proj = 0.0;
            for f in 0..feats {
                let v = scache.act2[(y, x, f)];
                corr += v * embed[f];
                proj += v * w.head_feat[f];
            }
            logits[(y, x)] = w.head_corr * corr + proj + w.head_bias;
        }
    }

    let (loss, dlogits) = training_loss(&logits, gt, smoothing);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "training_loss",
        });
    }

    // Head gradients.
    let mut dhead_corr = 0.0;
    let mut dhead_feat = Array1::<f64>::zeros(feats);
    let mut dhead_bias = 0.0;
    let mut ds2 = Array3::<f64>::zeros((h, wd, feats));
    for y in 0..h {
        for x in 0..wd {
            let d = dlogits[(y, x)];
            dhead_bias += d;
            let mut corr = 0.0;
            for f in 0..feats {
                let v = scache.act2[(y, x, f)];
                corr += v * embed[f];
                dhead_feat[f] += d * v;
                ds2[(y, x, f)] = d * (w.head_corr * embed[f] + w.head_feat[f]);
            }
            dhead_corr += d * corr;
        }
    }
    // dembed[f] = head_corr * sum_yx d * s2 = head_corr * dhead_feat[f].
    let dembed = dhead_feat.mapv(|v| v * w.head_corr);

    let search = w.search.backward_params(&scache, &ds2);

    // Through the masked mean pooling into the template branch.
    let npix: f64 = template_mask.iter().sum();
    let (th, tw, _) = tcache.act2.dim();
    let mut dtact2 = Array3::<f64>::zeros((th, tw, feats));
    for y in 0..th {
        for x in 0..tw {
            if template_mask[(y, x)] == 1.0 {
                for f in 0..feats {
                    dtact2[(y, x, f)] = dembed[f] / npix;
                }
            }
        }
    }
    let template_grads = w.template.backward_params(&tcache, &dtact2);

    Ok((
        loss,
        ParamGrads {
            search,
            template: template_grads,
            head_corr: dhead_corr,
            head_feat: dhead_feat,
            head_bias: dhead_bias,
        },
    ))
}

/// Mean clean-tracking IoU of `weights` over `seqs` (template from frame
/// 0, no feedback of predictions into state).
fn mean_iou(weights: &ToyTrackerWeights, seqs: &[SyntheticSequence]) -> Result<f64> {
    let tracker = ToyTracker::new(weights.clone());
    let mut acc = 0.0;
    let mut n = 0usize;
    for seq in seqs {
        let state = tracker.init(&seq.frames[0], &seq.masks[0])?;
        for (frame, gt) in seq.frames.iter().zip(seq.masks.iter()).skip(1) {
            let logits = tracker.predict_logits(&state, frame)?;
            let pred = binarize(&logits, 0.0)?;
            acc += mask_iou(&pred, gt)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParam {
            name: "dataset",
            reason: "need at least one sequence with 2+ frames to measure IoU".into(),
        });
    }
    Ok(acc / n as f64)
}

/// Trains a fresh toy tracker on `dataset`.
///
/// Deterministic in `settings.seed`. Fails if the loss goes non-finite or
/// the dataset is unusable.
pub fn train_toy(
    dataset: &[SyntheticSequence],
    settings: &TrainSettings,
) -> Result<(ToyTrackerWeights, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidParam {
            name: "dataset",
            reason: "no training sequences".into(),
        });
    }
    if settings.epochs == 0 || settings.batch_size == 0 {
        return Err(Error::InvalidParam {
            name: "epochs/batch_size",
            reason: "must be >= 1".into(),
        });
    }
    if !settings.learning_rate.is_finite() || settings.learning_rate <= 0.0 {
        return Err(Error::InvalidParam {
            name: "learning_rate",
            reason: format!("must be > 0, got {}", settings.learning_rate),
        });
    }
    if !(0.0..1.0).contains(&settings.label_smoothing) {
        return Err(Error::InvalidParam {
            name: "label_smoothing",
            reason: format!("must be in [0, 1), got {}", settings.label_smoothing),
        });
    }
    if !settings.weight_decay.is_finite() || settings.weight_decay < 0.0 {
        return Err(Error::InvalidParam {
            name: "weight_decay",
            reason: format!("must be >= 0, got {}", settings.weight_decay),
        });
    }

    let in_channels = dataset[0].frames[0].channels();
    // Precompute per-sequence templates once; they do not change during
    // training.
    let templates: Vec<(Array3<f64>, Array2<f64>)> = dataset
        .iter()
        .map(|seq| crop_template(&seq.frames[0], &seq.masks[0], TEMPLATE_MARGIN))
        .collect::<Result<_>>()?;

    let mut samples = Vec::new();
    for (si, seq) in dataset.iter().enumerate() {
        for fi in 0..seq.frames.len() {
            samples.push(Sample { seq: si, frame: fi });
        }
    }

    let mut weights = ToyTrackerWeights::init(settings.seed, in_channels, settings.features);
    let mut adam = Adam::new(&weights, settings.learning_rate, settings.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x7241_1A5E_ED00_0001);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let mut epochs_run = 0;
    let mut final_loss = f64::NAN;
    let mut train_iou = 0.0;
    for _epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let mut batch = ParamGrads::zeros_like(&weights);
            for &si in chunk {
                let s = &samples[si];
                let seq = &dataset[s.seq];
                let (tpl, tpl_mask) = &templates[s.seq];
                let (loss, grads) = sample_grads(
                    &weights,
                    tpl,
                    tpl_mask,
                    seq.frames[s.frame].pixels(),
                    &seq.masks[s.frame],
                    settings.label_smoothing,
                )?;
                epoch_loss += loss;
                batch.accumulate(&grads);
            }
            batch.scale(1.0 / chunk.len() as f64);
            adam.step(&mut weights, &batch);
        }
        epochs_run += 1;
        final_loss = epoch_loss / samples.len() as f64;
        if !final_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: epochs_run,
                reason: format!("mean loss {final_loss}"),
            });
        }
        weights.check_finite().map_err(|_| Error::TrainingDiverged {
            epoch: epochs_run,
            reason: "non-finite weights".into(),
        })?;

        train_iou = mean_iou(&weights, dataset)?;
        if train_iou >= settings.target_iou {
            break;
        }
    }

    Ok((
        weights,
        TrainReport {
            epochs_run,
            final_loss,
            train_iou,
        },
    ))
}
