//! A small fully differentiable convolutional tracker used as the attack
//! victim in tests and benchmarks.
//!
//! The model is deliberately primitive but structurally honest: a two-layer
//! linear CNN encodes the search frame, a second two-layer CNN encodes the
//! template patch cropped around the initialization mask, the masked mean
//! of the template features gives a template embedding, and per-pixel
//! object logits combine a correlation map against that embedding with a
//! learned per-feature projection:
//!
//! ```text
//! s = enc_s(frame)                    (H x W x F)
//! e = masked_mean(enc_t(patch))       (F)
//! logit[y, x] = w_corr * <s[y, x], e> + <w_feat, s[y, x]> + bias
//! ```
//!
//! Forward and reverse passes are hand-written; reverse mode reaches both
//! the input pixels (for attacks) and every weight (for training). The
//! convolution loops run over flat slices because the attack evaluates
//! them thousands of times per benchmark.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LogitObjective, TrackerAdapter, TrackerCapabilities};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::mask::{bbox_from_mask, BinaryMask, Frame, LogitMap};

/// 2D convolution with odd square kernels, zero padding, stride 1.
///
/// Weight layout is `(out_channel, ky, kx, in_channel)`; inputs and outputs
/// are `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    pub fn random(out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "kernel must be odd");
        let scale = 1.0 / ((k * k * in_c) as f64).sqrt();
        let weights =
            Array4::from_shape_fn((out_c, k, k, in_c), |_| rng.random_range(-scale..scale));
        ConvLayer {
            weights,
            bias: Array1::zeros(out_c),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().3
    }

    pub fn kernel(&self) -> usize {
        self.weights.dim().1
    }

    /// Same-size convolution of `input` (H x W x in_c).
    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (h, w, cin) = input.dim();
        debug_assert_eq!(cin, self.in_channels());
        let (cout, k, _, _) = self.weights.dim();
        let pad = k / 2;
        let xin = input.as_slice().expect("standard layout");
        let wts = self.weights.as_slice().expect("standard layout");
        let mut out = vec![0.0f64; h * w * cout];
        for y in 0..h {
            for x in 0..w {
                let obase = (y * w + x) * cout;
                for f in 0..cout {
                    let mut acc = self.bias[f];
                    let wf = f * k * k * cin;
                    for ky in 0..k {
                        let yy = y + ky;
                        if yy < pad || yy >= h + pad {
                            continue;
                        }
                        let yy = yy - pad;
                        for kx in 0..k {
                            let xx = x + kx;
                            if xx < pad || xx >= w + pad {
                                continue;
                            }
                            let xx = xx - pad;
                            let ibase = (yy * w + xx) * cin;
                            let wbase = wf + (ky * k + kx) * cin;
                            for c in 0..cin {
                                acc += wts[wbase + c] * xin[ibase + c];
                            }
                        }
                    }
                    out[obase + f] = acc;
                }
            }
        }
        Array3::from_shape_vec((h, w, cout), out).expect("shape arithmetic")
    }

    /// Gradient with respect to the input, given the gradient at the
    /// output. Mirrors `forward` as a scatter.
    pub fn backward_input(&self, dout: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
        let (cout, k, _, cin) = self.weights.dim();
        debug_assert_eq!(dout.dim(), (h, w, cout));
        let pad = k / 2;
        let dyo = dout.as_slice().expect("standard layout");
        let wts = self.weights.as_slice().expect("standard layout");
        let mut din = vec![0.0f64; h * w * cin];
        for y in 0..h {
            for x in 0..w {
                let obase = (y * w + x) * cout;
                for f in 0..cout {
                    let d = dyo[obase + f];
                    if d == 0.0 {
                        continue;
                    }
                    let wf = f * k * k * cin;
                    for ky in 0..k {
                        let yy = y + ky;
                        if yy < pad || yy >= h + pad {
                            continue;
                        }
                        let yy = yy - pad;
                        for kx in 0..k {
                            let xx = x + kx;
                            if xx < pad || xx >= w + pad {
                                continue;
                            }
                            let xx = xx - pad;
                            let ibase = (yy * w + xx) * cin;
                            let wbase = wf + (ky * k + kx) * cin;
                            for c in 0..cin {
                                din[ibase + c] += wts[wbase + c] * d;
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((h, w, cin), din).expect("shape arithmetic")
    }

    /// Gradients with respect to weights and bias.
    pub fn param_grads(
        &self,
        input: &Array3<f64>,
        dout: &Array3<f64>,
    ) -> (Array4<f64>, Array1<f64>) {
        let (h, w, cin) = input.dim();
        let (cout, k, _, _) = self.weights.dim();
        let pad = k / 2;
        let xin = input.as_slice().expect("standard layout");
        let dyo = dout.as_slice().expect("standard layout");
        let mut dw = vec![0.0f64; cout * k * k * cin];
        let mut db = vec![0.0f64; cout];
        for y in 0..h {
            for x in 0..w {
                let obase = (y * w + x) * cout;
                for f in 0..cout {
                    let d = dyo[obase + f];
                    if d == 0.0 {
                        continue;
                    }
                    db[f] += d;
                    let wf = f * k * k * cin;
                    for ky in 0..k {
                        let yy = y + ky;
                        if yy < pad || yy >= h + pad {
                            continue;
                        }
                        let yy = yy - pad;
                        for kx in 0..k {
                            let xx = x + kx;
                            if xx < pad || xx >= w + pad {
                                continue;
                            }
                            let xx = xx - pad;
                            let ibase = (yy * w + xx) * cin;
                            let wbase = wf + (ky * k + kx) * cin;
                            for c in 0..cin {
                                dw[wbase + c] += d * xin[ibase + c];
                            }
                        }
                    }
                }
            }
        }
        (
            Array4::from_shape_vec((cout, k, k, cin), dw).expect("shape arithmetic"),
            Array1::from_vec(db),
        )
    }
}

/// Two stacked convolution layers, deliberately without a saturating
/// nonlinearity between them: squashing activations let the net hide behind
/// vanishing input gradients, which turns any bounded gradient attack into a
/// no-op and defeats the point of a differentiable victim.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

/// Activations retained for the reverse pass.
pub(crate) struct EncoderCache {
    pub input: Array3<f64>,
    pub act1: Array3<f64>,
    pub act2: Array3<f64>,
}

/// Weight gradients of one encoder.
pub(crate) struct EncoderGrads {
    pub conv1_w: Array4<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array4<f64>,
    pub conv2_b: Array1<f64>,
}

impl Encoder {
    pub fn random(in_c: usize, features: usize, rng: &mut ChaCha8Rng) -> Self {
        Encoder {
            conv1: ConvLayer::random(features, in_c, 3, rng),
            conv2: ConvLayer::random(features, features, 3, rng),
        }
    }

    pub fn features(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let act1 = self.conv1.forward(input);
        self.conv2.forward(&act1)
    }

    pub(crate) fn forward_cached(&self, input: Array3<f64>) -> EncoderCache {
        let act1 = self.conv1.forward(&input);
        let act2 = self.conv2.forward(&act1);
        EncoderCache { input, act1, act2 }
    }

    pub(crate) fn backward_input(&self, cache: &EncoderCache, dact2: &Array3<f64>) -> Array3<f64> {
        let (h, w, _) = cache.input.dim();
        let dact1 = self.conv2.backward_input(dact2, h, w);
        self.conv1.backward_input(&dact1, h, w)
    }

    pub(crate) fn backward_params(
        &self,
        cache: &EncoderCache,
        dact2: &Array3<f64>,
    ) -> EncoderGrads {
        let (h, w, _) = cache.input.dim();
        let (conv2_w, conv2_b) = self.conv2.param_grads(&cache.act1, dact2);
        let dact1 = self.conv2.backward_input(dact2, h, w);
        let (conv1_w, conv1_b) = self.conv1.param_grads(&cache.input, &dact1);
        EncoderGrads {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
        }
    }
}

/// All learnable parameters of the toy tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrackerWeights {
    pub search: Encoder,
    pub template: Encoder,
    pub head_corr: f64,
    pub head_feat: Array1<f64>,
    pub head_bias: f64,
}

const WEIGHTS_MAGIC: &[u8; 8] = b"TOYTRK01";

impl ToyTrackerWeights {
    /// Random initialization; `features` is the encoder channel width.
    pub fn init(seed: u64, in_channels: usize, features: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let search = Encoder::random(in_channels, features, &mut rng);
        let template = Encoder::random(in_channels, features, &mut rng);
        let head_scale = 1.0 / (features as f64).sqrt();
        let head_feat = Array1::from_shape_fn(features, |_| {
            rng.random_range(-head_scale..head_scale)
        });
        ToyTrackerWeights {
            search,
            template,
            head_corr: 0.5,
            head_feat,
            head_bias: 0.0,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.search.in_channels()
    }

    pub fn features(&self) -> usize {
        self.search.features()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self
            .search
            .conv1
            .weights
            .iter()
            .chain(self.search.conv1.bias.iter())
            .chain(self.search.conv2.weights.iter())
            .chain(self.search.conv2.bias.iter())
            .chain(self.template.conv1.weights.iter())
            .chain(self.template.conv1.bias.iter())
            .chain(self.template.conv2.weights.iter())
            .chain(self.template.conv2.bias.iter())
            .chain(self.head_feat.iter())
            .chain(std::iter::once(&self.head_corr))
            .chain(std::iter::once(&self.head_bias))
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "ToyTrackerWeights",
            })
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(WEIGHTS_MAGIC)?;
        f.write_u32::<LittleEndian>(self.in_channels() as u32)?;
        f.write_u32::<LittleEndian>(self.features() as u32)?;
        for enc in [&self.search, &self.template] {
            write_f64s(&mut f, enc.conv1.weights.as_slice().expect("layout"))?;
            write_f64s(&mut f, enc.conv1.bias.as_slice().expect("layout"))?;
            write_f64s(&mut f, enc.conv2.weights.as_slice().expect("layout"))?;
            write_f64s(&mut f, enc.conv2.bias.as_slice().expect("layout"))?;
        }
        f.write_f64::<LittleEndian>(self.head_corr)?;
        write_f64s(&mut f, self.head_feat.as_slice().expect("layout"))?;
        f.write_f64::<LittleEndian>(self.head_bias)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::WeightIo(format!(
                "bad magic {magic:?} in {}",
                path.display()
            )));
        }
        let in_c = f.read_u32::<LittleEndian>()? as usize;
        let feats = f.read_u32::<LittleEndian>()? as usize;
        if in_c == 0 || feats == 0 {
            return Err(Error::WeightIo("zero channel count".into()));
        }
        let mut encoders = Vec::with_capacity(2);
        for _ in 0..2 {
            let c1w = read_f64s(&mut f, feats * 3 * 3 * in_c)?;
            let c1b = read_f64s(&mut f, feats)?;
            let c2w = read_f64s(&mut f, feats * 3 * 3 * feats)?;
            let c2b = read_f64s(&mut f, feats)?;
            encoders.push(Encoder {
                conv1: ConvLayer {
                    weights: Array4::from_shape_vec((feats, 3, 3, in_c), c1w)
                        .expect("sized read"),
                    bias: Array1::from_vec(c1b),
                },
                conv2: ConvLayer {
                    weights: Array4::from_shape_vec((feats, 3, 3, feats), c2w)
                        .expect("sized read"),
                    bias: Array1::from_vec(c2b),
                },
            });
        }
        let template = encoders.pop().expect("two encoders");
        let search = encoders.pop().expect("two encoders");
        let head_corr = f.read_f64::<LittleEndian>()?;
        let head_feat = Array1::from_vec(read_f64s(&mut f, feats)?);
        let head_bias = f.read_f64::<LittleEndian>()?;
        let mut trailing = [0u8; 1];
        if f.read(&mut trailing)? != 0 {
            return Err(Error::WeightIo("trailing bytes after weights".into()));
        }
        let w = ToyTrackerWeights {
            search,
            template,
            head_corr,
            head_feat,
            head_bias,
        };
        w.check_finite()?;
        Ok(w)
    }
}

fn write_f64s<W: Write>(f: &mut W, vals: &[f64]) -> Result<()> {
    f.write_u64::<LittleEndian>(vals.len() as u64)?;
    for &v in vals {
        f.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(f: &mut R, expect: usize) -> Result<Vec<f64>> {
    let n = f.read_u64::<LittleEndian>()? as usize;
    if n != expect {
        return Err(Error::WeightIo(format!(
            "tensor length {n} does not match geometry {expect}"
        )));
    }
    let mut out = vec![0.0f64; n];
    f.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Per-sequence state: the template embedding plus the frame geometry it
/// was initialized for.
#[derive(Debug, Clone)]
pub struct ToyState {
    embed: Array1<f64>,
    frame_dim: (usize, usize, usize),
}

impl ToyState {
    pub fn embedding(&self) -> &Array1<f64> {
        &self.embed
    }
}

/// The toy victim; immutable once constructed.
#[derive(Debug, Clone)]
pub struct ToyTracker {
    weights: ToyTrackerWeights,
}

/// Margin (pixels) added around the initialization box when cropping the
/// template; covers the receptive field of the two 3x3 layers.
pub(crate) const TEMPLATE_MARGIN: usize = 2;

/// Crops the template patch and its mask around the object box.
pub(crate) fn crop_template(
    frame: &Frame,
    mask: &BinaryMask,
    margin: usize,
) -> Result<(Array3<f64>, Array2<f64>)> {
    if (frame.height(), frame.width()) != mask.dim() {
        return Err(Error::ShapeMismatch {
            context: "crop_template",
            expected: vec![frame.height(), frame.width()],
            got: vec![mask.dim().0, mask.dim().1],
        });
    }
    let bbox = bbox_from_mask(mask).ok_or(Error::EmptyMask {
        context: "crop_template",
    })?;
    let y0 = bbox.row_min.saturating_sub(margin);
    let y1 = (bbox.row_max() + margin).min(frame.height() - 1);
    let x0 = bbox.col_min.saturating_sub(margin);
    let x1 = (bbox.col_max() + margin).min(frame.width() - 1);
    let ph = y1 - y0 + 1;
    let pw = x1 - x0 + 1;
    let patch = Array3::from_shape_fn((ph, pw, frame.channels()), |(y, x, c)| {
        frame.pixels()[(y0 + y, x0 + x, c)]
    });
    let patch_mask = Array2::from_shape_fn((ph, pw), |(y, x)| mask.value(y0 + y, x0 + x));
    Ok((patch, patch_mask))
}

/// Mean of `act` over pixels where `mask` is 1; errors on an empty mask.
pub(crate) fn masked_mean(act: &Array3<f64>, mask: &Array2<f64>) -> Result<Array1<f64>> {
    let (h, w, f) = act.dim();
    debug_assert_eq!((h, w), mask.dim());
    let mut sum = Array1::<f64>::zeros(f);
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask[(y, x)] == 1.0 {
                n += 1.0;
                for c in 0..f {
                    sum[c] += act[(y, x, c)];
                }
            }
        }
    }
    if n == 0.0 {
        return Err(Error::EmptyMask {
            context: "masked_mean",
        });
    }
    Ok(sum / n)
}

impl ToyTracker {
    pub fn new(weights: ToyTrackerWeights) -> Self {
        ToyTracker { weights }
    }

    pub fn weights(&self) -> &ToyTrackerWeights {
        &self.weights
    }

    fn check_frame(&self, state: &ToyState, frame: &Frame) -> Result<()> {
        if frame.dim() != state.frame_dim {
            return Err(Error::FrameGeometry {
                expected: vec![state.frame_dim.0, state.frame_dim.1, state.frame_dim.2],
                got: vec![frame.height(), frame.width(), frame.channels()],
            });
        }
        Ok(())
    }

    /// Head forward: logits from search features and the embedding.
    fn head_logits(&self, s2: &Array3<f64>, embed: &Array1<f64>) -> Array2<f64> {
        let (h, w, feats) = s2.dim();
        let mut logits = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut corr = 0.0;
                let mut proj = 0.0;
                for f in 0..feats {
                    let v = s2[(y, x, f)];
                    corr += v * embed[f];
                    proj += v * self.weights.head_feat[f];
                }
                logits[(y, x)] = self.weights.head_corr * corr + proj + self.weights.head_bias;
            }
        }
        logits
    }

    /// Gradient of the head into the search features.
    fn head_backward(&self, dlogits: &Array2<f64>, embed: &Array1<f64>) -> Array3<f64> {
        let (h, w) = dlogits.dim();
        let feats = embed.len();
        Array3::from_shape_fn((h, w, feats), |(y, x, f)| {
            dlogits[(y, x)] * (self.weights.head_corr * embed[f] + self.weights.head_feat[f])
        })
    }
}

impl TrackerAdapter for ToyTracker {
    type State = ToyState;

    fn capabilities(&self) -> TrackerCapabilities {
        TrackerCapabilities {
            predicts_logits: true,
            provides_input_gradient: true,
            restricts_perturbation: false,
        }
    }

    fn init(&self, frame: &Frame, mask: &BinaryMask) -> Result<ToyState> {
        if frame.channels() != self.weights.in_channels() {
            return Err(Error::FrameGeometry {
                expected: vec![frame.height(), frame.width(), self.weights.in_channels()],
                got: vec![frame.height(), frame.width(), frame.channels()],
            });
        }
        let (patch, patch_mask) = crop_template(frame, mask, TEMPLATE_MARGIN)?;
        let feats = self.weights.template.forward(&patch);
        let embed = masked_mean(&feats, &patch_mask)?;
        Ok(ToyState {
            embed,
            frame_dim: frame.dim(),
        })
    }

    fn predict_logits(&self, state: &ToyState, frame: &Frame) -> Result<LogitMap> {
        self.check_frame(state, frame)?;
        let s2 = self.weights.search.forward(frame.pixels());
        LogitMap::new(self.head_logits(&s2, &state.embed))
    }

    fn input_gradient(
        &self,
        state: &ToyState,
        frame: &Frame,
        objective: &dyn LogitObjective,
    ) -> Result<(LossBreakdown, Array3<f64>)> {
        self.check_frame(state, frame)?;
        let cache = self.weights.search.forward_cached(frame.pixels().clone());
        let logits = LogitMap::new(self.head_logits(&cache.act2, &state.embed))?;
        let (breakdown, dlogits) = objective.evaluate(&logits)?;
        let ds2 = self.head_backward(&dlogits, &state.embed);
        let grad = self.weights.search.backward_input(&cache, &ds2);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "input_gradient",
            });
        }
        Ok((breakdown, grad))
    }
}
