//! Projected gradient attacks against mask trackers.
//!
//! The attack perturbs one frame at a time inside an L-infinity ball of
//! radius epsilon around the clean frame, taking `iters` signed-gradient
//! steps of size alpha and re-projecting after every step. The objective
//! is evaluated against the tracker's own previous predicted mask, never
//! against dataset ground truth: at attack time the attacker only has the
//! victim's outputs.
//!
//! [`attack_sequence`] drives a whole sequence: the tracker is initialized
//! on the clean first frame, then every later frame is perturbed before
//! prediction and the (possibly destroyed) prediction becomes the pseudo
//! ground truth for the next frame.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{objective_with_grad, LossBreakdown, LossConfig, ObjectiveKind};
use crate::mask::{binarize, sign, BinaryMask, Frame, LogitMap};
use crate::tracker::{LogitObjective, TrackerAdapter};

/// Direction of the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSign {
    /// Maximize the objective (the standard attack direction).
    Ascend,
    /// Minimize it; useful for sanity checks and ablations.
    Descend,
}

/// Which objective drives the attack; `None` disables perturbation while
/// keeping the identical sequence-driving code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    TrackPgd,
    SegPgdObject,
    SegPgdBackground,
    BcePgd,
    None,
}

impl AttackKind {
    /// The loss kernel this attack maximizes, if any.
    pub fn objective(self) -> Option<ObjectiveKind> {
        match self {
            AttackKind::TrackPgd => Some(ObjectiveKind::TrackPgd),
            AttackKind::SegPgdObject => Some(ObjectiveKind::SegPgdObject),
            AttackKind::SegPgdBackground => Some(ObjectiveKind::SegPgdBackground),
            AttackKind::BcePgd => Some(ObjectiveKind::BcePgd),
            AttackKind::None => None,
        }
    }
}

/// Full attack parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget in pixel units (frames live in [0, 1]).
    pub epsilon: f64,
    /// Step size per iteration.
    pub alpha: f64,
    /// Gradient iterations per frame.
    pub iters: usize,
    pub step_sign: StepSign,
    pub loss: LossConfig,
    /// Reserved for attack variants that draw randomness; the PGD loop
    /// itself is deterministic but the seed is threaded through configs
    /// and records so runs stay reproducible end to end.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::TrackPgd,
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iters: 10,
            step_sign: StepSign::Ascend,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 || self.epsilon > 1.0 {
            return Err(Error::InvalidParam {
                name: "epsilon",
                reason: format!("must lie in [0, 1], got {}", self.epsilon),
            });
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidParam {
                name: "alpha",
                reason: format!("must be > 0, got {}", self.alpha),
            });
        }
        if self.iters == 0 {
            return Err(Error::InvalidParam {
                name: "iters",
                reason: "must be >= 1".into(),
            });
        }
        self.loss.validate()
    }

    /// Loss configuration with the annealing horizon synced to this
    /// attack's iteration count; `AttackConfig::iters` is authoritative.
    fn effective_loss(&self) -> LossConfig {
        LossConfig {
            total_iters: self.iters,
            ..self.loss.clone()
        }
    }
}

/// Projects `adv` onto the intersection of the epsilon ball around `orig`
/// and the valid pixel range `[0, 1]`.
///
/// The intersection is never empty because `orig` itself is a valid frame.
pub fn clip_eps(adv: &Array3<f64>, orig: &Frame, epsilon: f64) -> Result<Frame> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidParam {
            name: "epsilon",
            reason: format!("must be >= 0, got {epsilon}"),
        });
    }
    if adv.dim() != orig.dim() {
        return Err(Error::ShapeMismatch {
            context: "clip_eps",
            expected: vec![orig.height(), orig.width(), orig.channels()],
            got: adv.shape().to_vec(),
        });
    }
    let mut out = adv.clone();
    out.zip_mut_with(orig.pixels(), |a, &o| {
        *a = a.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    });
    Frame::new(out)
}

/// Adapter that evaluates one configured loss kernel on predicted logits.
struct AttackObjective<'a> {
    kind: ObjectiveKind,
    pseudo_gt: &'a BinaryMask,
    loss: &'a LossConfig,
    t: usize,
}

impl LogitObjective for AttackObjective<'_> {
    fn evaluate(&self, logits: &LogitMap) -> Result<(LossBreakdown, ndarray::Array2<f64>)> {
        objective_with_grad(self.kind, logits, self.pseudo_gt, self.loss, self.t)
    }
}

/// Outcome of attacking a single frame.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adv_frame: Frame,
    /// Objective breakdown at the start of each iteration, before that
    /// iteration's step; length equals the configured iteration count.
    pub per_iter: Vec<LossBreakdown>,
    /// L-infinity distance between the adversarial and clean frame.
    pub linf: f64,
    pub iterations: usize,
}

/// Runs the projected-gradient loop on one frame against `pseudo_gt`.
///
/// Errors if the config is invalid, the kind is `None`, or the tracker
/// cannot provide input gradients.
pub fn run_attack<T: TrackerAdapter>(
    tracker: &T,
    state: &T::State,
    frame: &Frame,
    pseudo_gt: &BinaryMask,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let kind = cfg.kind.objective().ok_or(Error::InvalidParam {
        name: "kind",
        reason: "`none` disables the attack; there is nothing to run".into(),
    })?;
    if !tracker.capabilities().provides_input_gradient {
        return Err(Error::InvalidParam {
            name: "tracker",
            reason: "victim does not expose input gradients".into(),
        });
    }
    let loss_cfg = cfg.effective_loss();
    let direction = match cfg.step_sign {
        StepSign::Ascend => 1.0,
        StepSign::Descend => -1.0,
    };
    let region = tracker.perturbable_region(state);
    if let Some(r) = &region {
        if r.dim() != (frame.height(), frame.width()) {
            return Err(Error::ShapeMismatch {
                context: "perturbable_region",
                expected: vec![frame.height(), frame.width()],
                got: vec![r.dim().0, r.dim().1],
            });
        }
    }

    let mut adv = frame.clone();
    let mut per_iter = Vec::with_capacity(cfg.iters);
    for t in 1..=cfg.iters {
        let objective = AttackObjective {
            kind,
            pseudo_gt,
            loss: &loss_cfg,
            t,
        };
        let (breakdown, grad) = tracker.input_gradient(state, &adv, &objective)?;
        per_iter.push(breakdown);

        let mut raw = adv.into_pixels();
        match &region {
            None => raw.zip_mut_with(&grad, |p, &g| {
                *p += direction * cfg.alpha * sign(g);
            }),
            Some(r) => {
                for ((y, x, c), p) in raw.indexed_iter_mut() {
                    if r.is_object(y, x) {
                        *p += direction * cfg.alpha * sign(grad[(y, x, c)]);
                    }
                }
            }
        }
        adv = clip_eps(&raw, frame, cfg.epsilon)?;
    }
    let linf = adv.linf_distance(frame)?;
    Ok(AttackResult {
        adv_frame: adv,
        per_iter,
        linf,
        iterations: cfg.iters,
    })
}

/// The composite attack; rejects configs whose kind is a baseline.
pub fn trackpgd_attack<T: TrackerAdapter>(
    tracker: &T,
    state: &T::State,
    frame: &Frame,
    pseudo_gt: &BinaryMask,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.kind != AttackKind::TrackPgd {
        return Err(Error::InvalidParam {
            name: "kind",
            reason: format!("trackpgd_attack requires kind track-pgd, got {:?}", cfg.kind),
        });
    }
    run_attack(tracker, state, frame, pseudo_gt, cfg)
}

/// Single-objective baselines; rejects the composite and `none`.
pub fn baseline_attack<T: TrackerAdapter>(
    tracker: &T,
    state: &T::State,
    frame: &Frame,
    pseudo_gt: &BinaryMask,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::SegPgdObject | AttackKind::SegPgdBackground | AttackKind::BcePgd => {
            run_attack(tracker, state, frame, pseudo_gt, cfg)
        }
        other => Err(Error::InvalidParam {
            name: "kind",
            reason: format!("baseline_attack got non-baseline kind {other:?}"),
        }),
    }
}

/// Attack statistics for one frame of a sequence run.
#[derive(Debug, Clone)]
pub struct FrameAttackStats {
    pub per_iter: Vec<LossBreakdown>,
    pub linf: f64,
    pub adv_min: f64,
    pub adv_max: f64,
}

/// Prediction (and attack telemetry) for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutcome {
    /// Index into the input frame slice; never 0, which is the init frame.
    pub frame_index: usize,
    pub logits: LogitMap,
    pub prediction: BinaryMask,
    pub attack: Option<FrameAttackStats>,
}

/// Runs a full sequence: init on the clean first frame, then per frame
/// attack (unless kind is `None`) and predict, feeding each prediction
/// forward as the next pseudo ground truth.
///
/// Returns one outcome per non-init frame, in order.
pub fn attack_sequence<T: TrackerAdapter>(
    tracker: &T,
    frames: &[Frame],
    init_mask: &BinaryMask,
    cfg: &AttackConfig,
) -> Result<Vec<FrameOutcome>> {
    if frames.is_empty() {
        return Err(Error::InvalidParam {
            name: "frames",
            reason: "sequence needs at least the init frame".into(),
        });
    }
    cfg.validate()?;
    let state = tracker.init(&frames[0], init_mask)?;
    let mut pseudo_gt = init_mask.clone();
    let mut outcomes = Vec::with_capacity(frames.len().saturating_sub(1));
    for (idx, frame) in frames.iter().enumerate().skip(1) {
        let (logits, attack) = if cfg.kind.objective().is_some() {
            let result = run_attack(tracker, &state, frame, &pseudo_gt, cfg)?;
            let logits = tracker.predict_logits(&state, &result.adv_frame)?;
            let stats = FrameAttackStats {
                per_iter: result.per_iter,
                linf: result.linf,
                adv_min: result.adv_frame.min_value(),
                adv_max: result.adv_frame.max_value(),
            };
            (logits, Some(stats))
        } else {
            (tracker.predict_logits(&state, frame)?, None)
        };
        let prediction = binarize(&logits, 0.0)?;
        pseudo_gt = prediction.clone();
        outcomes.push(FrameOutcome {
            frame_index: idx,
            logits,
            prediction,
            attack,
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ObjectiveKind;
    use crate::mask::LogitMap;
    use crate::tracker::{
        LogitObjective, ToyTracker, ToyTrackerWeights, TrackerCapabilities,
    };
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_frame(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, 3, |_| rng.random_range(0.0..1.0)).unwrap()
    }

    fn center_mask(h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| {
            (h / 2 - 2..h / 2 + 2).contains(&y) && (w / 2 - 2..w / 2 + 2).contains(&x)
        })
    }

    #[test]
    fn clip_eps_fixtures() {
        let orig = Frame::from_fn(1, 2, 1, |(_, x, _)| if x == 0 { 0.5 } else { 0.05 }).unwrap();
        let adv = Array3::from_shape_fn((1, 2, 1), |(_, x, _)| if x == 0 { 0.9 } else { -0.5 });
        let clipped = clip_eps(&adv, &orig, 0.1).unwrap();
        assert!((clipped.pixels()[(0, 0, 0)] - 0.6).abs() < 1e-15);
        // -0.5 clamps to 0.05 - 0.1 = -0.05, then to the valid range: 0.
        assert_eq!(clipped.pixels()[(0, 1, 0)], 0.0);

        assert!(clip_eps(&adv, &orig, f64::NAN).is_err());
        let wrong = Array3::zeros((2, 2, 1));
        assert!(clip_eps(&wrong, &orig, 0.1).is_err());
    }

    /// Stub victim with constant logits and a caller-chosen input gradient.
    struct StubTracker {
        grad_value: f64,
    }

    impl TrackerAdapter for StubTracker {
        type State = (usize, usize, usize);

        fn capabilities(&self) -> TrackerCapabilities {
            TrackerCapabilities {
                predicts_logits: true,
                provides_input_gradient: true,
                restricts_perturbation: false,
            }
        }

        fn init(&self, frame: &Frame, _mask: &BinaryMask) -> Result<Self::State> {
            Ok(frame.dim())
        }

        fn predict_logits(&self, state: &Self::State, _frame: &Frame) -> Result<LogitMap> {
            LogitMap::new(Array2::from_elem((state.0, state.1), -1.0))
        }

        fn input_gradient(
            &self,
            state: &Self::State,
            frame: &Frame,
            objective: &dyn LogitObjective,
        ) -> Result<(LossBreakdown, Array3<f64>)> {
            let logits = self.predict_logits(state, frame)?;
            let (breakdown, _) = objective.evaluate(&logits)?;
            Ok((
                breakdown,
                Array3::from_elem(frame.dim(), self.grad_value),
            ))
        }
    }

    #[test]
    fn zero_gradient_leaves_frame_untouched() {
        // sign(0) must be 0: a flat objective cannot move any pixel.
        let tracker = StubTracker { grad_value: 0.0 };
        let frame = small_frame(3, 8, 8);
        let mask = center_mask(8, 8);
        let state = tracker.init(&frame, &mask).unwrap();
        let cfg = AttackConfig::default();
        let result = run_attack(&tracker, &state, &frame, &mask, &cfg).unwrap();
        assert_eq!(result.adv_frame, frame);
        assert_eq!(result.linf, 0.0);
    }

    #[test]
    fn ascend_and_descend_move_opposite() {
        let tracker = StubTracker { grad_value: 1.0 };
        let frame = Frame::from_fn(4, 4, 3, |_| 0.5).unwrap();
        let mask = center_mask(4, 4);
        let state = tracker.init(&frame, &mask).unwrap();
        let mut cfg = AttackConfig {
            iters: 1,
            ..AttackConfig::default()
        };
        let up = run_attack(&tracker, &state, &frame, &mask, &cfg).unwrap();
        cfg.step_sign = StepSign::Descend;
        let down = run_attack(&tracker, &state, &frame, &mask, &cfg).unwrap();
        let a = cfg.alpha;
        for (u, d) in up
            .adv_frame
            .pixels()
            .iter()
            .zip(down.adv_frame.pixels().iter())
        {
            assert!((u - (0.5 + a)).abs() < 1e-15);
            assert!((d - (0.5 - a)).abs() < 1e-15);
        }
    }

    #[test]
    fn run_attack_rejects_none_kind_and_bad_config() {
        let tracker = StubTracker { grad_value: 1.0 };
        let frame = small_frame(5, 6, 6);
        let mask = center_mask(6, 6);
        let state = tracker.init(&frame, &mask).unwrap();
        let none = AttackConfig {
            kind: AttackKind::None,
            ..AttackConfig::default()
        };
        assert!(run_attack(&tracker, &state, &frame, &mask, &none).is_err());
        let bad = AttackConfig {
            epsilon: -0.5,
            ..AttackConfig::default()
        };
        assert!(run_attack(&tracker, &state, &frame, &mask, &bad).is_err());
        let bad = AttackConfig {
            alpha: 0.0,
            ..AttackConfig::default()
        };
        assert!(run_attack(&tracker, &state, &frame, &mask, &bad).is_err());
    }

    #[test]
    fn wrapper_kind_guards() {
        let tracker = StubTracker { grad_value: 1.0 };
        let frame = small_frame(6, 6, 6);
        let mask = center_mask(6, 6);
        let state = tracker.init(&frame, &mask).unwrap();
        let composite = AttackConfig::default();
        assert!(trackpgd_attack(&tracker, &state, &frame, &mask, &composite).is_ok());
        assert!(baseline_attack(&tracker, &state, &frame, &mask, &composite).is_err());
        let baseline = AttackConfig {
            kind: AttackKind::SegPgdObject,
            ..AttackConfig::default()
        };
        assert!(baseline_attack(&tracker, &state, &frame, &mask, &baseline).is_ok());
        assert!(trackpgd_attack(&tracker, &state, &frame, &mask, &baseline).is_err());
    }

    #[test]
    fn projection_invariant_on_real_victim_all_kinds() {
        let tracker = ToyTracker::new(ToyTrackerWeights::init(17, 3, 4));
        let frame0 = small_frame(70, 16, 16);
        let mask0 = center_mask(16, 16);
        let state = tracker.init(&frame0, &mask0).unwrap();
        let frame = small_frame(71, 16, 16);
        for kind in [
            AttackKind::TrackPgd,
            AttackKind::SegPgdObject,
            AttackKind::SegPgdBackground,
            AttackKind::BcePgd,
        ] {
            let cfg = AttackConfig {
                kind,
                iters: 4,
                ..AttackConfig::default()
            };
            let result = run_attack(&tracker, &state, &frame, &mask0, &cfg).unwrap();
            assert!(result.linf <= cfg.epsilon + 1e-12, "{kind:?}: {}", result.linf);
            assert!(result.adv_frame.min_value() >= 0.0);
            assert!(result.adv_frame.max_value() <= 1.0);
            assert_eq!(result.per_iter.len(), 4);
            assert_eq!(
                result.iterations, 4,
                "{kind:?} must run all configured iterations"
            );
        }
    }

    #[test]
    fn attack_objective_matches_kernel() {
        let logits = LogitMap::new(Array2::from_shape_fn((3, 3), |(y, x)| {
            0.7 * (y as f64) - 0.9 * (x as f64) + 0.2
        }))
        .unwrap();
        let gt = BinaryMask::from_fn(3, 3, |y, x| y == x);
        let loss = LossConfig::default();
        let objective = AttackObjective {
            kind: ObjectiveKind::TrackPgd,
            pseudo_gt: &gt,
            loss: &loss,
            t: 2,
        };
        let (via_adapter, grad_a) = objective.evaluate(&logits).unwrap();
        let (direct, grad_b) =
            objective_with_grad(ObjectiveKind::TrackPgd, &logits, &gt, &loss, 2).unwrap();
        assert_eq!(via_adapter, direct);
        assert_eq!(grad_a, grad_b);
    }

    #[test]
    fn sequence_with_none_kind_equals_plain_prediction_loop() {
        let tracker = ToyTracker::new(ToyTrackerWeights::init(23, 3, 4));
        let seqs = crate::synth::generate_toy_sequences(41, 1, 5, 16).unwrap();
        let seq = &seqs[0];
        let cfg = AttackConfig {
            kind: AttackKind::None,
            ..AttackConfig::default()
        };
        let outcomes = attack_sequence(&tracker, &seq.frames, &seq.masks[0], &cfg).unwrap();
        assert_eq!(outcomes.len(), 4);

        let state = tracker.init(&seq.frames[0], &seq.masks[0]).unwrap();
        for outcome in &outcomes {
            assert!(outcome.attack.is_none());
            let logits = tracker
                .predict_logits(&state, &seq.frames[outcome.frame_index])
                .unwrap();
            assert_eq!(&logits, &outcome.logits);
            assert_eq!(
                &binarize(&logits, 0.0).unwrap(),
                &outcome.prediction
            );
        }
    }

    #[test]
    fn sequence_rejects_empty_input() {
        let tracker = StubTracker { grad_value: 0.0 };
        let cfg = AttackConfig::default();
        assert!(attack_sequence(&tracker, &[], &center_mask(4, 4), &cfg).is_err());
    }

    #[test]
    fn sequence_attack_stats_are_recorded() {
        let tracker = ToyTracker::new(ToyTrackerWeights::init(29, 3, 4));
        let seqs = crate::synth::generate_toy_sequences(43, 1, 3, 16).unwrap();
        let seq = &seqs[0];
        let cfg = AttackConfig {
            iters: 3,
            ..AttackConfig::default()
        };
        let outcomes = attack_sequence(&tracker, &seq.frames, &seq.masks[0], &cfg).unwrap();
        for o in &outcomes {
            let stats = o.attack.as_ref().expect("attacked frame has stats");
            assert_eq!(stats.per_iter.len(), 3);
            assert!(stats.linf <= cfg.epsilon + 1e-12);
            assert!(stats.adv_min >= 0.0 && stats.adv_max <= 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn prop_projection_always_inside_ball(
            seed in 0u64..500,
            epsilon in 0.0f64..0.3,
            steps in 1usize..4,
            alpha in 0.001f64..0.2,
        ) {
            let tracker = StubTracker { grad_value: -0.7 };
            let frame = small_frame(seed, 6, 5);
            let mask = center_mask(6, 5);
            let state = tracker.init(&frame, &mask).unwrap();
            let cfg = AttackConfig {
                epsilon,
                alpha,
                iters: steps,
                ..AttackConfig::default()
            };
            let r = run_attack(&tracker, &state, &frame, &mask, &cfg).unwrap();
            prop_assert!(r.linf <= epsilon + 1e-12);
            prop_assert!(r.adv_frame.min_value() >= 0.0);
            prop_assert!(r.adv_frame.max_value() <= 1.0);
        }
    }
}
