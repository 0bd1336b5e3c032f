//! Run configuration: a single TOML document validated before anything
//! executes.
//!
//! ```toml
//! [dataset.synthetic]        # or: [dataset] path = "data/toy"
//! seed = 1001
//! count = 20
//! length = 4
//! size = 32
//!
//! [tracker]
//! weights = "weights.bin"    # omit when [train] is present
//!
//! [train]                    # optional: train a fresh tracker first
//! seed = 7
//! epochs = 30
//!
//! [attack]
//! kind = "trackpgd"          # trackpgd|segpgd-obj|segpgd-bg|bce-pgd|none
//! epsilon = 0.0313725490
//! alpha = 0.0078431373
//! iters = 10
//! step-sign = "ascend"
//!
//! [attack.loss]
//! lambda1 = 1.0
//! lambda2 = 1.0
//! gamma = 2.0
//! alpha-t = 0.25
//! dice-smooth = 1.0
//!
//! [eval]
//! contour-tol = 1
//! reinit-gap = 5
//!
//! [output]
//! dir = "out"
//! save-masks = true
//!
//! [sweep]                    # only read by the sweep entry point
//! lambda1 = [10.0, 1.0, 0.1]
//! lambda2 = [1.0]
//! ablation = true
//! ```
//!
//! Unknown keys anywhere are rejected, so typos fail fast instead of
//! silently running defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use trackpgd_core::attack::{AttackConfig, AttackKind, StepSign};
use trackpgd_core::losses::LossConfig;
use trackpgd_core::tracker::TrainSettings;

use crate::error::{Error, Result};

/// CLI and config-file spelling of the attack variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackKindName {
    #[serde(rename = "trackpgd")]
    TrackPgd,
    #[serde(rename = "segpgd-obj")]
    SegPgdObj,
    #[serde(rename = "segpgd-bg")]
    SegPgdBg,
    #[serde(rename = "bce-pgd")]
    BcePgd,
    #[serde(rename = "none")]
    None,
}

impl AttackKindName {
    pub fn to_core(self) -> AttackKind {
        match self {
            AttackKindName::TrackPgd => AttackKind::TrackPgd,
            AttackKindName::SegPgdObj => AttackKind::SegPgdObject,
            AttackKindName::SegPgdBg => AttackKind::SegPgdBackground,
            AttackKindName::BcePgd => AttackKind::BcePgd,
            AttackKindName::None => AttackKind::None,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "trackpgd" => Ok(AttackKindName::TrackPgd),
            "segpgd-obj" => Ok(AttackKindName::SegPgdObj),
            "segpgd-bg" => Ok(AttackKindName::SegPgdBg),
            "bce-pgd" => Ok(AttackKindName::BcePgd),
            "none" => Ok(AttackKindName::None),
            other => Err(Error::config(format!(
                "unknown attack kind `{other}` (expected trackpgd|segpgd-obj|segpgd-bg|bce-pgd|none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub count: usize,
    pub length: usize,
    pub size: usize,
}

/// Exactly one of `path` (load from disk) or `synthetic` (generate).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Weights file to load; omit when a `[train]` section trains one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

/// Mirrors the trainer settings; every field optional with the trainer's
/// own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_smoothing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
}

impl TrainConfig {
    pub fn to_settings(&self) -> TrainSettings {
        let d = TrainSettings::default();
        TrainSettings {
            seed: self.seed.unwrap_or(d.seed),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            features: self.features.unwrap_or(d.features),
            target_iou: self.target_iou.unwrap_or(d.target_iou),
            label_smoothing: self.label_smoothing.unwrap_or(d.label_smoothing),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub alpha_t: f64,
    pub dice_smooth: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            gamma: d.gamma,
            alpha_t: d.alpha_t,
            dice_smooth: d.dice_smooth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackSection {
    pub kind: AttackKindName,
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    pub step_sign: StepSignName,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSignName {
    #[serde(rename = "ascend")]
    Ascend,
    #[serde(rename = "descend")]
    Descend,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackConfig::default();
        AttackSection {
            kind: AttackKindName::TrackPgd,
            epsilon: d.epsilon,
            alpha: d.alpha,
            iters: d.iters,
            step_sign: StepSignName::Ascend,
            seed: d.seed,
            loss: LossSection::default(),
        }
    }
}

impl AttackSection {
    pub fn to_core(&self) -> AttackConfig {
        AttackConfig {
            kind: self.kind.to_core(),
            epsilon: self.epsilon,
            alpha: self.alpha,
            iters: self.iters,
            step_sign: match self.step_sign {
                StepSignName::Ascend => StepSign::Ascend,
                StepSignName::Descend => StepSign::Descend,
            },
            loss: LossConfig {
                lambda1: self.loss.lambda1,
                lambda2: self.loss.lambda2,
                gamma: self.loss.gamma,
                alpha_t: self.loss.alpha_t,
                total_iters: self.iters,
                dice_smooth: self.loss.dice_smooth,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    /// Chebyshev tolerance of the contour F matching, in pixels.
    pub contour_tol: usize,
    /// Frames skipped after a failure before the reset scan resumes.
    pub reinit_gap: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            contour_tol: 1,
            reinit_gap: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Save predicted masks (and clean-run masks for attacked runs) as
    /// PNGs; plotting needs them.
    pub save_masks: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            save_masks: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepSection {
    /// Values for the focal-difference coefficient; each runs with the
    /// dice coefficient at 0.
    #[serde(default)]
    pub lambda1: Vec<f64>,
    /// Values for the dice coefficient; each runs with the focal
    /// coefficient at 0.
    #[serde(default)]
    pub lambda2: Vec<f64>,
    /// Also run the attack-variant ablation trio.
    #[serde(default)]
    pub ablation: bool,
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn from_str(body: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(body).map_err(|e| Error::config(format!("parse failure: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&body)
    }

    /// Schema-level consistency checks, run before anything executes.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "[dataset] must set exactly one of `path` or `synthetic`, got both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "[dataset] must set one of `path` or `synthetic`",
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.dataset.synthetic {
            if s.count == 0 || s.length < 2 || s.size < 8 {
                return Err(Error::config(format!(
                    "[dataset.synthetic] needs count >= 1, length >= 2, size >= 8, got count {} length {} size {}",
                    s.count, s.length, s.size
                )));
            }
        }
        self.attack
            .to_core()
            .validate()
            .map_err(|e| Error::config(format!("[attack] invalid: {e}")))?;
        if self.eval.reinit_gap == 0 {
            return Err(Error::config("[eval] reinit-gap must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            for (name, vals) in [("lambda1", &sweep.lambda1), ("lambda2", &sweep.lambda2)] {
                for v in vals {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(Error::config(format!(
                            "[sweep] {name} values must be finite and >= 0, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether a tracker can be constructed: weights to load or a train
    /// section. Commands that run a tracker call this.
    pub fn require_tracker_source(&self) -> Result<()> {
        if self.tracker.weights.is_none() && self.train.is_none() {
            return Err(Error::config(
                "need [tracker] weights = \"...\" or a [train] section",
            ));
        }
        Ok(())
    }

    /// Config snapshot embedded into reports.
    pub fn to_toml_value(&self) -> Result<toml::Value> {
        toml::Value::try_from(self).map_err(|e| Error::config(format!("snapshot failure: {e}")))
    }
}
