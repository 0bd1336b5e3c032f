//! Victim tracker interface and the built-in differentiable toy victim.
//!
//! The attack only needs three things from a tracker: initialize on a frame
//! plus mask, predict a dense logit map for a new frame, and differentiate
//! a scalar objective on those logits back to the input pixels. Anything
//! that can do all three can be attacked through [`TrackerAdapter`];
//! trackers that cannot provide input gradients advertise that through
//! [`TrackerCapabilities`] so callers fail fast instead of mid-sequence.

mod toy;
mod train;

pub use toy::{ConvLayer, Encoder, ToyState, ToyTracker, ToyTrackerWeights};
pub use train::{train_toy, TrainReport, TrainSettings};

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::losses::LossBreakdown;
use crate::mask::{BinaryMask, Frame, LogitMap};

/// What a tracker implementation can do.
///
/// `predict_logits` support is mandatory; input gradients are what make the
/// white-box attack possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerCapabilities {
    pub predicts_logits: bool,
    pub provides_input_gradient: bool,
    /// Whether the tracker restricts perturbation to a sub-region (for
    /// example a search crop). `None` from
    /// [`TrackerAdapter::perturbable_region`] means the whole frame.
    pub restricts_perturbation: bool,
}

/// A scalar objective over a logit map, with its gradient at the logits.
///
/// Implementations return the full term breakdown so attack loops can log
/// every component without re-evaluating.
pub trait LogitObjective {
    fn evaluate(&self, logits: &LogitMap) -> Result<(LossBreakdown, Array2<f64>)>;
}

/// A mask-predicting tracker the attack can drive.
///
/// `State` carries everything derived from the initialization frame
/// (template features, geometry); the adapter itself stays immutable so one
/// tracker instance can serve many sequences.
pub trait TrackerAdapter {
    type State;

    fn capabilities(&self) -> TrackerCapabilities;

    /// Consumes the first frame and its ground-truth mask.
    ///
    /// Fails when the mask is empty or the geometry is unusable.
    fn init(&self, frame: &Frame, mask: &BinaryMask) -> Result<Self::State>;

    /// Dense per-pixel object logits for one frame.
    fn predict_logits(&self, state: &Self::State, frame: &Frame) -> Result<LogitMap>;

    /// Evaluates `objective` on the predicted logits and pulls its gradient
    /// back to the input pixels.
    ///
    /// Returns the objective breakdown together with a gradient array of
    /// the frame's shape. Every entry is guaranteed finite.
    fn input_gradient(
        &self,
        state: &Self::State,
        frame: &Frame,
        objective: &dyn LogitObjective,
    ) -> Result<(LossBreakdown, Array3<f64>)>;

    /// Mask of pixels the attack may perturb; `None` means unrestricted.
    fn perturbable_region(&self, _state: &Self::State) -> Option<BinaryMask> {
        None
    }
}
