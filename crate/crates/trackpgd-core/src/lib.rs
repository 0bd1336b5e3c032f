//! Core library for mask-based adversarial attacks on video object trackers.
//!
//! The crate is organized around a small set of strongly typed values:
//!
//! * [`mask::Frame`]: an HxWxC image with all values in `[0, 1]`,
//! * [`mask::BinaryMask`]: an HxW segmentation with values in `{0, 1}`,
//! * [`mask::LogitMap`] / [`mask::ProbMap`]: dense per-pixel scores,
//!
//! plus three functional layers on top of them:
//!
//! * [`losses`]: the weighted segmentation cross-entropy family, the
//!   object/background difference loss, its focal reweighting, and the soft
//!   dice overlap term, each with an analytic logit-space gradient,
//! * [`tracker`]: the adapter interface a victim tracker must expose
//!   (logit prediction plus input gradients) and a small fully differentiable
//!   convolutional tracker used as the test victim,
//! * [`attack`]: the projected-gradient loop that perturbs a frame inside an
//!   epsilon ball to destroy the predicted mask, and the sequence driver that
//!   feeds each previous prediction forward as the next pseudo ground truth.
//!
//! Everything is deterministic given a seed: random number use is confined
//! to explicit seeded generators and all reductions run in a fixed order.

pub mod attack;
pub mod error;
pub mod losses;
pub mod mask;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
