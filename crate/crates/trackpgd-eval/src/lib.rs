//! Evaluation harness for mask-destruction attacks on video object
//! trackers: dataset ingestion and export, segmentation and tracking
//! metrics, benchmark and sweep runners with persisted artifacts, and plot
//! rendering.
//!
//! The pipeline is deterministic end to end: given the same config file
//! (and therefore the same seeds), two runs produce byte-identical record
//! files. Every float that reaches disk is rounded to 9 significant
//! digits, and all aggregates are computed from the rounded values, so
//! summaries can be reproduced exactly from the records alone.

pub mod benchmark;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod plots;
pub mod records;

pub use benchmark::{
    evaluate_sequence, resolve_dataset, run_benchmark, run_benchmark_in_memory, run_sweep,
    RunArtifacts, SequenceEval, SweepReport,
};
pub use config::{AttackKindName, RunConfig};
pub use dataset::{from_synthetic, load_dataset, load_sequence, save_dataset, save_sequence, Sequence};
pub use error::{Error, Result};
pub use metrics::{
    bbox_overlap, contour_f, jaccard, reset_marks, reset_robustness, unsupervised_overlap,
    ResetMark,
};
pub use plots::render_plots;
pub use records::{FrameRecord, RunReport, SequenceSummary};
