//! Benchmark orchestration: tracker construction, sequence evaluation,
//! parallel runs, artifact persistence, and coefficient sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trackpgd_core::attack::{attack_sequence, AttackConfig, AttackKind};
use trackpgd_core::mask::BinaryMask;
use trackpgd_core::synth::generate_toy_sequences;
use trackpgd_core::tracker::{train_toy, ToyTracker, ToyTrackerWeights, TrackerAdapter, TrainReport};

use crate::config::{EvalSection, RunConfig};
use crate::dataset::{from_synthetic, load_dataset, mask_to_gray, Sequence};
use crate::error::{Error, Result};
use crate::metrics::{bbox_overlap, contour_f, jaccard};
use crate::records::{
    apply_reset_protocol, build_report, round_sig, summarize_sequence, write_records,
    write_report, write_summary_csv, AttackRecord, BreakdownRecord, FrameRecord, RunReport,
    SequenceSummary,
};

/// Everything produced by evaluating one sequence.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    pub records: Vec<FrameRecord>,
    pub summary: SequenceSummary,
    /// Prediction per evaluated frame (frame 1 onward).
    pub predictions: Vec<BinaryMask>,
    /// Unattacked predictions on the same frames; present for attacked
    /// runs so attacked and clean masks can be compared side by side.
    pub clean_predictions: Option<Vec<BinaryMask>>,
}

/// Runs one sequence under `attack` and measures every frame against the
/// available ground truth.
///
/// The init frame initializes the tracker and is excluded from metrics.
/// For attacked runs the same sequence is also tracked cleanly (one extra
/// forward pass per frame) to fill `clean_jaccard` and the clean masks.
pub fn evaluate_sequence<T: TrackerAdapter>(
    tracker: &T,
    seq: &Sequence,
    attack: &AttackConfig,
    eval: &EvalSection,
) -> Result<SequenceEval> {
    let outcomes = attack_sequence(tracker, &seq.frames, seq.init_mask(), attack)?;
    let attacking = attack.kind.objective().is_some();
    let clean_predictions: Option<Vec<BinaryMask>> = if attacking {
        let clean_cfg = AttackConfig {
            kind: AttackKind::None,
            ..attack.clone()
        };
        let clean = attack_sequence(tracker, &seq.frames, seq.init_mask(), &clean_cfg)?;
        Some(clean.into_iter().map(|o| o.prediction).collect())
    } else {
        None
    };

    let mut records = Vec::with_capacity(outcomes.len());
    let mut predictions = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes.iter().enumerate() {
        let gt = seq.gt(outcome.frame_index);
        let (j, f, overlap, gt_area) = match gt {
            Some(gt) => (
                Some(jaccard(&outcome.prediction, gt)?),
                Some(contour_f(&outcome.prediction, gt, eval.contour_tol)?),
                Some(bbox_overlap(&outcome.prediction, gt)?),
                Some(gt.area()),
            ),
            None => (None, None, None, None),
        };
        let jf = match (j, f) {
            (Some(j), Some(f)) => Some((j + f) / 2.0),
            _ => None,
        };
        let clean_jaccard = match (&clean_predictions, gt) {
            (Some(preds), Some(gt)) => Some(jaccard(&preds[i], gt)?),
            _ => None,
        };
        let attack_record = outcome.attack.as_ref().map(|stats| AttackRecord {
            linf: stats.linf,
            adv_min: stats.adv_min,
            adv_max: stats.adv_max,
            iterations: stats.per_iter.len(),
            per_iter_total: stats.per_iter.iter().map(|b| b.total).collect(),
            final_breakdown: BreakdownRecord::from_core(
                stats.per_iter.last().expect("iters >= 1 is validated"),
            ),
        });
        records.push(
            FrameRecord {
                sequence: seq.id.clone(),
                frame: outcome.frame_index,
                jaccard: j,
                contour_f: f,
                jf,
                bbox_overlap: overlap,
                failure: false,
                skipped: false,
                pred_area: outcome.prediction.area(),
                gt_area,
                clean_jaccard,
                attack: attack_record,
            }
            .rounded(),
        );
        predictions.push(outcome.prediction.clone());
    }
    apply_reset_protocol(&mut records, eval.reinit_gap)?;
    let summary = summarize_sequence(&seq.id, &records, seq.fully_annotated())?;
    Ok(SequenceEval {
        records,
        summary,
        predictions,
        clean_predictions,
    })
}

/// Builds the dataset a config describes: generated on the fly or loaded
/// from disk. Generated frames pass through 8-bit quantization so both
/// paths feed the tracker identical pixels.
pub fn resolve_dataset(config: &RunConfig) -> Result<Vec<Sequence>> {
    if let Some(path) = &config.dataset.path {
        return load_dataset(path);
    }
    let s = config
        .dataset
        .synthetic
        .as_ref()
        .expect("validate() enforces one dataset source");
    let generated = generate_toy_sequences(s.seed, s.count, s.length, s.size)?;
    generated.iter().map(from_synthetic).collect()
}

/// Loads weights or trains fresh ones, per config.
///
/// Training needs full ground truth on every frame and therefore requires
/// the synthetic dataset source.
pub fn load_or_train_tracker(config: &RunConfig) -> Result<(ToyTracker, Option<TrainReport>)> {
    config.require_tracker_source()?;
    if let (Some(_), Some(_)) = (&config.tracker.weights, &config.train) {
        return Err(Error::config(
            "[tracker] weights and [train] are mutually exclusive; pick one tracker source",
        ));
    }
    if let Some(path) = &config.tracker.weights {
        let weights = ToyTrackerWeights::load(path)?;
        log::info!("loaded tracker weights from {}", path.display());
        return Ok((ToyTracker::new(weights), None));
    }
    let train_cfg = config.train.as_ref().expect("checked above");
    let s = config.dataset.synthetic.as_ref().ok_or_else(|| {
        Error::config("[train] requires [dataset.synthetic]; disk datasets may lack full masks")
    })?;
    let data = generate_toy_sequences(s.seed, s.count, s.length, s.size)?;
    let (weights, report) = train_toy(&data, &train_cfg.to_settings())?;
    log::info!(
        "trained toy tracker: {} epochs, train-iou {:.3}",
        report.epochs_run,
        report.train_iou
    );
    Ok((ToyTracker::new(weights), Some(report)))
}

/// Evaluates every sequence under one attack config, in parallel, results
/// in input order.
pub fn run_benchmark_in_memory<T: TrackerAdapter + Sync>(
    tracker: &T,
    seqs: &[Sequence],
    attack: &AttackConfig,
    eval: &EvalSection,
) -> Result<Vec<SequenceEval>> {
    if seqs.is_empty() {
        return Err(Error::config("dataset resolved to zero sequences"));
    }
    log::info!(
        "evaluating {} sequences under {:?}",
        seqs.len(),
        attack.kind
    );
    seqs.par_iter()
        .map(|seq| evaluate_sequence(tracker, seq, attack, eval))
        .collect()
}

fn save_mask_dir(root: &Path, seq: &str, masks: &[&BinaryMask], frame_offset: usize) -> Result<()> {
    for (i, mask) in masks.iter().enumerate() {
        let path = root.join(seq).join(format!("{:06}.png", i + frame_offset));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        mask_to_gray(mask)
            .save(&path)
            .map_err(|e| Error::artifact(&path, format!("png encode failed: {e}")))?;
    }
    Ok(())
}

/// Output locations of one run, all under the configured output dir.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub records: PathBuf,
    pub per_sequence_records: Vec<PathBuf>,
    pub summary_csv: PathBuf,
    pub report_json: PathBuf,
    pub weights: Option<PathBuf>,
}

/// Full benchmark: build tracker and dataset, evaluate, persist.
///
/// Per-sequence record files land in `records/<seq>.jsonl` and merge into
/// `records.jsonl` in dataset order; `summary.csv` and `report.json` hold
/// the aggregates. With `save-masks`, predictions go to `masks/<seq>/` and
/// (for attacked runs) clean predictions to `clean-masks/<seq>/`, numbered
/// by frame index. Freshly trained weights are saved to `weights.bin`.
pub fn run_benchmark(config: &RunConfig) -> Result<(RunReport, RunArtifacts)> {
    config.validate()?;
    let started = Instant::now();
    let (tracker, train_report) = load_or_train_tracker(config)?;
    let seqs = resolve_dataset(config)?;
    let attack = config.attack.to_core();
    let evals = run_benchmark_in_memory(&tracker, &seqs, &attack, &config.eval)?;

    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut per_sequence_records = Vec::with_capacity(evals.len());
    let mut merged = Vec::new();
    for eval in &evals {
        let path = dir.join("records").join(format!("{}.jsonl", eval.summary.sequence));
        write_records(&path, &eval.records)?;
        per_sequence_records.push(path);
        merged.extend(eval.records.iter().cloned());
    }
    let records_path = dir.join("records.jsonl");
    write_records(&records_path, &merged)?;

    if config.output.save_masks {
        for (seq, eval) in seqs.iter().zip(&evals) {
            let preds: Vec<&BinaryMask> = eval.predictions.iter().collect();
            save_mask_dir(&dir.join("masks"), &seq.id, &preds, 1)?;
            if let Some(clean) = &eval.clean_predictions {
                let clean: Vec<&BinaryMask> = clean.iter().collect();
                save_mask_dir(&dir.join("clean-masks"), &seq.id, &clean, 1)?;
            }
        }
    }

    let weights_path = if train_report.is_some() {
        let path = dir.join("weights.bin");
        tracker.weights().save(&path)?;
        Some(path)
    } else {
        None
    };

    let summaries: Vec<SequenceSummary> = evals.iter().map(|e| e.summary.clone()).collect();
    let report = build_report(
        summaries,
        config.to_toml_value()?,
        started.elapsed().as_secs_f64(),
    );
    let report_path = dir.join("report.json");
    write_report(&report_path, &report)?;
    let csv_path = dir.join("summary.csv");
    write_summary_csv(&csv_path, &report)?;

    Ok((
        report,
        RunArtifacts {
            dir,
            records: records_path,
            per_sequence_records,
            summary_csv: csv_path,
            report_json: report_path,
            weights: weights_path,
        },
    ))
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mean_jaccard: Option<f64>,
    pub mean_jf: Option<f64>,
}

/// One ablation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub kind: String,
    pub mean_jaccard: Option<f64>,
    pub mean_jf: Option<f64>,
}

/// Coefficient sweep plus optional attack-variant ablation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Varying the focal-difference coefficient with the dice coefficient
    /// pinned to 0.
    pub lambda1_row: Vec<SweepCell>,
    /// Varying the dice coefficient with the focal-difference coefficient
    /// pinned to 0.
    pub lambda2_row: Vec<SweepCell>,
    /// Full cross product of both value lists.
    pub grid: Vec<SweepCell>,
    /// Composite vs single-objective variants at the base coefficients.
    pub ablation: Vec<AblationCell>,
}

fn sweep_attack(base: &AttackConfig, lambda1: f64, lambda2: f64) -> AttackConfig {
    let mut cfg = base.clone();
    cfg.kind = AttackKind::TrackPgd;
    cfg.loss.lambda1 = lambda1;
    cfg.loss.lambda2 = lambda2;
    cfg
}

const ABLATION_KINDS: [(AttackKind, &str); 3] = [
    (AttackKind::TrackPgd, "trackpgd"),
    (AttackKind::SegPgdObject, "segpgd-obj"),
    (AttackKind::SegPgdBackground, "segpgd-bg"),
];

/// Runs the configured sweep. Every cell is validated before the first
/// cell runs, so a bad coefficient cannot waste a half-finished sweep.
///
/// Sweep cells force the composite attack (the rows study its
/// coefficients); the ablation runs the composite against the two
/// single-objective variants at the base coefficients. Writes `sweep.json`
/// and `sweep.csv` under the output dir.
pub fn run_sweep(config: &RunConfig) -> Result<(SweepReport, PathBuf)> {
    config.validate()?;
    let sweep = config.sweep.as_ref().ok_or_else(|| {
        Error::config("sweep requires a [sweep] section with lambda1/lambda2 value lists")
    })?;
    if sweep.lambda1.is_empty() && sweep.lambda2.is_empty() && !sweep.ablation {
        return Err(Error::config(
            "[sweep] is empty: provide lambda1 values, lambda2 values, or ablation = true",
        ));
    }
    let base = config.attack.to_core();

    let mut cells: Vec<(f64, f64)> = Vec::new();
    for &l1 in &sweep.lambda1 {
        cells.push((l1, 0.0));
    }
    for &l2 in &sweep.lambda2 {
        cells.push((0.0, l2));
    }
    for &l1 in &sweep.lambda1 {
        for &l2 in &sweep.lambda2 {
            cells.push((l1, l2));
        }
    }
    for (l1, l2) in &cells {
        sweep_attack(&base, *l1, *l2).validate().map_err(|e| {
            Error::config(format!(
                "sweep cell lambda1={l1} lambda2={l2} is invalid: {e}"
            ))
        })?;
    }

    let (tracker, _) = load_or_train_tracker(config)?;
    let seqs = resolve_dataset(config)?;

    let measure = |attack: &AttackConfig| -> Result<(Option<f64>, Option<f64>)> {
        let evals = run_benchmark_in_memory(&tracker, &seqs, attack, &config.eval)?;
        let js: Vec<f64> = evals
            .iter()
            .filter_map(|e| e.summary.mean_jaccard)
            .collect();
        let jfs: Vec<f64> = evals.iter().filter_map(|e| e.summary.mean_jf).collect();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(round_sig(v.iter().sum::<f64>() / v.len() as f64))
            }
        };
        Ok((mean(&js), mean(&jfs)))
    };

    let mut report = SweepReport::default();
    let n1 = sweep.lambda1.len();
    let n2 = sweep.lambda2.len();
    for (i, (l1, l2)) in cells.iter().enumerate() {
        log::info!(
            "sweep cell {}/{}: lambda1 {l1}, lambda2 {l2}",
            i + 1,
            cells.len()
        );
        let (mean_jaccard, mean_jf) = measure(&sweep_attack(&base, *l1, *l2))?;
        let cell = SweepCell {
            lambda1: *l1,
            lambda2: *l2,
            mean_jaccard,
            mean_jf,
        };
        if i < n1 {
            report.lambda1_row.push(cell);
        } else if i < n1 + n2 {
            report.lambda2_row.push(cell);
        } else {
            report.grid.push(cell);
        }
    }
    if sweep.ablation {
        for (kind, name) in ABLATION_KINDS {
            let mut cfg = base.clone();
            cfg.kind = kind;
            let (mean_jaccard, mean_jf) = measure(&cfg)?;
            report.ablation.push(AblationCell {
                kind: name.to_string(),
                mean_jaccard,
                mean_jf,
            });
        }
    }

    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("sweep.json");
    let body = serde_json::to_string_pretty(&report)?;
    fs::write(&json_path, body + "\n").map_err(|e| Error::io(&json_path, e))?;

    let csv_path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["table", "kind", "lambda1", "lambda2", "mean_jaccard", "mean_jf"])?;
    let cell_str = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (table, cells) in [
        ("lambda1", &report.lambda1_row),
        ("lambda2", &report.lambda2_row),
        ("grid", &report.grid),
    ] {
        for c in cells {
            w.write_record([
                table.to_string(),
                "trackpgd".to_string(),
                c.lambda1.to_string(),
                c.lambda2.to_string(),
                cell_str(c.mean_jaccard),
                cell_str(c.mean_jf),
            ])?;
        }
    }
    for c in &report.ablation {
        w.write_record([
            "ablation".to_string(),
            c.kind.clone(),
            base.loss.lambda1.to_string(),
            base.loss.lambda2.to_string(),
            cell_str(c.mean_jaccard),
            cell_str(c.mean_jf),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    Ok((report, json_path))
}
