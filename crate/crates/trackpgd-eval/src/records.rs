//! Persisted run artifacts: per-frame records, per-sequence summaries, and
//! the run report.
//!
//! Records are written as one JSON object per line, one file per sequence,
//! merged into a single run-level file in sequence order. Every float is
//! rounded to 9 significant digits before it is stored or aggregated, so
//! re-reading a records file and recomputing the summary reproduces the
//! persisted summary exactly, and identical runs produce byte-identical
//! files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use trackpgd_core::losses::LossBreakdown;

use crate::error::{Error, Result};
use crate::metrics::{reset_marks, unsupervised_overlap, ResetMark};

/// Rounds to 9 significant digits; the canonical form of every float that
/// leaves this crate.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor();
    let scale = 10f64.powf(8.0 - magnitude);
    (x * scale).round() / scale
}

fn round_opt(x: Option<f64>) -> Option<f64> {
    x.map(round_sig)
}

/// Loss component values of one attack iteration, rounded for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub total: f64,
    pub focal: f64,
    pub dice: f64,
    pub delta: f64,
    pub segpgd_pos_term: f64,
    pub segpgd_neg_term: f64,
}

impl BreakdownRecord {
    pub fn from_core(b: &LossBreakdown) -> Self {
        BreakdownRecord {
            total: round_sig(b.total),
            focal: round_sig(b.focal),
            dice: round_sig(b.dice),
            delta: round_sig(b.delta),
            segpgd_pos_term: round_sig(b.segpgd_pos_term),
            segpgd_neg_term: round_sig(b.segpgd_neg_term),
        }
    }
}

/// Attack telemetry for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    /// L-infinity distance between adversarial and clean frame.
    pub linf: f64,
    /// Extremes of the adversarial frame; both must stay in [0, 1].
    pub adv_min: f64,
    pub adv_max: f64,
    pub iterations: usize,
    /// Objective total at the start of each iteration.
    pub per_iter_total: Vec<f64>,
    /// Component breakdown at the final iteration.
    pub final_breakdown: BreakdownRecord,
}

/// Everything measured on one evaluated frame.
///
/// Supervised fields are `None` on frames without ground truth. The
/// `failure` and `skipped` flags come from the reset protocol scan over
/// the sequence's bbox overlaps: `failure` is set exactly on counted
/// zero-overlap frames, `skipped` on frames inside a re-initialization
/// gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub sequence: String,
    pub frame: usize,
    pub jaccard: Option<f64>,
    pub contour_f: Option<f64>,
    /// Mean of jaccard and contour_f, per frame.
    pub jf: Option<f64>,
    pub bbox_overlap: Option<f64>,
    pub failure: bool,
    pub skipped: bool,
    pub pred_area: usize,
    pub gt_area: Option<usize>,
    /// Jaccard of the unattacked prediction on the same frame; present
    /// only for attacked runs on annotated frames.
    pub clean_jaccard: Option<f64>,
    pub attack: Option<AttackRecord>,
}

impl FrameRecord {
    /// Applies canonical rounding to every float field.
    pub fn rounded(mut self) -> Self {
        self.jaccard = round_opt(self.jaccard);
        self.contour_f = round_opt(self.contour_f);
        self.jf = round_opt(self.jf);
        self.bbox_overlap = round_opt(self.bbox_overlap);
        self.clean_jaccard = round_opt(self.clean_jaccard);
        if let Some(a) = &mut self.attack {
            a.linf = round_sig(a.linf);
            a.adv_min = round_sig(a.adv_min);
            a.adv_max = round_sig(a.adv_max);
            for v in &mut a.per_iter_total {
                *v = round_sig(*v);
            }
        }
        self
    }
}

/// Aggregates of one sequence, computed from its rounded frame records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub sequence: String,
    /// Frames evaluated (the init frame is excluded everywhere).
    pub frames: usize,
    /// Frames that carried ground truth.
    pub annotated: usize,
    pub mean_jaccard: Option<f64>,
    pub mean_contour_f: Option<f64>,
    pub mean_jf: Option<f64>,
    pub mean_clean_jaccard: Option<f64>,
    pub failures: usize,
    /// Failures normalized by annotated frame count; higher is worse.
    pub robustness: Option<f64>,
    /// One-pass mean overlap; only defined when every frame has ground
    /// truth.
    pub unsupervised_overlap: Option<f64>,
}

/// Aggregates of a whole run. Sequence-level means first, then the mean of
/// those means, so short sequences are not drowned out by long ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sequences: Vec<SequenceSummary>,
    pub mean_jaccard: Option<f64>,
    pub mean_contour_f: Option<f64>,
    pub mean_jf: Option<f64>,
    pub mean_clean_jaccard: Option<f64>,
    pub total_failures: usize,
    pub mean_robustness: Option<f64>,
    pub unsupervised_overlap: Option<f64>,
    /// Echo of the run configuration, for provenance.
    pub config: toml::Value,
    /// Wall clock of the compute phase; informational only and excluded
    /// from determinism comparisons (records files never contain it).
    pub wall_clock_seconds: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        None
    } else {
        Some(round_sig(values.iter().sum::<f64>() / values.len() as f64))
    }
}

/// Fills the reset-protocol flags of one sequence's records in place and
/// returns the failure count.
///
/// The scan runs over annotated frames in order; unannotated frames have
/// no overlap to test and never advance the protocol.
pub fn apply_reset_protocol(records: &mut [FrameRecord], reinit_gap: usize) -> Result<usize> {
    let overlaps: Vec<f64> = records
        .iter()
        .filter_map(|r| r.bbox_overlap)
        .collect();
    if overlaps.is_empty() {
        return Ok(0);
    }
    let marks = reset_marks(&overlaps, reinit_gap)?;
    let mut mi = 0;
    let mut failures = 0;
    for rec in records.iter_mut() {
        if rec.bbox_overlap.is_some() {
            match marks[mi] {
                ResetMark::Failure => {
                    rec.failure = true;
                    failures += 1;
                }
                ResetMark::Skipped => rec.skipped = true,
                ResetMark::Tracked => {}
            }
            mi += 1;
        }
    }
    Ok(failures)
}

/// Summarizes one sequence from its records. `fully_annotated` gates the
/// one-pass overlap, which is undefined on partial annotation.
pub fn summarize_sequence(
    sequence: &str,
    records: &[FrameRecord],
    fully_annotated: bool,
) -> Result<SequenceSummary> {
    let annotated = records.iter().filter(|r| r.jaccard.is_some()).count();
    let failures = records.iter().filter(|r| r.failure).count();
    let unsup = if fully_annotated && !records.is_empty() {
        let js: Vec<Option<f64>> = records.iter().map(|r| r.jaccard).collect();
        Some(round_sig(unsupervised_overlap(&js)?))
    } else {
        None
    };
    Ok(SequenceSummary {
        sequence: sequence.to_string(),
        frames: records.len(),
        annotated,
        mean_jaccard: mean(records.iter().filter_map(|r| r.jaccard)),
        mean_contour_f: mean(records.iter().filter_map(|r| r.contour_f)),
        mean_jf: mean(records.iter().filter_map(|r| r.jf)),
        mean_clean_jaccard: mean(records.iter().filter_map(|r| r.clean_jaccard)),
        failures,
        robustness: if annotated > 0 {
            Some(round_sig(failures as f64 / annotated as f64))
        } else {
            None
        },
        unsupervised_overlap: unsup,
    })
}

/// Builds the run report from per-sequence summaries.
pub fn build_report(
    summaries: Vec<SequenceSummary>,
    config: toml::Value,
    wall_clock_seconds: f64,
) -> RunReport {
    let total_failures = summaries.iter().map(|s| s.failures).sum();
    RunReport {
        mean_jaccard: mean(summaries.iter().filter_map(|s| s.mean_jaccard)),
        mean_contour_f: mean(summaries.iter().filter_map(|s| s.mean_contour_f)),
        mean_jf: mean(summaries.iter().filter_map(|s| s.mean_jf)),
        mean_clean_jaccard: mean(summaries.iter().filter_map(|s| s.mean_clean_jaccard)),
        total_failures,
        mean_robustness: mean(summaries.iter().filter_map(|s| s.robustness)),
        unsupervised_overlap: mean(summaries.iter().filter_map(|s| s.unsupervised_overlap)),
        sequences: summaries,
        config,
        wall_clock_seconds,
    }
}

/// Serializes records as one JSON object per line.
pub fn write_records(path: &Path, records: &[FrameRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a records file written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<FrameRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| {
            Error::artifact(path, format!("bad record on line {}: {e}", i + 1))
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Writes the per-sequence summary table as CSV, one row per sequence plus
/// an overall row.
pub fn write_summary_csv(path: &Path, report: &RunReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sequence",
        "frames",
        "annotated",
        "mean_jaccard",
        "mean_contour_f",
        "mean_jf",
        "mean_clean_jaccard",
        "failures",
        "robustness",
        "unsupervised_overlap",
    ])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &report.sequences {
        w.write_record([
            s.sequence.clone(),
            s.frames.to_string(),
            s.annotated.to_string(),
            cell(s.mean_jaccard),
            cell(s.mean_contour_f),
            cell(s.mean_jf),
            cell(s.mean_clean_jaccard),
            s.failures.to_string(),
            cell(s.robustness),
            cell(s.unsupervised_overlap),
        ])?;
    }
    w.write_record([
        "__overall__".to_string(),
        report.sequences.iter().map(|s| s.frames).sum::<usize>().to_string(),
        report
            .sequences
            .iter()
            .map(|s| s.annotated)
            .sum::<usize>()
            .to_string(),
        cell(report.mean_jaccard),
        cell(report.mean_contour_f),
        cell(report.mean_jf),
        cell(report.mean_clean_jaccard),
        report.total_failures.to_string(),
        cell(report.mean_robustness),
        cell(report.unsupervised_overlap),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes the run report as pretty JSON.
pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let body = serde_json::to_string_pretty(report)?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frame: usize, j: f64, overlap: f64) -> FrameRecord {
        FrameRecord {
            sequence: "seq".into(),
            frame,
            jaccard: Some(j),
            contour_f: Some(j),
            jf: Some(j),
            bbox_overlap: Some(overlap),
            failure: false,
            skipped: false,
            pred_area: 4,
            gt_area: Some(4),
            clean_jaccard: None,
            attack: None,
        }
    }

    #[test]
    fn round_sig_fixtures() {
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(1.0), 1.0);
        assert_eq!(round_sig(0.123456789123), 0.123456789);
        assert_eq!(round_sig(123456789.123), 123456789.0);
        assert_eq!(round_sig(-0.000123456789123), -0.000123456789);
        // Idempotent: rounding a rounded value changes nothing.
        for x in [0.1 + 0.2, 1.0 / 3.0, 2.0f64.sqrt(), 8.0 / 255.0] {
            assert_eq!(round_sig(round_sig(x)), round_sig(x));
        }
    }

    #[test]
    fn jsonl_roundtrip_is_exact() {
        let recs: Vec<FrameRecord> = vec![
            record(1, 0.5, 0.5).rounded(),
            FrameRecord {
                attack: Some(AttackRecord {
                    linf: 8.0 / 255.0,
                    adv_min: 0.0,
                    adv_max: 1.0,
                    iterations: 10,
                    per_iter_total: vec![0.1, 0.2],
                    final_breakdown: BreakdownRecord {
                        total: 0.3,
                        focal: 0.1,
                        dice: 0.2,
                        delta: 0.05,
                        segpgd_pos_term: 0.02,
                        segpgd_neg_term: 0.01,
                    },
                }),
                clean_jaccard: Some(0.9),
                ..record(2, 1.0 / 3.0, 0.0)
            }
            .rounded(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &recs).unwrap();
        let loaded = read_records(&path).unwrap();
        assert_eq!(loaded, recs);
        // Writing the re-read records reproduces the bytes.
        let path2 = dir.path().join("records2.jsonl");
        write_records(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn reset_protocol_flags_records() {
        let mut recs = vec![
            record(1, 0.9, 0.9),
            record(2, 0.0, 0.0),
            record(3, 0.0, 0.0),
            record(4, 0.8, 0.8),
        ];
        let failures = apply_reset_protocol(&mut recs, 1).unwrap();
        assert_eq!(failures, 1);
        assert!(recs[1].failure && !recs[1].skipped);
        assert!(recs[2].skipped && !recs[2].failure);
        assert!(!recs[0].failure && !recs[3].failure);
    }

    #[test]
    fn reset_protocol_skips_unannotated_frames() {
        let mut recs = vec![record(1, 0.9, 0.9), record(2, 0.0, 0.0), record(3, 0.5, 0.5)];
        recs[2].jaccard = None;
        recs[2].bbox_overlap = None;
        let failures = apply_reset_protocol(&mut recs, 1).unwrap();
        assert_eq!(failures, 1);
        assert!(!recs[2].failure && !recs[2].skipped);
    }

    #[test]
    fn summary_recomputes_from_rounded_records() {
        let recs: Vec<FrameRecord> = vec![
            record(1, 1.0 / 3.0, 1.0 / 3.0).rounded(),
            record(2, 2.0 / 3.0, 2.0 / 3.0).rounded(),
        ];
        let s = summarize_sequence("seq", &recs, true).unwrap();
        let expected =
            round_sig((recs[0].jaccard.unwrap() + recs[1].jaccard.unwrap()) / 2.0);
        assert_eq!(s.mean_jaccard, Some(expected));
        assert_eq!(s.unsupervised_overlap, Some(expected));
        assert_eq!(s.frames, 2);
        assert_eq!(s.annotated, 2);
        assert_eq!(s.failures, 0);
        assert_eq!(s.robustness, Some(0.0));
    }

    #[test]
    fn partial_annotation_disables_unsupervised_overlap() {
        let mut recs = vec![record(1, 0.5, 0.5), record(2, 0.6, 0.6)];
        recs[1].jaccard = None;
        recs[1].contour_f = None;
        recs[1].jf = None;
        recs[1].bbox_overlap = None;
        let s = summarize_sequence("seq", &recs, false).unwrap();
        assert_eq!(s.unsupervised_overlap, None);
        assert_eq!(s.annotated, 1);
        assert_eq!(s.mean_jaccard, Some(0.5));
    }

    #[test]
    fn report_means_are_means_of_sequence_means() {
        let s1 = summarize_sequence("a", &[record(1, 0.2, 0.5)], true).unwrap();
        let s2 = summarize_sequence(
            "b",
            &[record(1, 0.4, 0.5), record(2, 0.6, 0.5)],
            true,
        )
        .unwrap();
        let report = build_report(vec![s1, s2], toml::Value::Table(Default::default()), 0.0);
        // Sequence means 0.2 and 0.5; the pooled frame mean 0.4 would differ.
        assert_eq!(report.mean_jaccard, Some(round_sig((0.2 + 0.5) / 2.0)));
        assert_eq!(report.total_failures, 0);
    }

    #[test]
    fn csv_has_one_row_per_sequence_plus_overall() {
        let s = summarize_sequence("a", &[record(1, 0.5, 0.5)], true).unwrap();
        let report = build_report(vec![s], toml::Value::Table(Default::default()), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &report).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 3, "header + sequence + overall: {body}");
        assert!(lines[2].starts_with("__overall__"));
    }

    #[test]
    fn report_roundtrip() {
        let s = summarize_sequence("a", &[record(1, 0.5, 0.5)], true).unwrap();
        let report = build_report(vec![s], toml::Value::Table(Default::default()), 1.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&path, &report).unwrap();
        let loaded = read_report(&path).unwrap();
        assert_eq!(loaded, report);
    }
}
