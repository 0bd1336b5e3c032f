//! Plot rendering without a plotting dependency: bitmap-font text,
//! Bresenham polylines, and alpha-blended mask overlays, written as PNGs.
//!
//! Per sequence the renderer emits a mask overlay (ground truth, clean
//! prediction, attacked prediction in distinct colors on the source
//! frame), a per-frame metric curve, and either a per-iteration loss curve
//! (attacked runs) or a mask-area curve (clean runs).

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use trackpgd_core::mask::{BinaryMask, Frame};

use crate::benchmark::resolve_dataset;
use crate::config::RunConfig;
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::records::{read_records, read_report, FrameRecord};

pub const GT_COLOR: Rgb<u8> = Rgb([40, 220, 40]);
pub const CLEAN_COLOR: Rgb<u8> = Rgb([70, 70, 255]);
pub const ADV_COLOR: Rgb<u8> = Rgb([230, 40, 40]);
const AXIS: Rgb<u8> = Rgb([30, 30, 30]);
const BG: Rgb<u8> = Rgb([255, 255, 255]);

/// 5x7 glyphs, one byte per row, low 5 bits used, MSB-side leftmost.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13],
        '/' => [0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10],
        _ => [0; 7],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Draws `text` (uppercased) with its top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.to_ascii_uppercase().chars() {
        let rows = glyph(c);
        for (ry, row) in rows.iter().enumerate() {
            for bit in 0..5 {
                if row & (0x10 >> bit) != 0 {
                    put(img, cx + bit as i64, y + ry as i64, color);
                }
            }
        }
        cx += 6;
    }
}

/// Bresenham line segment, clipped to the canvas.
pub fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One curve of a line plot.
pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub color: Rgb<u8>,
}

const PLOT_W: u32 = 420;
const PLOT_H: u32 = 260;
const MARGIN_L: i64 = 50;
const MARGIN_R: i64 = 12;
const MARGIN_T: i64 = 26;
const MARGIN_B: i64 = 32;

/// Renders index-vs-value curves with axes, min/max tick labels, and a
/// color legend. `y_range` pins the value axis; otherwise it spans the
/// data with padding.
pub fn line_plot(
    title: &str,
    x_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> Result<RgbImage> {
    if series.is_empty() || series.iter().all(|s| s.values.is_empty()) {
        return Err(Error::Metric {
            reason: format!("plot `{title}` has no data"),
        });
    }
    for s in series {
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric {
                reason: format!("plot `{title}` series `{}` has non-finite values", s.label),
            });
        }
    }
    let (mut lo, mut hi) = y_range.unwrap_or_else(|| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in series {
            for &v in s.values {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let pad = ((hi - lo) * 0.08).max(1e-9);
        (lo - pad, hi + pad)
    });
    if !(hi > lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    let max_len = series.iter().map(|s| s.values.len()).max().unwrap_or(1);

    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, BG);
    let x0 = MARGIN_L;
    let x1 = PLOT_W as i64 - MARGIN_R;
    let y0 = PLOT_H as i64 - MARGIN_B;
    let y1 = MARGIN_T;
    draw_line(&mut img, x0, y0, x1, y0, AXIS);
    draw_line(&mut img, x0, y0, x0, y1, AXIS);
    draw_text(&mut img, x0, 8, title, AXIS);
    draw_text(
        &mut img,
        (x0 + x1) / 2 - 3 * x_label.len() as i64,
        PLOT_H as i64 - 12,
        x_label,
        AXIS,
    );
    draw_text(&mut img, 2, y1 - 3, &format!("{hi:.3}"), AXIS);
    draw_text(&mut img, 2, y0 - 3, &format!("{lo:.3}"), AXIS);
    draw_text(&mut img, x0 - 2, y0 + 4, "0", AXIS);
    let last = format!("{}", max_len.saturating_sub(1));
    draw_text(
        &mut img,
        x1 - 6 * last.len() as i64 + 4,
        y0 + 4,
        &last,
        AXIS,
    );

    let to_px = |i: usize, v: f64, len: usize| -> (i64, i64) {
        let fx = if len <= 1 { 0.5 } else { i as f64 / (len - 1) as f64 };
        let fy = (v - lo) / (hi - lo);
        (
            x0 + (fx * (x1 - x0) as f64).round() as i64,
            y0 - (fy * (y0 - y1) as f64).round() as i64,
        )
    };
    for (si, s) in series.iter().enumerate() {
        let len = s.values.len();
        for i in 1..len {
            let (ax, ay) = to_px(i - 1, s.values[i - 1], len);
            let (bx, by) = to_px(i, s.values[i], len);
            draw_line(&mut img, ax, ay, bx, by, s.color);
        }
        if len == 1 {
            let (px, py) = to_px(0, s.values[0], len);
            for d in -1..=1 {
                draw_line(&mut img, px - 1, py + d, px + 1, py + d, s.color);
            }
        }
        let ly = y1 + 10 * si as i64;
        draw_line(&mut img, x1 - 58, ly + 3, x1 - 48, ly + 3, s.color);
        draw_text(&mut img, x1 - 44, ly, s.label, AXIS);
    }
    Ok(img)
}

/// Pixels each overlay layer touched, in mask units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlayCounts {
    pub gt: usize,
    pub clean: usize,
    pub attacked: usize,
}

fn blend(img: &mut RgbImage, y: usize, x: usize, scale: u32, color: Rgb<u8>, alpha: f64) {
    for dy in 0..scale {
        for dx in 0..scale {
            let px = img.get_pixel_mut(x as u32 * scale + dx, y as u32 * scale + dy);
            for c in 0..3 {
                px.0[c] =
                    ((1.0 - alpha) * f64::from(px.0[c]) + alpha * f64::from(color.0[c])).round()
                        as u8;
            }
        }
    }
}

/// Paints ground truth, clean prediction, and attacked prediction over the
/// frame, each in its own color, upscaled by `scale`. Returns the image
/// and the per-layer painted pixel counts (equal to the mask areas).
pub fn build_overlay(
    frame: &Frame,
    gt: Option<&BinaryMask>,
    clean: Option<&BinaryMask>,
    attacked: &BinaryMask,
    scale: u32,
) -> Result<(RgbImage, OverlayCounts)> {
    let (h, w, _) = frame.dim();
    for (name, mask) in [("gt", gt), ("clean", clean), ("attacked", Some(attacked))] {
        if let Some(m) = mask {
            if m.dim() != (h, w) {
                return Err(Error::Metric {
                    reason: format!(
                        "overlay {name} mask {:?} does not match frame ({h}, {w})",
                        m.dim()
                    ),
                });
            }
        }
    }
    let scale = scale.max(1);
    let legend_h = 12u32;
    let mut img = RgbImage::from_pixel(w as u32 * scale, h as u32 * scale + legend_h, BG);
    for y in 0..h {
        for x in 0..w {
            let color = Rgb([
                (frame.pixels()[(y, x, 0)] * 255.0).round() as u8,
                (frame.pixels()[(y, x, 1)] * 255.0).round() as u8,
                (frame.pixels()[(y, x, 2)] * 255.0).round() as u8,
            ]);
            blend(&mut img, y, x, scale, color, 1.0);
        }
    }
    let mut counts = OverlayCounts::default();
    if let Some(gt) = gt {
        for y in 0..h {
            for x in 0..w {
                if gt.is_object(y, x) {
                    counts.gt += 1;
                    blend(&mut img, y, x, scale, GT_COLOR, 0.35);
                }
            }
        }
    }
    if let Some(clean) = clean {
        for y in 0..h {
            for x in 0..w {
                if clean.is_object(y, x) {
                    counts.clean += 1;
                    blend(&mut img, y, x, scale, CLEAN_COLOR, 0.35);
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if attacked.is_object(y, x) {
                counts.attacked += 1;
                blend(&mut img, y, x, scale, ADV_COLOR, 0.45);
            }
        }
    }
    let ly = (h as u32 * scale + 2) as i64;
    draw_text(&mut img, 2, ly, "GT", GT_COLOR);
    draw_text(&mut img, 20, ly, "CLEAN", CLEAN_COLOR);
    draw_text(&mut img, 58, ly, "ADV", ADV_COLOR);
    Ok((img, counts))
}

fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|e| Error::artifact(path, format!("cannot read mask: {e}")))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryMask::from_fn(h as usize, w as usize, |y, x| {
        img.get_pixel(x as u32, y as u32).0[0] == 255
    }))
}

fn save_plot(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)
        .map_err(|e| Error::artifact(path, format!("png encode failed: {e}")))
}

fn sequence_plots(
    plots_dir: &Path,
    run_dir: &Path,
    seq: &Sequence,
    records: &[FrameRecord],
) -> Result<Vec<PathBuf>> {
    let last = records.last().ok_or_else(|| {
        Error::artifact(run_dir, format!("sequence {} has no records", seq.id))
    })?;
    let attacked_run = last.attack.is_some();
    let mut written = Vec::new();

    // 1. Mask overlay of the last evaluated frame.
    let mask_path = run_dir
        .join("masks")
        .join(&seq.id)
        .join(format!("{:06}.png", last.frame));
    if !mask_path.is_file() {
        return Err(Error::artifact(
            &mask_path,
            "missing saved mask; run the benchmark with save-masks = true",
        ));
    }
    let attacked_mask = load_mask_png(&mask_path)?;
    let clean_path = run_dir
        .join("clean-masks")
        .join(&seq.id)
        .join(format!("{:06}.png", last.frame));
    let clean_mask = if clean_path.is_file() {
        Some(load_mask_png(&clean_path)?)
    } else {
        None
    };
    let frame = seq.frames.get(last.frame).ok_or_else(|| {
        Error::artifact(
            run_dir,
            format!(
                "records reference frame {} but sequence {} has {} frames",
                last.frame,
                seq.id,
                seq.frames.len()
            ),
        )
    })?;
    let scale = (128 / frame.height().max(1)).clamp(1, 16) as u32;
    let (overlay, _) = build_overlay(
        frame,
        seq.gt(last.frame),
        clean_mask.as_ref(),
        &attacked_mask,
        scale,
    )?;
    let overlay_path = plots_dir.join(format!("{}-overlay.png", seq.id));
    save_plot(&overlay, &overlay_path)?;
    written.push(overlay_path);

    // 2. Per-frame metric curve: Jaccard when ground truth exists,
    //    otherwise the predicted area as an unsupervised stand-in.
    let js: Vec<f64> = records.iter().filter_map(|r| r.jaccard).collect();
    let metric_path = plots_dir.join(format!("{}-jaccard.png", seq.id));
    if js.is_empty() {
        let areas: Vec<f64> = records.iter().map(|r| r.pred_area as f64).collect();
        let img = line_plot(
            &format!("{} PRED AREA", seq.id),
            "FRAME",
            &[Series {
                label: "AREA",
                values: &areas,
                color: ADV_COLOR,
            }],
            None,
        )?;
        save_plot(&img, &metric_path)?;
    } else {
        let mut series = vec![Series {
            label: "J",
            values: &js,
            color: ADV_COLOR,
        }];
        let clean_js: Vec<f64> = records.iter().filter_map(|r| r.clean_jaccard).collect();
        if clean_js.len() == js.len() && !clean_js.is_empty() {
            series.push(Series {
                label: "CLEAN",
                values: &clean_js,
                color: CLEAN_COLOR,
            });
        }
        let img = line_plot(
            &format!("{} J PER FRAME", seq.id),
            "FRAME",
            &series,
            Some((0.0, 1.0)),
        )?;
        save_plot(&img, &metric_path)?;
    }
    written.push(metric_path);

    // 3. Loss-per-iteration curve for attacked runs, area curve otherwise.
    if attacked_run {
        let iters = last
            .attack
            .as_ref()
            .map(|a| a.per_iter_total.len())
            .unwrap_or(0);
        let mut mean_curve = vec![0.0; iters];
        let mut n = 0usize;
        for rec in records {
            if let Some(a) = &rec.attack {
                if a.per_iter_total.len() == iters {
                    for (i, v) in a.per_iter_total.iter().enumerate() {
                        mean_curve[i] += v;
                    }
                    n += 1;
                }
            }
        }
        for v in &mut mean_curve {
            *v /= n.max(1) as f64;
        }
        let last_curve = &last.attack.as_ref().expect("attacked_run").per_iter_total;
        let img = line_plot(
            &format!("{} ATTACK LOSS", seq.id),
            "ITER",
            &[
                Series {
                    label: "MEAN",
                    values: &mean_curve,
                    color: ADV_COLOR,
                },
                Series {
                    label: "LAST",
                    values: last_curve,
                    color: CLEAN_COLOR,
                },
            ],
            None,
        )?;
        let path = plots_dir.join(format!("{}-loss.png", seq.id));
        save_plot(&img, &path)?;
        written.push(path);
    } else {
        let pred: Vec<f64> = records.iter().map(|r| r.pred_area as f64).collect();
        let gt: Vec<f64> = records
            .iter()
            .filter_map(|r| r.gt_area.map(|a| a as f64))
            .collect();
        let mut series = vec![Series {
            label: "PRED",
            values: &pred,
            color: ADV_COLOR,
        }];
        if gt.len() == pred.len() && !gt.is_empty() {
            series.push(Series {
                label: "GT",
                values: &gt,
                color: GT_COLOR,
            });
        }
        let img = line_plot(&format!("{} MASK AREA", seq.id), "FRAME", &series, None)?;
        let path = plots_dir.join(format!("{}-area.png", seq.id));
        save_plot(&img, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Renders all plots for a finished run: reads `report.json`, the
/// per-sequence record files, and the saved masks under the configured
/// output dir, and writes at least three images per sequence into
/// `plots/`. Missing artifacts are errors.
pub fn render_plots(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let run_dir = &config.output.dir;
    let report_path = run_dir.join("report.json");
    if !report_path.is_file() {
        return Err(Error::artifact(&report_path, "missing report.json"));
    }
    let report = read_report(&report_path)?;
    if report.sequences.is_empty() {
        return Err(Error::artifact(&report_path, "report contains no sequences"));
    }
    let dataset = resolve_dataset(config)?;
    let plots_dir = run_dir.join("plots");
    let mut written = Vec::new();
    for summary in &report.sequences {
        let records_path = run_dir
            .join("records")
            .join(format!("{}.jsonl", summary.sequence));
        if !records_path.is_file() {
            return Err(Error::artifact(&records_path, "missing records file"));
        }
        let records = read_records(&records_path)?;
        let seq = dataset
            .iter()
            .find(|s| s.id == summary.sequence)
            .ok_or_else(|| {
                Error::artifact(
                    run_dir,
                    format!("dataset has no sequence `{}`", summary.sequence),
                )
            })?;
        written.extend(sequence_plots(&plots_dir, run_dir, seq, &records)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn flat_frame(h: usize, w: usize) -> Frame {
        Frame::new(Array3::from_elem((h, w, 3), 0.5)).unwrap()
    }

    #[test]
    fn overlay_counts_match_mask_areas() {
        let frame = flat_frame(8, 8);
        let gt = BinaryMask::from_fn(8, 8, |y, x| y < 3 && x < 3);
        let clean = BinaryMask::from_fn(8, 8, |y, x| y < 3 && x < 4);
        let adv = BinaryMask::from_fn(8, 8, |y, _| y == 7);
        let (img, counts) =
            build_overlay(&frame, Some(&gt), Some(&clean), &adv, 2).unwrap();
        assert_eq!(counts.gt, gt.area());
        assert_eq!(counts.clean, clean.area());
        assert_eq!(counts.attacked, adv.area());
        assert_eq!(img.width(), 16);
        assert!(img.height() >= 16);
    }

    #[test]
    fn overlay_rejects_mismatched_masks() {
        let frame = flat_frame(8, 8);
        let bad = BinaryMask::zeros(4, 4);
        assert!(build_overlay(&frame, Some(&bad), None, &BinaryMask::zeros(8, 8), 1).is_err());
    }

    #[test]
    fn overlay_layers_paint_distinct_colors() {
        let frame = flat_frame(4, 4);
        let adv = BinaryMask::from_fn(4, 4, |y, x| y == 0 && x == 0);
        let (img, _) = build_overlay(&frame, None, None, &adv, 1).unwrap();
        let painted = img.get_pixel(0, 0);
        let untouched = img.get_pixel(2, 2);
        assert!(painted.0[0] > untouched.0[0], "red layer must tint red up");
        assert!(painted.0[2] < untouched.0[2], "red layer must pull blue down");
    }

    #[test]
    fn line_plot_handles_normal_and_degenerate_input() {
        let img = line_plot(
            "TEST",
            "X",
            &[Series {
                label: "A",
                values: &[0.1, 0.5, 0.3],
                color: ADV_COLOR,
            }],
            Some((0.0, 1.0)),
        )
        .unwrap();
        assert_eq!((img.width(), img.height()), (PLOT_W, PLOT_H));
        // Constant series and single-point series must not divide by zero.
        line_plot(
            "CONST",
            "X",
            &[Series {
                label: "A",
                values: &[0.5, 0.5],
                color: ADV_COLOR,
            }],
            None,
        )
        .unwrap();
        line_plot(
            "ONE",
            "X",
            &[Series {
                label: "A",
                values: &[0.5],
                color: ADV_COLOR,
            }],
            None,
        )
        .unwrap();
        assert!(line_plot("EMPTY", "X", &[], None).is_err());
        assert!(line_plot(
            "NAN",
            "X",
            &[Series {
                label: "A",
                values: &[f64::NAN],
                color: ADV_COLOR,
            }],
            None,
        )
        .is_err());
    }

    #[test]
    fn text_clips_at_canvas_edges() {
        let mut img = RgbImage::from_pixel(20, 10, BG);
        draw_text(&mut img, -3, -2, "CLIP", AXIS);
        draw_text(&mut img, 18, 8, "CLIP", AXIS);
        draw_line(&mut img, -5, -5, 30, 15, AXIS);
    }
}
