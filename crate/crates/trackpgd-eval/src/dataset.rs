//! Dataset ingestion and export.
//!
//! Layout on disk, one directory per sequence:
//!
//! ```text
//! <seq>/frames/000000.png   8-bit RGB, one file per frame, consecutive.
//! <seq>/masks/000000.png    8-bit gray, 0 background / 255 object.
//! ```
//!
//! The frame-0 mask is mandatory (trackers initialize from it); later masks
//! are optional, and frames without one are simply excluded from supervised
//! metrics.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use trackpgd_core::mask::{BinaryMask, Frame};
use trackpgd_core::synth::SyntheticSequence;

use crate::error::{Error, Result};

/// One evaluation sequence: ordered frames plus per-frame ground truth
/// where available. `masks[0]` is always present.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Frame>,
    /// Index-aligned with `frames`; `None` marks unannotated frames.
    pub masks: Vec<Option<BinaryMask>>,
}

impl Sequence {
    /// Ground truth for frame `idx`, if annotated.
    pub fn gt(&self, idx: usize) -> Option<&BinaryMask> {
        self.masks.get(idx).and_then(|m| m.as_ref())
    }

    /// Whether every frame carries ground truth.
    pub fn fully_annotated(&self) -> bool {
        self.masks.iter().all(|m| m.is_some())
    }

    pub fn init_mask(&self) -> &BinaryMask {
        self.masks[0]
            .as_ref()
            .expect("constructors guarantee the init mask")
    }
}

fn frame_name(idx: usize) -> String {
    format!("{idx:06}.png")
}

/// Quantizes `v` in [0, 1] to the 8-bit grid.
fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Converts a generated sequence into an evaluation sequence.
///
/// Pixel values pass through the 8-bit PNG quantization even in memory, so
/// a run on a generated dataset and a run on the same dataset after a
/// save/load round trip see identical inputs and produce identical records.
pub fn from_synthetic(seq: &SyntheticSequence) -> Result<Sequence> {
    let mut frames = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let (h, w, c) = frame.dim();
        if c != 3 {
            return Err(Error::ingestion(
                PathBuf::from(&seq.id),
                format!("expected 3-channel frames, got {c}"),
            ));
        }
        let quantized = Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
            f64::from(to_u8(frame.pixels()[(y, x, ch)])) / 255.0
        });
        frames.push(Frame::new(quantized)?);
    }
    Ok(Sequence {
        id: seq.id.clone(),
        frames,
        masks: seq.masks.iter().cloned().map(Some).collect(),
    })
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::ingestion(path, format!("undecodable image: {e}")))?;
    Ok(img.to_rgb8())
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::ingestion(path, format!("undecodable image: {e}")))?;
    Ok(img.to_luma8())
}

fn frame_from_rgb(img: &RgbImage) -> Result<Frame> {
    let (w, h) = img.dimensions();
    let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f64::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0
    });
    Ok(Frame::new(pixels)?)
}

fn mask_from_gray(img: &GrayImage, path: &Path) -> Result<BinaryMask> {
    let (w, h) = img.dimensions();
    let mut labels = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        labels[(y as usize, x as usize)] = match p.0[0] {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::ingestion(
                    path,
                    format!("mask pixel must be 0 or 255, got {other} at ({y}, {x})"),
                ))
            }
        };
    }
    Ok(BinaryMask::new(labels)?)
}

/// Loads one sequence from `dir` following the documented layout.
///
/// Frames must be consecutively numbered from 000000; the frame-0 mask is
/// mandatory, later masks optional. Every mask must match its frame's
/// height and width.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::ingestion(dir, "sequence directory has no usable name"))?
        .to_string();
    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        return Err(Error::ingestion(&frames_dir, "missing frames directory"));
    }
    let masks_dir = dir.join("masks");

    let mut frames = Vec::new();
    let mut masks = Vec::new();
    loop {
        let frame_path = frames_dir.join(frame_name(frames.len()));
        if !frame_path.is_file() {
            break;
        }
        let frame = frame_from_rgb(&read_rgb(&frame_path)?)?;
        let mask_path = masks_dir.join(frame_name(frames.len()));
        let mask = if mask_path.is_file() {
            let mask = mask_from_gray(&read_gray(&mask_path)?, &mask_path)?;
            if mask.dim() != (frame.height(), frame.width()) {
                return Err(Error::ingestion(
                    &mask_path,
                    format!(
                        "mask {:?} does not match frame {:?}",
                        mask.dim(),
                        (frame.height(), frame.width())
                    ),
                ));
            }
            Some(mask)
        } else {
            None
        };
        frames.push(frame);
        masks.push(mask);
    }
    if frames.is_empty() {
        return Err(Error::ingestion(
            &frames_dir,
            "no frames found (expected 000000.png, 000001.png, ...)",
        ));
    }
    if masks[0].is_none() {
        return Err(Error::ingestion(
            masks_dir.join(frame_name(0)),
            "the frame-0 mask is mandatory",
        ));
    }
    Ok(Sequence { id, frames, masks })
}

/// Loads every sequence directory under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>> {
    if !root.is_dir() {
        return Err(Error::ingestion(root, "dataset root is not a directory"));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::ingestion(root, "dataset contains no sequence directories"));
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}

pub fn frame_to_rgb(frame: &Frame) -> RgbImage {
    let (h, w, _) = frame.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([
            to_u8(frame.pixels()[(y as usize, x as usize, 0)]),
            to_u8(frame.pixels()[(y as usize, x as usize, 1)]),
            to_u8(frame.pixels()[(y as usize, x as usize, 2)]),
        ])
    })
}

pub fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    let (h, w) = mask.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask.is_object(y as usize, x as usize) {
            255
        } else {
            0
        }])
    })
}

fn save_png(path: &Path, write: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(path).map_err(|e| Error::ingestion(path, format!("png encode failed: {e}")))
}

/// Writes `seq` to `dir` in the documented layout. Unannotated frames get
/// no mask file.
pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    for (idx, frame) in seq.frames.iter().enumerate() {
        let path = dir.join("frames").join(frame_name(idx));
        save_png(&path, |p| frame_to_rgb(frame).save(p))?;
    }
    for (idx, mask) in seq.masks.iter().enumerate() {
        if let Some(mask) = mask {
            let path = dir.join("masks").join(frame_name(idx));
            save_png(&path, |p| mask_to_gray(mask).save(p))?;
        }
    }
    Ok(())
}

/// Writes a whole dataset, one subdirectory per sequence.
pub fn save_dataset(seqs: &[Sequence], root: &Path) -> Result<()> {
    for seq in seqs {
        save_sequence(seq, &root.join(&seq.id))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use trackpgd_core::synth::generate_toy_sequences;

    fn sample() -> Sequence {
        let generated = generate_toy_sequences(5, 1, 3, 16).unwrap();
        from_synthetic(&generated[0]).unwrap()
    }

    #[test]
    fn synthetic_roundtrip_is_exact() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let loaded = load_sequence(dir.path()).unwrap();
        assert_eq!(loaded.frames.len(), seq.frames.len());
        for (a, b) in loaded.frames.iter().zip(&seq.frames) {
            assert_eq!(a.pixels(), b.pixels(), "quantized pixels must round-trip");
        }
        for (a, b) in loaded.masks.iter().zip(&seq.masks) {
            assert_eq!(
                a.as_ref().unwrap().labels(),
                b.as_ref().unwrap().labels()
            );
        }
    }

    #[test]
    fn partial_annotation_loads() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        fs::remove_file(dir.path().join("masks").join(frame_name(1))).unwrap();
        let loaded = load_sequence(dir.path()).unwrap();
        assert!(loaded.masks[0].is_some());
        assert!(loaded.masks[1].is_none());
        assert!(loaded.masks[2].is_some());
        assert!(!loaded.fully_annotated());
    }

    #[test]
    fn missing_init_mask_is_an_error() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        fs::remove_file(dir.path().join("masks").join(frame_name(0))).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }), "{err}");
    }

    #[test]
    fn missing_frames_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_sequence(dir.path()).is_err());
    }

    #[test]
    fn mismatched_mask_shape_is_an_error() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let bad = BinaryMask::zeros(4, 4);
        mask_to_gray(&bad)
            .save(dir.path().join("masks").join(frame_name(1)))
            .unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("does not match frame"), "{msg}");
    }

    #[test]
    fn non_binary_mask_pixel_is_an_error() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let (h, w) = seq.masks[0].as_ref().unwrap().dim();
        let gray = GrayImage::from_fn(w as u32, h as u32, |_, _| image::Luma([7u8]));
        gray.save(dir.path().join("masks").join(frame_name(1)))
            .unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("0 or 255"), "{err}");
    }

    #[test]
    fn dataset_loads_sorted_by_name() {
        let root = tempfile::tempdir().unwrap();
        let mut b = sample();
        b.id = "seq-b".into();
        let mut a = sample();
        a.id = "seq-a".into();
        save_dataset(&[b, a], root.path()).unwrap();
        let loaded = load_dataset(root.path()).unwrap();
        assert_eq!(loaded[0].id, "seq-a");
        assert_eq!(loaded[1].id, "seq-b");
    }
}
