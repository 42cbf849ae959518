//! Glottis-mask ingestion, the per-frame area waveform and the
//! prior-mean raster that seeds diffusion-based mask refinement.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::io::frame_file_name;
use crate::model::{GlottisMask, SeriesChannel};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("cannot read mask {path}: {detail}")]
    UnreadableFile { path: PathBuf, detail: String },
    #[error("unsupported mask format {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("alpha {0} outside [0, 0.3]")]
    AlphaOutOfRange(f64),
    #[error("mask sequence must be non-empty with uniform dimensions and positive fps")]
    BadSequence,
}

/// Ordered per-frame masks with uniform dimensions.
#[derive(Debug, Clone)]
pub struct MaskSequence {
    pub fps: f64,
    pub masks: Vec<GlottisMask>,
}

impl MaskSequence {
    pub fn new(fps: f64, masks: Vec<GlottisMask>) -> Result<Self, MaskError> {
        if !(fps > 0.0) || masks.is_empty() {
            return Err(MaskError::BadSequence);
        }
        let (w, h) = (masks[0].width, masks[0].height);
        if masks.iter().any(|m| m.width != w || m.height != h) {
            return Err(MaskError::BadSequence);
        }
        Ok(Self { fps, masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Decode an 8-bit grayscale PNG or PGM mask; a pixel is part of the mask
/// when its value exceeds 127.
pub fn load_mask(path: &Path) -> Result<GlottisMask, MaskError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => MaskError::UnreadableFile {
            path: path.to_path_buf(),
            detail: io.to_string(),
        },
        other => MaskError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(MaskError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("expected 8-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    let (width, height) = (gray.width() as usize, gray.height() as usize);
    let pixels = gray.into_raw().iter().map(|&v| v > 127).collect();
    GlottisMask::new(width, height, pixels).map_err(|e| MaskError::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write a mask as an 8-bit grayscale PNG (0 or 255 per pixel).
pub fn write_mask(path: &Path, mask: &GlottisMask) -> Result<(), MaskError> {
    let data: Vec<u8> = mask.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, data)
        .expect("pixel buffer matches dimensions");
    img.save(path).map_err(|e| MaskError::UnreadableFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Load `frame_%06d.png` masks (consecutive from zero) from a directory that
/// mirrors the frame-directory naming.
pub fn load_mask_dir(dir: &Path, fps: f64) -> Result<MaskSequence, MaskError> {
    let mut masks = Vec::new();
    loop {
        let path = dir.join(frame_file_name(masks.len()));
        if !path.exists() {
            break;
        }
        masks.push(load_mask(&path)?);
    }
    MaskSequence::new(fps, masks)
}

/// Write a mask sequence using the frame-directory naming.
pub fn write_mask_dir(dir: &Path, seq: &MaskSequence) -> Result<(), MaskError> {
    std::fs::create_dir_all(dir).map_err(|e| MaskError::UnreadableFile {
        path: dir.to_path_buf(),
        detail: e.to_string(),
    })?;
    for (i, mask) in seq.masks.iter().enumerate() {
        write_mask(&dir.join(frame_file_name(i)), mask)?;
    }
    Ok(())
}

/// Glottal area waveform: true-pixel count per frame.
pub fn gaw(seq: &MaskSequence) -> SeriesChannel {
    SeriesChannel::new(
        "GAW",
        seq.masks.iter().map(|m| m.area() as f64).collect(),
    )
}

/// Per-pixel Gaussian mean seeding diffusion refinement of a mask.
///
/// `mu = (1 - (alpha*(1-m) + (1-alpha)*m)) * 1e-3` per pixel, so at
/// `alpha = 0` background pixels get the full 1e-3 mean and mask pixels get
/// zero: attention is biased toward the regions outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPrior {
    pub alpha: f64,
    pub width: usize,
    pub height: usize,
    pub mu: Vec<f64>,
}

/// Evaluate the prior mean exactly. `alpha` must lie in the sampled range
/// [0, 0.3].
pub fn diffusion_init_mean(mask: &GlottisMask, alpha: f64) -> Result<DiffusionPrior, MaskError> {
    if !(0.0..=0.3).contains(&alpha) {
        return Err(MaskError::AlphaOutOfRange(alpha));
    }
    let mu = mask
        .pixels
        .iter()
        .map(|&p| {
            let m = if p { 1.0 } else { 0.0 };
            (1.0 - (alpha * (1.0 - m) + (1.0 - alpha) * m)) * 1e-3
        })
        .collect();
    Ok(DiffusionPrior {
        alpha,
        width: mask.width,
        height: mask.height,
        mu,
    })
}

/// Export a prior as a float32 LE raster (header: height, width as u32 LE).
pub fn write_prior(path: &Path, prior: &DiffusionPrior) -> Result<(), crate::io::IoError> {
    crate::io::write_f32_raster(path, prior.height as u32, prior.width as u32, &prior.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn rect_mask(w: usize, h: usize, filled: bool) -> GlottisMask {
        GlottisMask::new(w, h, vec![filled; w * h]).unwrap()
    }

    #[test]
    fn load_mask_thresholds_at_127() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.png");

        let full = image::GrayImage::from_pixel(6, 4, image::Luma([255]));
        full.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().area(), 24);

        let empty = image::GrayImage::from_pixel(6, 4, image::Luma([0]));
        empty.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().area(), 0);

        let checker = image::GrayImage::from_fn(4, 4, |x, y| {
            image::Luma([if (x + y) % 2 == 0 { 200 } else { 50 }])
        });
        checker.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().area(), 8);
    }

    #[test]
    fn load_mask_rejects_rgb() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3]))
            .save(&path)
            .unwrap();
        assert!(matches!(
            load_mask(&path),
            Err(MaskError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn load_mask_missing_file_is_unreadable() {
        assert!(matches!(
            load_mask(Path::new("/nonexistent/mask.png")),
            Err(MaskError::UnreadableFile { .. })
        ));
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut mask = GlottisMask::blank(5, 3);
        mask.set(1, 1, true);
        mask.set(4, 2, true);
        write_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn gaw_counts_pixels_per_frame() {
        let seq = MaskSequence::new(
            25.0,
            vec![rect_mask(10, 10, true), rect_mask(10, 10, false)],
        )
        .unwrap();
        let series = gaw(&seq);
        assert_eq!(series.label, "GAW");
        assert_eq!(series.values, vec![100.0, 0.0]);
    }

    #[test]
    fn prior_endpoint_values() {
        let inside = rect_mask(1, 1, true);
        let outside = rect_mask(1, 1, false);
        assert_eq!(diffusion_init_mean(&inside, 0.0).unwrap().mu[0], 0.0);
        assert_eq!(diffusion_init_mean(&outside, 0.0).unwrap().mu[0], 1e-3);
        let p = diffusion_init_mean(&inside, 0.3).unwrap();
        assert!((p.mu[0] - 0.3e-3).abs() < 1e-18);
    }

    #[test]
    fn prior_complement_identity() {
        let inside = rect_mask(1, 1, true);
        let outside = rect_mask(1, 1, false);
        for i in 0..=30 {
            let alpha = 0.01 * i as f64;
            let a = diffusion_init_mean(&inside, alpha).unwrap().mu[0];
            let b = diffusion_init_mean(&outside, alpha).unwrap().mu[0];
            assert!((a + b - 1e-3).abs() < 1e-18, "alpha {alpha}");
        }
    }

    #[test]
    fn prior_rejects_alpha_outside_sampled_range() {
        let mask = rect_mask(2, 2, true);
        assert!(matches!(
            diffusion_init_mean(&mask, 0.5),
            Err(MaskError::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            diffusion_init_mean(&mask, -0.01),
            Err(MaskError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn prior_raster_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prior.bin");
        let mut mask = GlottisMask::blank(3, 2);
        mask.set(0, 0, true);
        let prior = diffusion_init_mean(&mask, 0.1).unwrap();
        write_prior(&path, &prior).unwrap();
        let (rows, cols, data) = crate::io::read_f32_raster(&path).unwrap();
        assert_eq!((rows, cols), (2, 3));
        assert_eq!(data.len(), 6);
        assert!((data[0] as f64 - prior.mu[0]).abs() < 1e-9);
    }
}
