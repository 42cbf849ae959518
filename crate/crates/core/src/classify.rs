//! Variance-based left/right paralysis lateralization and feature export.
//!
//! The paralyzed fold moves less during phonation, so its angle-deviation
//! channels are smoother: the side whose channels have the lower mean
//! variance is called. Verdicts carry an explicit relative margin and
//! abstain (Indeterminate) when the margin is below `delta`, since a raw
//! argmin on near-equal variances would be noise-driven.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{mel_spectrogram_centered, AudioClip, KwsConfig};
use crate::geometry::VFDynSeries;
use crate::io;
use crate::model::SeriesChannel;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("insufficient valid frames: {0}, need at least 2")]
    InsufficientFrames(usize),
    #[error("feature write failed: {0}")]
    WriteFailure(#[from] io::IoError),
    #[error("audio error during export: {0}")]
    Audio(#[from] crate::audio::AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Indeterminate,
}

/// Lateralization verdict with the variance evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideVerdict {
    pub side: Side,
    pub var_left: f64,
    pub var_right: f64,
    /// |var_left - var_right| / max(var_left, var_right, eps).
    pub margin: f64,
    pub valid_frames: usize,
}

const VAR_EPS: f64 = 1e-12;

/// Default abstention margin.
pub const DEFAULT_DELTA: f64 = 0.05;

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

fn mean_channel_variance(channels: &[SeriesChannel], validity: &[bool]) -> f64 {
    let per_channel: Vec<f64> = channels
        .iter()
        .map(|ch| {
            population_variance(
                ch.values
                    .iter()
                    .zip(validity)
                    .filter(|(_, &valid)| valid)
                    .map(|(&v, _)| v),
            )
        })
        .collect();
    per_channel.iter().sum::<f64>() / per_channel.len().max(1) as f64
}

fn verdict_from_variances(
    var_left: f64,
    var_right: f64,
    valid_frames: usize,
    delta: f64,
) -> SideVerdict {
    let margin = (var_left - var_right).abs() / var_left.max(var_right).max(VAR_EPS);
    let side = if margin < delta {
        Side::Indeterminate
    } else if var_left < var_right {
        // Lower variance = smoother sequence = the paralyzed side.
        Side::Left
    } else {
        Side::Right
    };
    SideVerdict {
        side,
        var_left,
        var_right,
        margin,
        valid_frames,
    }
}

/// Per-level channel variance over valid frames only, averaged per side,
/// then compared. `delta` is the relative margin below which the verdict
/// abstains.
pub fn side_verdict(series: &VFDynSeries, delta: f64) -> Result<SideVerdict, ClassifyError> {
    let valid_frames = series.valid_frames();
    if valid_frames < 2 {
        return Err(ClassifyError::InsufficientFrames(valid_frames));
    }
    let var_left = mean_channel_variance(&series.left, &series.frame_validity);
    let var_right = mean_channel_variance(&series.right, &series.frame_validity);
    Ok(verdict_from_variances(var_left, var_right, valid_frames, delta))
}

/// Pool verdicts across highlights: variances are averaged weighted by
/// valid-frame count, then the side rule is re-applied.
pub fn aggregate_verdicts(
    per_highlight: &[SideVerdict],
    delta: f64,
) -> Result<SideVerdict, ClassifyError> {
    let total: usize = per_highlight.iter().map(|v| v.valid_frames).sum();
    if per_highlight.is_empty() || total == 0 {
        return Err(ClassifyError::InsufficientFrames(0));
    }
    let w = |v: &SideVerdict| v.valid_frames as f64 / total as f64;
    let var_left = per_highlight.iter().map(|v| w(v) * v.var_left).sum();
    let var_right = per_highlight.iter().map(|v| w(v) * v.var_right).sum();
    Ok(verdict_from_variances(var_left, var_right, total, delta))
}

/// Optional diagnosis label attached to exported features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VfpLabel {
    Normal,
    LeftVfp,
    RightVfp,
}

/// Everything exported for one highlight.
#[derive(Debug, Clone)]
pub struct HighlightFeatures {
    pub id: String,
    pub audio: AudioClip,
    pub vfdyn: VFDynSeries,
    pub label: Option<VfpLabel>,
}

/// Aligned per-highlight features for one exam.
#[derive(Debug, Clone, Default)]
pub struct FeatureBundle {
    pub highlights: Vec<HighlightFeatures>,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub mel_file: String,
    pub vfdyn_file: String,
    /// Video frames covered by the angle channels.
    pub frames: usize,
    pub n_levels: usize,
    pub label: Option<VfpLabel>,
}

/// Manifest JSON document listing the exported files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub highlights: Vec<ManifestEntry>,
}

/// Mel settings for exported audio features: 64 bands, 32 ms window,
/// 10 ms hop, centered frames.
pub fn export_mel_config(sample_rate: u32) -> KwsConfig {
    KwsConfig {
        n_fft: (0.032 * sample_rate as f64).round() as usize,
        hop: (0.010 * sample_rate as f64).round() as usize,
        n_mels: 64,
        ..KwsConfig::default()
    }
}

/// Write per-highlight log-mel rasters and angle-series CSVs plus the
/// manifest (written last, once every row succeeded).
pub fn export_features(bundle: &FeatureBundle, out_dir: &Path) -> Result<Manifest, ClassifyError> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        ClassifyError::WriteFailure(io::IoError::Unwritable {
            path: out_dir.to_path_buf(),
            source: e,
        })
    })?;
    let mut entries = Vec::with_capacity(bundle.highlights.len());
    for h in &bundle.highlights {
        let mel_cfg = export_mel_config(h.audio.sample_rate);
        let mel = mel_spectrogram_centered(&h.audio, &mel_cfg)?;
        let mel_file = format!("mel_{}.bin", h.id);
        io::write_f32_raster(
            &out_dir.join(&mel_file),
            mel.frames as u32,
            mel.bins as u32,
            &mel.data,
        )?;

        let vfdyn_file = format!("vfdyn_{}.csv", h.id);
        let channels: Vec<SeriesChannel> = h
            .vfdyn
            .left
            .iter()
            .chain(h.vfdyn.right.iter())
            .cloned()
            .collect();
        io::write_series_csv(
            &out_dir.join(&vfdyn_file),
            &channels,
            Some(&h.vfdyn.frame_validity),
        )?;

        entries.push(ManifestEntry {
            id: h.id.clone(),
            mel_file,
            vfdyn_file,
            frames: h.vfdyn.frame_validity.len(),
            n_levels: h.vfdyn.n_levels,
            label: h.label,
        });
    }
    let manifest = Manifest {
        highlights: entries,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Rebuild a [`VFDynSeries`] from an exported CSV (LK/RK channel labels plus
/// the validity column).
pub fn vfdyn_from_csv(path: &Path) -> Result<VFDynSeries, io::IoError> {
    let (channels, validity) = io::read_series_csv(path)?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for ch in channels {
        if ch.label.starts_with('L') {
            left.push(ch);
        } else if ch.label.starts_with('R') {
            right.push(ch);
        }
        // Other columns (GAW, ...) are not angle channels.
    }
    let n_frames = left
        .first()
        .or(right.first())
        .map(|c| c.values.len())
        .unwrap_or(0);
    let frame_validity = validity.unwrap_or_else(|| vec![true; n_frames]);
    Ok(VFDynSeries {
        n_levels: left.len() + 1,
        left,
        right,
        frame_validity,
    })
}
