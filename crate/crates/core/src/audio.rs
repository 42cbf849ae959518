//! Audio spotting pipeline: spectrograms, sliding-window chunk scoring and
//! conversion of chunk decisions into vocalization segments.
//!
//! The chunk scorer is pluggable. [`VowelScorer`] is a self-contained DSP
//! stand-in that keys on the harmonic comb and low-band energy of a sustained
//! vowel; [`SidecarScorer`] replays scores produced by an external model so
//! the rest of the pipeline stays a pure function of that file.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TimeSegment;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("clip too short: {len} samples, need at least {needed}")]
    ClipTooShort { len: usize, needed: usize },
    #[error("too few spectrogram frames: {frames}, need at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("scorer failed on chunk {chunk_index}: {detail}")]
    ScorerFailure { chunk_index: usize, detail: String },
    #[error("audio clip must be non-empty with positive sample rate")]
    BadClip,
}

/// Mono audio samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() || sample_rate == 0 {
            return Err(AudioError::BadClip);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples whose time lies in `[segment.start_s, segment.end_s)`.
    pub fn slice_segment(&self, segment: &TimeSegment) -> Option<AudioClip> {
        let start = (segment.start_s * self.sample_rate as f64).round() as usize;
        let end = ((segment.end_s * self.sample_rate as f64).round() as usize)
            .min(self.samples.len());
        if start >= end {
            return None;
        }
        Some(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Dense time-frequency grid, row-major `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
    pub frame_hop_s: f64,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// One sliding-window decision: the chunk starting at `frame_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkDecision {
    pub frame_index: usize,
    pub posterior: f64,
}

fn default_n_fft() -> usize {
    1024
}
fn default_hop() -> usize {
    512
}
fn default_n_mels() -> usize {
    80
}
fn default_chunk_frames() -> usize {
    40
}
fn default_threshold() -> f64 {
    0.38
}
fn default_min_segment_s() -> f64 {
    0.3
}
fn default_max_gap_s() -> f64 {
    0.2
}
fn default_median_len() -> usize {
    5
}

/// Spotting parameters. Two analysis presets are in common use: the wide
/// 1024/512 frames of [`KwsConfig::default`] and the fine 400/64 frames of
/// [`KwsConfig::fine`]; neither is canonical, both are supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwsConfig {
    #[serde(default = "default_n_fft")]
    pub n_fft: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default = "default_n_mels")]
    pub n_mels: usize,
    #[serde(default = "default_chunk_frames")]
    pub chunk_frames: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_segment_s")]
    pub min_segment_s: f64,
    #[serde(default = "default_max_gap_s")]
    pub max_gap_s: f64,
    #[serde(default = "default_median_len")]
    pub median_len: usize,
}

impl Default for KwsConfig {
    fn default() -> Self {
        Self {
            n_fft: default_n_fft(),
            hop: default_hop(),
            n_mels: default_n_mels(),
            chunk_frames: default_chunk_frames(),
            threshold: default_threshold(),
            min_segment_s: default_min_segment_s(),
            max_gap_s: default_max_gap_s(),
            median_len: default_median_len(),
        }
    }
}

impl KwsConfig {
    /// Short-window preset (400-sample frames, 64-sample hop) for
    /// fine-grained segment boundaries.
    pub fn fine() -> Self {
        Self {
            n_fft: 400,
            hop: 64,
            ..Self::default()
        }
    }
}

/// Periodic Hann window of length `n`.
fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

enum FramePadding {
    None,
    /// Zero-pad `n_fft/2` samples on both ends so frame centers start at t=0.
    Centered,
}

fn stft_frames(
    clip: &AudioClip,
    cfg: &KwsConfig,
    padding: FramePadding,
) -> Result<Spectrogram, AudioError> {
    let padded: Vec<f64> = match padding {
        FramePadding::None => clip.samples.iter().map(|&s| s as f64).collect(),
        FramePadding::Centered => {
            let pad = cfg.n_fft / 2;
            let mut v = vec![0.0; pad];
            v.extend(clip.samples.iter().map(|&s| s as f64));
            v.extend(std::iter::repeat_n(0.0, pad));
            v
        }
    };
    if padded.len() < cfg.n_fft {
        return Err(AudioError::ClipTooShort {
            len: clip.samples.len(),
            needed: cfg.n_fft,
        });
    }
    let frames = 1 + (padded.len() - cfg.n_fft) / cfg.hop;
    let bins = cfg.n_fft / 2 + 1;
    let window = hann_window(cfg.n_fft);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.n_fft);

    let mut data = vec![0.0f64; frames * bins];
    data.par_chunks_mut(bins).enumerate().for_each(|(f, row)| {
        let start = f * cfg.hop;
        let mut buf: Vec<Complex<f64>> = padded[start..start + cfg.n_fft]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (b, out) in row.iter_mut().enumerate() {
            *out = buf[b].norm();
        }
    });

    Ok(Spectrogram {
        frames,
        bins,
        data,
        frame_hop_s: cfg.hop as f64 / clip.sample_rate as f64,
    })
}

/// Magnitude STFT with a periodic Hann window and no padding:
/// `frames = 1 + floor((len - n_fft) / hop)`, `bins = n_fft/2 + 1`.
pub fn stft_magnitude(clip: &AudioClip, cfg: &KwsConfig) -> Result<Spectrogram, AudioError> {
    stft_frames(clip, cfg, FramePadding::None)
}

/// Triangular mel filterbank on the HTK mel scale, peak-normalized to 1.
/// Rows are filters, columns are FFT bins.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    fn hz_to_mel(f: f64) -> f64 {
        2595.0 * (1.0 + f / 700.0).log10()
    }
    fn mel_to_hz(m: f64) -> f64 {
        700.0 * (10f64.powf(m / 2595.0) - 1.0)
    }
    let bins = n_fft / 2 + 1;
    let f_max = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|b| b as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    let rising = if mid > lo { (f - lo) / (mid - lo) } else { 0.0 };
                    let falling = if hi > mid { (hi - f) / (hi - mid) } else { 0.0 };
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect()
}

const LOG_FLOOR: f64 = 1e-10;

fn mel_from_spectrogram(spec: &Spectrogram, filters: &[Vec<f64>]) -> Spectrogram {
    let n_mels = filters.len();
    let mut data = vec![0.0f64; spec.frames * n_mels];
    data.par_chunks_mut(n_mels).enumerate().for_each(|(f, row)| {
        let frame = spec.frame(f);
        for (m, out) in row.iter_mut().enumerate() {
            let energy: f64 = frame
                .iter()
                .zip(&filters[m])
                .map(|(&mag, &w)| w * mag * mag)
                .sum();
            *out = energy.max(LOG_FLOOR).ln();
        }
    });
    Spectrogram {
        frames: spec.frames,
        bins: n_mels,
        data,
        frame_hop_s: spec.frame_hop_s,
    }
}

/// Log-mel spectrogram: mel filterbank applied to the power spectrum,
/// then natural log with floor 1e-10.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &KwsConfig) -> Result<Spectrogram, AudioError> {
    let spec = stft_magnitude(clip, cfg)?;
    let filters = mel_filterbank(cfg.n_mels, cfg.n_fft, clip.sample_rate);
    Ok(mel_from_spectrogram(&spec, &filters))
}

/// Log-mel with centered frames (zero padding), so the frame count is
/// `1 + floor(len / hop)` independent of the window size. Used for feature
/// export where a fixed frames-per-second is expected.
pub fn mel_spectrogram_centered(
    clip: &AudioClip,
    cfg: &KwsConfig,
) -> Result<Spectrogram, AudioError> {
    let spec = stft_frames(clip, cfg, FramePadding::Centered)?;
    let filters = mel_filterbank(cfg.n_mels, cfg.n_fft, clip.sample_rate);
    Ok(mel_from_spectrogram(&spec, &filters))
}

/// Borrowed view of one sliding-window chunk.
#[derive(Debug, Clone, Copy)]
pub struct ChunkView<'a> {
    /// Spectrogram frame the chunk starts at.
    pub frame_index: usize,
    pub frames: usize,
    pub bins: usize,
    /// Row-major `frames x bins` slice of the parent spectrogram.
    pub data: &'a [f64],
}

/// All unit-step sliding-window chunks: exactly `F - chunk_frames + 1`.
pub fn slide_chunks<'a>(
    spec: &'a Spectrogram,
    cfg: &KwsConfig,
) -> Result<Vec<ChunkView<'a>>, AudioError> {
    if spec.frames < cfg.chunk_frames {
        return Err(AudioError::TooFewFrames {
            frames: spec.frames,
            needed: cfg.chunk_frames,
        });
    }
    Ok((0..=spec.frames - cfg.chunk_frames)
        .map(|start| ChunkView {
            frame_index: start,
            frames: cfg.chunk_frames,
            bins: spec.bins,
            data: &spec.data[start * spec.bins..(start + cfg.chunk_frames) * spec.bins],
        })
        .collect())
}

/// Scores one chunk with a posterior in [0, 1].
pub trait ChunkScorer: Sync {
    fn score(&self, chunk: &ChunkView<'_>) -> Result<f64, String>;
}

/// Score every chunk. Scoring is parallel over chunks; output order and
/// content are independent of the evaluation order.
pub fn score_chunks(
    chunks: &[ChunkView<'_>],
    scorer: &dyn ChunkScorer,
) -> Result<Vec<ChunkDecision>, AudioError> {
    chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let posterior = scorer
                .score(chunk)
                .map_err(|detail| AudioError::ScorerFailure {
                    chunk_index: i,
                    detail,
                })?;
            if !(0.0..=1.0).contains(&posterior) {
                return Err(AudioError::ScorerFailure {
                    chunk_index: i,
                    detail: format!("posterior {posterior} outside [0,1]"),
                });
            }
            Ok(ChunkDecision {
                frame_index: chunk.frame_index,
                posterior,
            })
        })
        .collect()
}

/// Replays a `frame_index,posterior` sidecar file.
pub struct SidecarScorer {
    scores: HashMap<usize, f64>,
}

impl SidecarScorer {
    pub fn new(rows: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            scores: rows.into_iter().collect(),
        }
    }
}

impl ChunkScorer for SidecarScorer {
    fn score(&self, chunk: &ChunkView<'_>) -> Result<f64, String> {
        self.scores
            .get(&chunk.frame_index)
            .copied()
            .ok_or_else(|| format!("no sidecar score for frame_index {}", chunk.frame_index))
    }
}

/// Deterministic DSP stand-in for a trained vowel spotter.
///
/// The chunk's mean log-power spectrum of a sustained vowel carries a
/// harmonic comb with spacing equal to the fundamental. The normalized
/// autocorrelation of that envelope across the frequency axis peaks at the
/// comb spacing; the lag is restricted to spacings whose time-domain
/// equivalent period lies in [1/max_f0, 1/min_f0] (the pitch-period range).
/// The peak is weighted by the fraction of energy below `low_band_hz`, since
/// vowel energy is concentrated in the low band while broadband noise is not.
pub struct VowelScorer {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub min_f0_hz: f64,
    pub max_f0_hz: f64,
    pub low_band_hz: f64,
    /// The envelope autocorrelation only looks below this frequency, where
    /// the vowel harmonics live.
    pub env_band_hz: f64,
}

impl VowelScorer {
    pub fn new(sample_rate: u32, n_fft: usize) -> Self {
        Self {
            sample_rate,
            n_fft,
            min_f0_hz: 80.0,
            max_f0_hz: 400.0,
            low_band_hz: 1000.0,
            env_band_hz: 2000.0,
        }
    }

    /// Default decision threshold for this scorer (the trained-model
    /// threshold of 0.38 was calibrated for a different score scale).
    pub const OPERATING_THRESHOLD: f64 = 0.5;
}

impl ChunkScorer for VowelScorer {
    fn score(&self, chunk: &ChunkView<'_>) -> Result<f64, String> {
        let bins = chunk.bins;
        // Mean power spectrum over the chunk's frames.
        let mut power = vec![0.0f64; bins];
        for frame in chunk.data.chunks_exact(bins) {
            for (acc, &mag) in power.iter_mut().zip(frame) {
                *acc += mag * mag;
            }
        }
        let total: f64 = power.iter().sum();
        if total <= 1e-12 {
            return Ok(0.0);
        }

        let hz_per_bin = self.sample_rate as f64 / self.n_fft as f64;
        let low_bins = ((self.low_band_hz / hz_per_bin).floor() as usize + 1).min(bins);
        let low_ratio = power[..low_bins].iter().sum::<f64>() / total;

        // Log-compressed envelope over the harmonic band; without the
        // compression the fundamental dominates the correlation energy and
        // the comb peak washes out.
        let env_bins = (((self.env_band_hz / hz_per_bin).floor() as usize) + 1).min(bins);
        let floor = power[..env_bins].iter().cloned().fold(0.0f64, f64::max) * 1e-10;
        if floor == 0.0 {
            return Ok(0.0);
        }
        let envelope: Vec<f64> = power[..env_bins].iter().map(|&p| (p + floor).ln()).collect();
        let mean = envelope.iter().sum::<f64>() / env_bins as f64;
        let centered: Vec<f64> = envelope.iter().map(|&e| e - mean).collect();
        let r0: f64 = centered.iter().map(|&c| c * c).sum();
        if r0 <= 1e-18 {
            return Ok(0.0);
        }
        let lag_min = ((self.min_f0_hz / hz_per_bin).ceil() as usize).max(1);
        let lag_max = ((self.max_f0_hz / hz_per_bin).floor() as usize).min(env_bins - 1);
        let mut peak = 0.0f64;
        for lag in lag_min..=lag_max {
            let r: f64 = (0..env_bins - lag)
                .map(|b| centered[b] * centered[b + lag])
                .sum();
            peak = peak.max(r / r0);
        }
        Ok((peak * low_ratio).clamp(0.0, 1.0))
    }
}

/// Threshold, median-smooth and merge chunk decisions into segments.
///
/// Times are chunk start-frame indices mapped through `frame_hop_s`. Gaps of
/// at most `max_gap_s` are closed, then segments shorter than
/// `min_segment_s` are dropped.
pub fn decisions_to_vocal_segments(
    decisions: &[ChunkDecision],
    cfg: &KwsConfig,
    frame_hop_s: f64,
) -> Vec<TimeSegment> {
    let n = match decisions.iter().map(|d| d.frame_index).max() {
        Some(max) => max + 1,
        None => return Vec::new(),
    };
    let mut track = vec![false; n];
    for d in decisions {
        track[d.frame_index] = d.posterior > cfg.threshold;
    }
    let track = median_filter_bool(&track, cfg.median_len);

    // Runs -> segments.
    let mut segments: Vec<TimeSegment> = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=track.len() {
        let flag = i < track.len() && track[i];
        match (flag, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                segments.push(TimeSegment {
                    start_s: s as f64 * frame_hop_s,
                    end_s: i as f64 * frame_hop_s,
                });
                run_start = None;
            }
            _ => {}
        }
    }

    // Close gaps.
    let mut merged: Vec<TimeSegment> = Vec::new();
    for seg in segments {
        match merged.last_mut() {
            Some(prev) if seg.start_s - prev.end_s <= cfg.max_gap_s => prev.end_s = seg.end_s,
            _ => merged.push(seg),
        }
    }

    merged
        .into_iter()
        .filter(|s| s.duration_s() >= cfg.min_segment_s)
        .collect()
}

/// Majority filter over a centered window of `len` samples (window clamped
/// at the track edges). `len < 3` is a no-op.
fn median_filter_bool(track: &[bool], len: usize) -> Vec<bool> {
    if len < 3 || track.is_empty() {
        return track.to_vec();
    }
    let half = len / 2;
    (0..track.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(track.len());
            let trues = track[lo..hi].iter().filter(|&&f| f).count();
            2 * trues > hi - lo
        })
        .collect()
}
