//! Frame-level HSV analysis, strobe-segment selection and highlight assembly.
//!
//! Strobe-lit footage alternates brightness frame to frame, so within each
//! non-empty stretch of video we count direction reversals of the chosen HSV
//! channel and pick the stretch with the most. Empty (black) frames separate
//! the stretches; fold visibility comes from a detection sidecar or from the
//! mask areas themselves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::MaskSequence;
use crate::model::{frames_to_segments, intersect_segments, FrameMask, TimeSegment};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("sequence too short: {len} values, need at least 3")]
    SequenceTooShort { len: usize },
    #[error("no non-empty segment with at least 3 frames")]
    NoEligibleSegment,
    #[error("detection sidecar missing entry for frame {frame}")]
    MissingFrameEntry { frame: usize },
    #[error("frame series must be non-empty, same-sized frames, positive fps")]
    BadFrameSeries,
}

/// One decoded RGB frame, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbFrame {
    /// Solid-color frame.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }
}

/// Ordered decoded video frames at a fixed frame rate.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    pub fps: f64,
    pub frames: Vec<RgbFrame>,
}

impl FrameSeries {
    pub fn new(fps: f64, frames: Vec<RgbFrame>) -> Result<Self, VideoError> {
        if !(fps > 0.0) || frames.is_empty() {
            return Err(VideoError::BadFrameSeries);
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(VideoError::BadFrameSeries);
        }
        Ok(Self { fps, frames })
    }
}

/// Per-frame mean hue, saturation and value, each scaled to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsvTrack {
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

/// Which HSV channel drives fluctuation analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HsvChannel {
    Hue,
    Saturation,
    #[default]
    Value,
}

impl HsvTrack {
    pub fn channel(&self, which: HsvChannel) -> &[f64] {
        match which {
            HsvChannel::Hue => &self.h,
            HsvChannel::Saturation => &self.s,
            HsvChannel::Value => &self.v,
        }
    }
}

/// Standard RGB -> HSV; hue in [0, 360) scaled to [0, 1].
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let r = r as f64 / 255.0;
    let g = g as f64 / 255.0;
    let b = b as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        let h = 60.0 * (((g - b) / delta) % 6.0);
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h / 360.0, s, max)
}

/// Per-frame arithmetic means of H, S and V.
pub fn hsv_track(video: &FrameSeries) -> HsvTrack {
    let means: Vec<(f64, f64, f64)> = video
        .frames
        .par_iter()
        .map(|frame| {
            let mut acc = (0.0f64, 0.0f64, 0.0f64);
            for px in frame.data.chunks_exact(3) {
                let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
                acc.0 += h;
                acc.1 += s;
                acc.2 += v;
            }
            let n = (frame.width * frame.height) as f64;
            (acc.0 / n, acc.1 / n, acc.2 / n)
        })
        .collect();
    HsvTrack {
        h: means.iter().map(|m| m.0).collect(),
        s: means.iter().map(|m| m.1).collect(),
        v: means.iter().map(|m| m.2).collect(),
    }
}

/// Frames whose mean value falls below `eps_empty` are flagged empty.
pub fn empty_frame_mask(track: &HsvTrack, fps: f64, eps_empty: f64) -> FrameMask {
    FrameMask {
        fps,
        flags: track.v.iter().map(|&v| v < eps_empty).collect(),
    }
}

/// Maximal runs of non-empty frames.
pub fn split_nonempty(empty: &FrameMask) -> Vec<TimeSegment> {
    frames_to_segments(&empty.invert())
}

/// Signed fluctuation statistic of a value sequence.
///
/// `f_t` sums the sign of the product of consecutive first differences with
/// `sgn(0) = 0`; `reversals` counts the strictly negative products (direction
/// changes). For a sequence of `m` values there are `m - 2` terms.
pub fn fluctuation_f(values: &[f64]) -> Result<(f64, usize), VideoError> {
    if values.len() < 3 {
        return Err(VideoError::SequenceTooShort { len: values.len() });
    }
    let mut f_t = 0.0;
    let mut reversals = 0usize;
    for w in values.windows(3) {
        let product = (w[1] - w[0]) * (w[2] - w[1]);
        if product > 0.0 {
            f_t += 1.0;
        } else if product < 0.0 {
            f_t -= 1.0;
            reversals += 1;
        }
    }
    Ok((f_t, reversals))
}

/// Per-segment fluctuation report and the selected strobe segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrobeReport {
    pub nonempty_segments: Vec<TimeSegment>,
    pub f_t_values: Vec<f64>,
    pub reversal_counts: Vec<usize>,
    pub selected: TimeSegment,
}

/// Score every non-empty segment on the chosen channel and select the one
/// with the most reversals; ties go to the longer, then earlier segment.
/// Segments shorter than 3 frames are reported with zero counts but are not
/// eligible for selection.
pub fn select_strobe(
    track: &HsvTrack,
    segments: &[TimeSegment],
    fps: f64,
    channel: HsvChannel,
) -> Result<StrobeReport, VideoError> {
    let values = track.channel(channel);
    let mut f_t_values = Vec::with_capacity(segments.len());
    let mut reversal_counts = Vec::with_capacity(segments.len());
    let mut best: Option<(usize, usize, usize)> = None; // (reversals, frames, index)
    for (i, seg) in segments.iter().enumerate() {
        let start = (seg.start_s * fps).round() as usize;
        let end = ((seg.end_s * fps).round() as usize).min(values.len());
        let frames = end.saturating_sub(start);
        let (f_t, reversals) = if frames >= 3 {
            fluctuation_f(&values[start..end])?
        } else {
            (0.0, 0)
        };
        f_t_values.push(f_t);
        reversal_counts.push(reversals);
        if frames >= 3 {
            let candidate = (reversals, frames, i);
            best = Some(match best {
                None => candidate,
                Some(cur) => {
                    // More reversals wins, then longer, then earlier.
                    if candidate.0 > cur.0
                        || (candidate.0 == cur.0 && candidate.1 > cur.1)
                        || (candidate.0 == cur.0 && candidate.1 == cur.1 && candidate.2 < cur.2)
                    {
                        candidate
                    } else {
                        cur
                    }
                }
            });
        }
    }
    let best = best.ok_or(VideoError::NoEligibleSegment)?;
    Ok(StrobeReport {
        nonempty_segments: segments.to_vec(),
        f_t_values,
        reversal_counts,
        selected: segments[best.2],
    })
}

/// Presence track from a `frame,confidence` detection sidecar. Every frame in
/// `[0, n_frames)` must have an entry.
pub fn presence_from_detections(
    rows: &[(usize, f64)],
    n_frames: usize,
    fps: f64,
    threshold: f64,
) -> Result<FrameMask, VideoError> {
    let mut flags = vec![None; n_frames];
    for &(frame, confidence) in rows {
        if frame < n_frames {
            flags[frame] = Some(confidence >= threshold);
        }
    }
    let flags = flags
        .into_iter()
        .enumerate()
        .map(|(frame, f)| f.ok_or(VideoError::MissingFrameEntry { frame }))
        .collect::<Result<Vec<bool>, _>>()?;
    Ok(FrameMask { fps, flags })
}

/// Presence track from per-frame masks: present when the mask area reaches
/// `min_area` pixels.
pub fn presence_from_masks(seq: &MaskSequence, min_area: usize) -> FrameMask {
    FrameMask {
        fps: seq.fps,
        flags: seq.masks.iter().map(|m| m.area() >= min_area).collect(),
    }
}

/// A reviewable interval: phonation with visible folds, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightSegment {
    #[serde(flatten)]
    pub span: TimeSegment,
    /// Came from a detected vocalization segment.
    pub vocalization: bool,
    /// Overlaps the selected strobe-lit segment.
    pub strobe: bool,
}

/// Top-level highlights JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighlightFile {
    pub highlights: Vec<HighlightSegment>,
}

/// Intersect vocalization segments with fold-presence runs, drop results
/// shorter than `min_len_s` and annotate strobe overlap.
pub fn assemble_highlights(
    vocal: &[TimeSegment],
    presence: &FrameMask,
    strobe: Option<&TimeSegment>,
    min_len_s: f64,
) -> Vec<HighlightSegment> {
    let presence_runs = frames_to_segments(presence);
    intersect_segments(vocal, &presence_runs)
        .into_iter()
        .filter(|s| s.duration_s() >= min_len_s)
        .map(|span| HighlightSegment {
            span,
            vocalization: true,
            strobe: strobe.map(|st| st.overlaps(&span)).unwrap_or(false),
        })
        .collect()
}
