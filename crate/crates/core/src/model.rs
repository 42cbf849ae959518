//! Shared domain types and interval arithmetic used by every pipeline stage.
//!
//! Coordinate conventions: image origin is top-left with y increasing
//! downward, so the "bottom" vertex of a mask is the one with maximal y.
//! Time intervals are half-open `[start, end)` seconds so that adjacent
//! segments concatenate without overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors for domain-type construction.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("segment end {end_s} must be greater than start {start_s}")]
    EmptySegment { start_s: f64, end_s: f64 },
    #[error("fps must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("mask dimensions must be positive (got {width}x{height})")]
    EmptyMask { width: usize, height: usize },
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    PixelCountMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Half-open time interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSegment {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSegment {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, ModelError> {
        if !(end_s > start_s) || start_s < 0.0 {
            return Err(ModelError::EmptySegment { start_s, end_s });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn overlaps(&self, other: &TimeSegment) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }

    /// Intersection-over-union of two intervals; 0 when disjoint.
    pub fn iou(&self, other: &TimeSegment) -> f64 {
        let inter = (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0);
        let union = self.duration_s() + other.duration_s() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Classification of a segment track in the segments JSON schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Vocalization,
    Strobe,
    Highlight,
}

/// One record of the on-disk segments JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: SegmentKind,
}

/// Top-level segments JSON document: `{"segments":[...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentFile {
    pub segments: Vec<SegmentRecord>,
}

impl SegmentFile {
    pub fn from_segments(segments: &[TimeSegment], kind: SegmentKind) -> Self {
        Self {
            segments: segments
                .iter()
                .map(|s| SegmentRecord {
                    start_s: s.start_s,
                    end_s: s.end_s,
                    kind,
                })
                .collect(),
        }
    }
}

/// Boolean per-frame track at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMask {
    pub fps: f64,
    pub flags: Vec<bool>,
}

impl FrameMask {
    pub fn new(fps: f64, flags: Vec<bool>) -> Result<Self, ModelError> {
        if !(fps > 0.0) {
            return Err(ModelError::NonPositiveFps(fps));
        }
        Ok(Self { fps, flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Logical negation, frame by frame.
    pub fn invert(&self) -> FrameMask {
        FrameMask {
            fps: self.fps,
            flags: self.flags.iter().map(|f| !f).collect(),
        }
    }
}

/// Maximal runs of `true` flags become half-open segments at frame resolution.
pub fn frames_to_segments(mask: &FrameMask) -> Vec<TimeSegment> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &flag) in mask.flags.iter().enumerate() {
        match (flag, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(TimeSegment {
                    start_s: s as f64 / mask.fps,
                    end_s: i as f64 / mask.fps,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        out.push(TimeSegment {
            start_s: s as f64 / mask.fps,
            end_s: mask.flags.len() as f64 / mask.fps,
        });
    }
    out
}

/// Inverse of [`frames_to_segments`]: a frame is flagged when its center time
/// falls inside any segment. Lossless for segments aligned to frame boundaries.
pub fn segments_to_frames(segments: &[TimeSegment], fps: f64, n_frames: usize) -> FrameMask {
    let mut flags = vec![false; n_frames];
    for seg in segments {
        for (i, flag) in flags.iter_mut().enumerate() {
            let mid = (i as f64 + 0.5) / fps;
            if mid >= seg.start_s && mid < seg.end_s {
                *flag = true;
            }
        }
    }
    FrameMask { fps, flags }
}

/// Exact interval intersection of two sorted, pairwise-disjoint segment lists.
pub fn intersect_segments(a: &[TimeSegment], b: &[TimeSegment]) -> Vec<TimeSegment> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let start = a[i].start_s.max(b[j].start_s);
        let end = a[i].end_s.min(b[j].end_s);
        if end > start {
            out.push(TimeSegment {
                start_s: start,
                end_s: end,
            });
        }
        if a[i].end_s <= b[j].end_s {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Binary raster of the glottal region for one frame. Row-major, y downward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlottisMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl GlottisMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyMask { width, height });
        }
        if pixels.len() != width * height {
            return Err(ModelError::PixelCountMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.pixels[y * self.width + x] = value;
    }

    /// Membership test for real-valued coordinates: nearest pixel center,
    /// false outside the raster bounds.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let xi = x.round();
        let yi = y.round();
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }

    /// Count of true pixels.
    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Horizontal flip: pixel (x, y) maps to (width-1-x, y).
    pub fn mirror_horizontal(&self) -> GlottisMask {
        let mut out = GlottisMask::blank(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(self.width - 1 - x, y, true);
                }
            }
        }
        out
    }
}

/// Sub-pixel image point; x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Per-level glottal angles in degrees, one pair per usable level.
///
/// `levels[i]` is the 1-based level index the i-th entry belongs to; levels
/// whose orthogonal probe failed are absent. A full set has `N-1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSet {
    pub levels: Vec<usize>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl AngleSet {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// One named per-frame series (an angle channel, the area waveform, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesChannel {
    pub label: String,
    pub values: Vec<f64>,
}

impl SeriesChannel {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}
