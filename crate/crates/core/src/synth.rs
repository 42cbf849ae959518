//! Deterministic synthetic fixtures with analytic ground truth.
//!
//! Every generator is a pure function of its [`SynthSpec`]: randomness comes
//! from a ChaCha8 stream seeded with the spec's integer seed, so identical
//! specs produce byte-identical artifacts on every platform. Shapes are
//! rasterized by a pixel-center membership test (no anti-aliasing) so the
//! analytic tolerances stay computable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::classify::Side;
use crate::mask::MaskSequence;
use crate::model::{GlottisMask, TimeSegment};
use crate::video::{FrameSeries, RgbFrame};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth params: {0}")]
    BadParams(String),
}

fn bad(msg: impl Into<String>) -> SynthError {
    SynthError::BadParams(msg.into())
}

/// Generator selector plus its parameters; `{"seed":..,"kind":..,"params":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(flatten)]
    pub kind: SynthKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SynthKind {
    EllipseMask(EllipseParams),
    TeardropMask(TeardropParams),
    OscSequence(OscParams),
    StrobeVideo(StrobeParams),
    VowelAudio(VowelParams),
    Exam(ExamParams),
}

/// Machine-readable ground truth emitted alongside every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    EllipseMask {
        area: f64,
        /// Midline direction as degrees from the downward +y axis.
        axis_deg: f64,
        center: (f64, f64),
        semi_minor: f64,
        semi_major: f64,
    },
    TeardropMask {
        apex: (f64, f64),
        half_angle_deg: f64,
        circle_center: (f64, f64),
        radius: f64,
        /// Below this y the boundary is the straight cone edge.
        tangency_y: f64,
    },
    OscSequence {
        paralyzed: Side,
        fps: f64,
        /// Analytic open area per frame.
        areas: Vec<f64>,
    },
    StrobeVideo {
        fps: f64,
        nonempty_segments: Vec<TimeSegment>,
        strobe_index: usize,
        strobe_segment: TimeSegment,
        /// Frames in the strobe segment.
        strobe_frames: usize,
    },
    VowelAudio {
        segments: Vec<TimeSegment>,
        tone_rms: f64,
        sample_rate: u32,
    },
    Exam {
        highlights: Vec<TimeSegment>,
        vocal_segments: Vec<TimeSegment>,
        visible_segments: Vec<TimeSegment>,
        strobe_segment: TimeSegment,
        paralyzed: Side,
        fps: f64,
    },
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Rotated ellipse; `rotation_deg` tilts the major axis away from vertical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub width: usize,
    pub height: usize,
    pub center_x: f64,
    pub center_y: f64,
    /// Semi-axis along image x before rotation (the lateral half-width).
    pub semi_minor: f64,
    /// Semi-axis along image y before rotation (the vertical half-height).
    pub semi_major: f64,
    pub rotation_deg: f64,
}

/// Circle with two tangent edges meeting at a bottom apex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeardropParams {
    pub width: usize,
    pub height: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    /// Full opening angle at the apex, degrees.
    pub apex_angle_deg: f64,
}

pub fn gen_ellipse_mask(p: &EllipseParams) -> Result<(GlottisMask, GroundTruth), SynthError> {
    if p.semi_minor <= 0.0 || p.semi_major <= 0.0 {
        return Err(bad(format!(
            "ellipse semi-axes must be positive ({}, {})",
            p.semi_minor, p.semi_major
        )));
    }
    if p.width == 0 || p.height == 0 {
        return Err(bad("ellipse canvas must be non-empty"));
    }
    let theta = p.rotation_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let mut mask = GlottisMask::blank(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let dx = x as f64 - p.center_x;
            let dy = y as f64 - p.center_y;
            // Into the ellipse frame (major axis vertical).
            let u = cos_t * dx - sin_t * dy;
            let v = sin_t * dx + cos_t * dy;
            let q = (u / p.semi_minor).powi(2) + (v / p.semi_major).powi(2);
            if q <= 1.0 {
                mask.set(x, y, true);
            }
        }
    }
    Ok((
        mask,
        GroundTruth::EllipseMask {
            area: std::f64::consts::PI * p.semi_minor * p.semi_major,
            axis_deg: p.rotation_deg,
            center: (p.center_x, p.center_y),
            semi_minor: p.semi_minor,
            semi_major: p.semi_major,
        },
    ))
}

/// Analytic half-chord of the (unrotated) ellipse at height `y`.
pub fn ellipse_half_chord(p: &EllipseParams, y: f64) -> f64 {
    let rel = (y - p.center_y) / p.semi_major;
    if rel.abs() >= 1.0 {
        0.0
    } else {
        p.semi_minor * (1.0 - rel * rel).sqrt()
    }
}

pub fn gen_teardrop_mask(p: &TeardropParams) -> Result<(GlottisMask, GroundTruth), SynthError> {
    if p.radius <= 0.0 {
        return Err(bad("teardrop radius must be positive"));
    }
    if !(1.0..180.0).contains(&p.apex_angle_deg) {
        return Err(bad("teardrop apex angle must be in (1, 180) degrees"));
    }
    let phi = (p.apex_angle_deg / 2.0).to_radians();
    let apex_dist = p.radius / phi.sin();
    let apex_y = p.center_y + apex_dist;
    let tangency_y = p.center_y + p.radius * phi.sin();
    let tan_phi = phi.tan();
    let mut mask = GlottisMask::blank(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let dx = x as f64 - p.center_x;
            let dy = y as f64 - p.center_y;
            let in_circle = dx * dx + dy * dy <= p.radius * p.radius;
            let yy = y as f64;
            let in_cone =
                yy >= tangency_y && yy <= apex_y && dx.abs() <= (apex_y - yy) * tan_phi;
            if in_circle || in_cone {
                mask.set(x, y, true);
            }
        }
    }
    Ok((
        mask,
        GroundTruth::TeardropMask {
            apex: (p.center_x, apex_y),
            half_angle_deg: p.apex_angle_deg / 2.0,
            circle_center: (p.center_x, p.center_y),
            radius: p.radius,
            tangency_y,
        },
    ))
}

// ---------------------------------------------------------------------------
// Oscillating mask sequence
// ---------------------------------------------------------------------------

/// Lens-shaped opening whose lateral boundaries oscillate independently.
///
/// Half-width profile along y is a half sine (pointed at both ends); the
/// left boundary swings with `amp_left`, the right with `amp_right`. The
/// smaller amplitude is the "paralyzed" side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub center_x: f64,
    pub y_top: f64,
    pub y_bottom: f64,
    /// Baseline half-width at mid-height, pixels.
    pub base_halfwidth: f64,
    pub amp_left: f64,
    pub amp_right: f64,
    /// Oscillation frequency in cycles per second.
    pub freq_hz: f64,
    pub phase_left: f64,
    pub phase_right: f64,
    /// Std-dev of per-frame multiplicative width noise (0 = none).
    pub noise_std: f64,
}

impl Default for OscParams {
    fn default() -> Self {
        Self {
            width: 120,
            height: 160,
            frames: 60,
            fps: 25.0,
            center_x: 59.5,
            y_top: 15.0,
            y_bottom: 145.0,
            base_halfwidth: 18.0,
            amp_left: 0.0,
            amp_right: 8.0,
            freq_hz: 2.0,
            phase_left: 0.0,
            phase_right: 0.0,
            noise_std: 0.0,
        }
    }
}

pub fn gen_osc_sequence(
    p: &OscParams,
    seed: u64,
) -> Result<(MaskSequence, GroundTruth), SynthError> {
    if p.frames == 0 || !(p.fps > 0.0) {
        return Err(bad("osc sequence needs frames > 0 and fps > 0"));
    }
    if p.y_bottom <= p.y_top || p.base_halfwidth <= 0.0 {
        return Err(bad("osc sequence geometry is degenerate"));
    }
    if p.amp_left < 0.0 || p.amp_right < 0.0 {
        return Err(bad("osc amplitudes must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = p.y_bottom - p.y_top;
    let mut masks = Vec::with_capacity(p.frames);
    let mut areas = Vec::with_capacity(p.frames);
    for f in 0..p.frames {
        let t = f as f64 / p.fps;
        let osc = |phase: f64| 0.5 * (1.0 + (2.0 * std::f64::consts::PI * p.freq_hz * t + phase).sin());
        let jitter_l = 1.0 + p.noise_std * standard_normal(&mut rng);
        let jitter_r = 1.0 + p.noise_std * standard_normal(&mut rng);
        let w_left = (p.base_halfwidth + p.amp_left * osc(p.phase_left)) * jitter_l.max(0.1);
        let w_right = (p.base_halfwidth + p.amp_right * osc(p.phase_right)) * jitter_r.max(0.1);
        let mut mask = GlottisMask::blank(p.width, p.height);
        for y in 0..p.height {
            let rel = (y as f64 - p.y_top) / span;
            if !(0.0..=1.0).contains(&rel) {
                continue;
            }
            let profile = (std::f64::consts::PI * rel).sin();
            let left = p.center_x - w_left * profile;
            let right = p.center_x + w_right * profile;
            for x in 0..p.width {
                let xf = x as f64;
                if xf >= left && xf <= right {
                    mask.set(x, y, true);
                }
            }
        }
        masks.push(mask);
        // Integral of (w_left + w_right) * sin(pi * rel) over y: span * 2/pi.
        areas.push((w_left + w_right) * span * 2.0 / std::f64::consts::PI);
    }
    let paralyzed = if p.amp_left < p.amp_right {
        Side::Left
    } else if p.amp_right < p.amp_left {
        Side::Right
    } else {
        Side::Indeterminate
    };
    let seq = MaskSequence::new(p.fps, masks).map_err(|e| bad(e.to_string()))?;
    Ok((
        seq,
        GroundTruth::OscSequence {
            paralyzed,
            fps: p.fps,
            areas,
        },
    ))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniform draws.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Strobe video
// ---------------------------------------------------------------------------

/// Five-part exam video: steady, black gap, strictly alternating strobe,
/// black gap, steady.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrobeParams {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub steady_frames: usize,
    pub gap_frames: usize,
    pub strobe_frames: usize,
    pub tail_frames: usize,
    /// Steady brightness in [0, 1].
    pub bright: f64,
    /// Strobe alternation half-amplitude in [0, 1].
    pub delta: f64,
}

impl Default for StrobeParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 24,
            fps: 25.0,
            steady_frames: 30,
            gap_frames: 5,
            strobe_frames: 40,
            tail_frames: 20,
            bright: 0.6,
            delta: 0.25,
        }
    }
}

pub fn gen_strobe_video(p: &StrobeParams) -> Result<(FrameSeries, GroundTruth), SynthError> {
    if !(p.fps > 0.0) || p.width == 0 || p.height == 0 {
        return Err(bad("strobe video needs positive fps and dimensions"));
    }
    if p.gap_frames < 3 {
        return Err(bad("gap must be at least 3 frames"));
    }
    if p.steady_frames < 3 || p.strobe_frames < 3 || p.tail_frames < 3 {
        return Err(bad("every visible part needs at least 3 frames"));
    }
    if !(0.0..=1.0).contains(&p.bright) || p.delta <= 0.0 {
        return Err(bad("bright must be in [0,1] and delta positive"));
    }
    let gray = |v: f64| {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbFrame::filled(p.width, p.height, [g, g, g])
    };
    let strobe_level = |i: usize| {
        let v = if i.is_multiple_of(2) {
            p.bright + p.delta
        } else {
            p.bright - p.delta
        };
        v.clamp(0.02, 1.0) // never collapse a strobe frame into "empty"
    };
    let mut frames = Vec::new();
    frames.extend((0..p.steady_frames).map(|_| gray(p.bright)));
    frames.extend((0..p.gap_frames).map(|_| gray(0.0)));
    frames.extend((0..p.strobe_frames).map(|i| gray(strobe_level(i))));
    frames.extend((0..p.gap_frames).map(|_| gray(0.0)));
    frames.extend((0..p.tail_frames).map(|_| gray(p.bright)));

    let t = |f: usize| f as f64 / p.fps;
    let s0 = TimeSegment {
        start_s: 0.0,
        end_s: t(p.steady_frames),
    };
    let strobe_start = p.steady_frames + p.gap_frames;
    let s1 = TimeSegment {
        start_s: t(strobe_start),
        end_s: t(strobe_start + p.strobe_frames),
    };
    let tail_start = strobe_start + p.strobe_frames + p.gap_frames;
    let s2 = TimeSegment {
        start_s: t(tail_start),
        end_s: t(tail_start + p.tail_frames),
    };
    let series = FrameSeries::new(p.fps, frames).map_err(|e| bad(e.to_string()))?;
    Ok((
        series,
        GroundTruth::StrobeVideo {
            fps: p.fps,
            nonempty_segments: vec![s0, s1, s2],
            strobe_index: 1,
            strobe_segment: s1,
            strobe_frames: p.strobe_frames,
        },
    ))
}

// ---------------------------------------------------------------------------
// Vowel audio
// ---------------------------------------------------------------------------

/// Harmonic vowel bursts (decaying-amplitude harmonic complex) gated by the
/// given segments, over optional white background noise at a fixed SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VowelParams {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub f0_hz: f64,
    pub n_harmonics: usize,
    /// RMS of the tone while a segment is active.
    pub tone_rms: f64,
    /// Tone-to-noise ratio in dB; `None` disables background noise.
    pub noise_snr_db: Option<f64>,
    pub segments: Vec<TimeSegment>,
}

impl Default for VowelParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            duration_s: 10.0,
            f0_hz: 200.0,
            n_harmonics: 5,
            tone_rms: 0.2,
            noise_snr_db: Some(10.0),
            segments: vec![
                TimeSegment {
                    start_s: 2.0,
                    end_s: 4.0,
                },
                TimeSegment {
                    start_s: 7.0,
                    end_s: 9.0,
                },
            ],
        }
    }
}

pub fn gen_vowel_audio(
    p: &VowelParams,
    seed: u64,
) -> Result<(AudioClip, GroundTruth), SynthError> {
    if p.sample_rate == 0 || !(p.duration_s > 0.0) {
        return Err(bad("vowel audio needs positive sample rate and duration"));
    }
    if p.f0_hz <= 0.0 || p.n_harmonics == 0 {
        return Err(bad("vowel audio needs positive f0 and harmonics"));
    }
    for seg in &p.segments {
        if seg.end_s <= seg.start_s || seg.end_s > p.duration_s {
            return Err(bad(format!(
                "segment ({}, {}) outside clip of {} s",
                seg.start_s, seg.end_s, p.duration_s
            )));
        }
    }
    let n = (p.duration_s * p.sample_rate as f64).round() as usize;
    // Unit-amplitude harmonic complex has RMS sqrt(sum (1/h)^2 / 2).
    let unit_rms = ((1..=p.n_harmonics)
        .map(|h| 1.0 / (h * h) as f64)
        .sum::<f64>()
        / 2.0)
        .sqrt();
    let gain = p.tone_rms / unit_rms;
    let noise_rms = p
        .noise_snr_db
        .map(|snr| p.tone_rms * 10f64.powf(-snr / 20.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / p.sample_rate as f64;
        let gated = p.segments.iter().any(|s| t >= s.start_s && t < s.end_s);
        let mut v = 0.0;
        if gated {
            for h in 1..=p.n_harmonics {
                v += gain / h as f64
                    * (2.0 * std::f64::consts::PI * p.f0_hz * h as f64 * t).sin();
            }
        }
        if let Some(nr) = noise_rms {
            // Uniform in [-1, 1] has RMS 1/sqrt(3).
            let u: f64 = rng.gen_range(-1.0..1.0);
            v += nr * 3f64.sqrt() * u;
        }
        samples.push(v as f32);
    }
    let clip = AudioClip::new(samples, p.sample_rate).map_err(|e| bad(e.to_string()))?;
    Ok((
        clip,
        GroundTruth::VowelAudio {
            segments: p.segments.clone(),
            tone_rms: p.tone_rms,
            sample_rate: p.sample_rate,
        },
    ))
}

// ---------------------------------------------------------------------------
// Exam bundle
// ---------------------------------------------------------------------------

/// Full synthetic exam: vowel audio, strobe exam video, oscillating masks in
/// the visible windows and a detection sidecar. The ground-truth highlights
/// are the vocal segments clipped to the visible windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamParams {
    pub fps: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub vocal_segments: Vec<TimeSegment>,
    /// Fold-visible windows (masks present, detections confident).
    pub visible_segments: Vec<TimeSegment>,
    pub amp_left: f64,
    pub amp_right: f64,
    pub noise_snr_db: Option<f64>,
}

impl Default for ExamParams {
    fn default() -> Self {
        Self {
            fps: 25.0,
            duration_s: 20.0,
            sample_rate: 16_000,
            vocal_segments: vec![
                TimeSegment {
                    start_s: 3.0,
                    end_s: 8.0,
                },
                TimeSegment {
                    start_s: 12.0,
                    end_s: 17.0,
                },
            ],
            visible_segments: vec![
                TimeSegment {
                    start_s: 2.5,
                    end_s: 8.5,
                },
                TimeSegment {
                    start_s: 11.5,
                    end_s: 17.5,
                },
            ],
            amp_left: 0.0,
            amp_right: 8.0,
            noise_snr_db: Some(10.0),
        }
    }
}

/// In-memory exam bundle.
pub struct ExamBundle {
    pub audio: AudioClip,
    pub frames: FrameSeries,
    pub masks: MaskSequence,
    /// `(frame, confidence)` detection rows covering every frame.
    pub detections: Vec<(usize, f64)>,
    pub truth: GroundTruth,
}

pub fn gen_exam(p: &ExamParams, seed: u64) -> Result<ExamBundle, SynthError> {
    if !(p.fps > 0.0) || !(p.duration_s > 0.0) {
        return Err(bad("exam needs positive fps and duration"));
    }
    let n_frames = (p.duration_s * p.fps).round() as usize;

    let (audio, _) = gen_vowel_audio(
        &VowelParams {
            sample_rate: p.sample_rate,
            duration_s: p.duration_s,
            segments: p.vocal_segments.clone(),
            noise_snr_db: p.noise_snr_db,
            ..VowelParams::default()
        },
        seed,
    )?;

    // Exam video: steady intro, gap, strobe over the first vocal window,
    // gap, steady tail; sized to the full duration.
    let first_vocal = p
        .vocal_segments
        .first()
        .ok_or_else(|| bad("exam needs at least one vocal segment"))?;
    let strobe_start = (first_vocal.start_s * p.fps).round() as usize;
    let strobe_len = ((first_vocal.end_s - first_vocal.start_s) * p.fps).round() as usize;
    let gap = 5usize;
    if strobe_start < gap + 3 {
        return Err(bad("first vocal segment starts too early for the strobe layout"));
    }
    let steady = strobe_start - gap;
    let used = steady + gap + strobe_len + gap;
    if used + 3 > n_frames {
        return Err(bad("exam too short for the strobe layout"));
    }
    let (frames, video_truth) = gen_strobe_video(&StrobeParams {
        fps: p.fps,
        steady_frames: steady,
        gap_frames: gap,
        strobe_frames: strobe_len,
        tail_frames: n_frames - used,
        ..StrobeParams::default()
    })?;
    let strobe_segment = match &video_truth {
        GroundTruth::StrobeVideo { strobe_segment, .. } => *strobe_segment,
        _ => unreachable!(),
    };

    // Oscillating masks, blanked outside the visible windows.
    let (osc, _) = gen_osc_sequence(
        &OscParams {
            frames: n_frames,
            fps: p.fps,
            amp_left: p.amp_left,
            amp_right: p.amp_right,
            ..OscParams::default()
        },
        seed ^ 0x9e3779b97f4a7c15,
    )?;
    let mut masks = osc.masks;
    let visible = |f: usize| {
        let t = (f as f64 + 0.5) / p.fps;
        p.visible_segments
            .iter()
            .any(|s| t >= s.start_s && t < s.end_s)
    };
    let (w, h) = (masks[0].width, masks[0].height);
    let mut detections = Vec::with_capacity(n_frames);
    for (f, mask) in masks.iter_mut().enumerate().take(n_frames) {
        if !visible(f) {
            *mask = GlottisMask::blank(w, h);
        }
        detections.push((f, if visible(f) { 0.95 } else { 0.05 }));
    }
    let masks = MaskSequence::new(p.fps, masks).map_err(|e| bad(e.to_string()))?;

    let highlights = crate::model::intersect_segments(&p.vocal_segments, &p.visible_segments);
    let paralyzed = if p.amp_left < p.amp_right {
        Side::Left
    } else if p.amp_right < p.amp_left {
        Side::Right
    } else {
        Side::Indeterminate
    };
    Ok(ExamBundle {
        audio,
        frames,
        masks,
        detections,
        truth: GroundTruth::Exam {
            highlights,
            vocal_segments: p.vocal_segments.clone(),
            visible_segments: p.visible_segments.clone(),
            strobe_segment,
            paralyzed,
            fps: p.fps,
        },
    })
}
