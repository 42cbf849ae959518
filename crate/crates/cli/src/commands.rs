//! Command implementations. Every command is a pure function of its inputs
//! and the effective config: reruns produce byte-identical primary outputs.

use std::fs;
use std::path::{Path, PathBuf};

use laryngo_core::audio::{
    decisions_to_vocal_segments, mel_spectrogram_centered, score_chunks, slide_chunks,
    stft_magnitude, AudioClip, AudioError, ChunkScorer, KwsConfig, SidecarScorer, VowelScorer,
};
use laryngo_core::classify::{
    aggregate_verdicts, export_features as export_bundle, export_mel_config, side_verdict,
    vfdyn_from_csv, FeatureBundle, HighlightFeatures, Manifest, ManifestEntry, SideVerdict,
    VfpLabel,
};
use laryngo_core::geometry::{
    analyze_frame, vfdyn_with_geometries, FoldGeometry, GeometryFile, VFDynSeries,
};
use laryngo_core::io;
use laryngo_core::mask::{gaw, load_mask_dir, write_mask, write_mask_dir, MaskSequence};
use laryngo_core::model::{FrameMask, SegmentFile, SegmentKind, SeriesChannel, TimeSegment};
use laryngo_core::synth::{
    gen_ellipse_mask, gen_exam, gen_osc_sequence, gen_strobe_video, gen_teardrop_mask,
    gen_vowel_audio, SynthKind, SynthSpec,
};
use laryngo_core::video::{
    assemble_highlights, empty_frame_mask, hsv_track, presence_from_detections,
    presence_from_masks, select_strobe, split_nonempty, HighlightFile, HighlightSegment,
    StrobeReport, VideoError,
};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::{CliError, MelFormat};

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::new("WriteFailure", 2, format!("{}: {e}", out.display())))
}

fn highlight_id(index: usize) -> String {
    format!("h{index:03}")
}

/// Frame range [start, end) of a segment at the given rate.
fn segment_frames(seg: &TimeSegment, fps: f64, n_frames: usize) -> (usize, usize) {
    let start = (seg.start_s * fps).round() as usize;
    let end = ((seg.end_s * fps).round() as usize).min(n_frames);
    (start.min(end), end)
}

// ---------------------------------------------------------------------------
// Vocalization spotting
// ---------------------------------------------------------------------------

/// Audio track to vocalization segments. Clips too short for even one chunk
/// yield no segments rather than failing the whole run.
fn vocal_segments(
    clip: &AudioClip,
    cfg: &RunConfig,
    scores: Option<&Path>,
) -> Result<Vec<TimeSegment>, CliError> {
    let kws = &cfg.kws;
    let spec = match stft_magnitude(clip, kws) {
        Ok(s) => s,
        Err(AudioError::ClipTooShort { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let chunks = match slide_chunks(&spec, kws) {
        Ok(c) => c,
        Err(AudioError::TooFewFrames { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let (decisions, threshold) = match scores {
        Some(path) => {
            let rows = io::read_indexed_csv(path, "score sidecar")?;
            let scorer = SidecarScorer::new(rows);
            (score_chunks(&chunks, &scorer)?, kws.threshold)
        }
        None => {
            let scorer = VowelScorer::new(clip.sample_rate, kws.n_fft);
            (
                score_chunks(&chunks, &scorer as &dyn ChunkScorer)?,
                cfg.scorer.vowel_threshold,
            )
        }
    };
    let effective = KwsConfig {
        threshold,
        ..kws.clone()
    };
    Ok(decisions_to_vocal_segments(
        &decisions,
        &effective,
        spec.frame_hop_s,
    ))
}

// ---------------------------------------------------------------------------
// highlights
// ---------------------------------------------------------------------------

struct HighlightStage {
    fps: f64,
    n_frames: usize,
    vocal: Vec<TimeSegment>,
    strobe_report: Option<StrobeReport>,
    highlights: Vec<HighlightSegment>,
}

#[allow(clippy::too_many_arguments)]
fn run_highlight_stage(
    cfg: &RunConfig,
    overrides: &Overrides,
    audio: &Path,
    frames_dir: &Path,
    detections: Option<&Path>,
    masks_dir: Option<&Path>,
    scores: Option<&Path>,
) -> Result<HighlightStage, CliError> {
    let frames = io::load_frame_dir(frames_dir)?;
    let fps = overrides.fps.unwrap_or(frames.fps);
    let n_frames = frames.frames.len();

    let clip = io::read_wav(audio)?;
    let vocal = vocal_segments(&clip, cfg, scores)?;

    let track = hsv_track(&frames);
    let empty = empty_frame_mask(&track, fps, cfg.video.eps_empty);
    let nonempty = split_nonempty(&empty);
    let strobe_report = match select_strobe(&track, &nonempty, fps, cfg.video.channel) {
        Ok(report) => Some(report),
        Err(VideoError::NoEligibleSegment) => {
            log::warn!("no strobe-eligible segment in the video");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let presence: FrameMask = if let Some(path) = detections {
        let rows = io::read_indexed_csv(path, "detection sidecar")?;
        presence_from_detections(&rows, n_frames, fps, cfg.video.presence_threshold)?
    } else if let Some(dir) = masks_dir {
        let seq = load_mask_dir(dir, fps)?;
        presence_from_masks(&seq, cfg.video.presence_min_area)
    } else {
        FrameMask::new(fps, vec![true; n_frames]).expect("positive fps")
    };

    let highlights = assemble_highlights(
        &vocal,
        &presence,
        strobe_report.as_ref().map(|r| &r.selected),
        cfg.video.min_highlight_s,
    );
    Ok(HighlightStage {
        fps,
        n_frames,
        vocal,
        strobe_report,
        highlights,
    })
}

fn write_highlight_stage(stage: &HighlightStage, out: &Path) -> Result<(), CliError> {
    io::write_json(
        &out.join("vocal_segments.json"),
        &SegmentFile::from_segments(&stage.vocal, SegmentKind::Vocalization),
    )?;
    if let Some(report) = &stage.strobe_report {
        io::write_json(&out.join("strobe_report.json"), report)?;
    }
    io::write_json(
        &out.join("highlights.json"),
        &HighlightFile {
            highlights: stage.highlights.clone(),
        },
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn highlights(
    cfg: &RunConfig,
    overrides: &Overrides,
    audio: &Path,
    frames_dir: &Path,
    detections: Option<&Path>,
    masks_dir: Option<&Path>,
    scores: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let stage = run_highlight_stage(cfg, overrides, audio, frames_dir, detections, masks_dir, scores)?;
    write_highlight_stage(&stage, out)?;
    cfg.write(out)?;
    log::info!(
        "{} vocalization segment(s), {} highlight(s)",
        stage.vocal.len(),
        stage.highlights.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

fn mask_dir_fps(dir: &Path, overrides: &Overrides) -> Result<f64, CliError> {
    if let Some(fps) = overrides.fps {
        return Ok(fps);
    }
    let meta = dir.join("video.json");
    if meta.exists() {
        let m: io::VideoMeta = io::read_json(&meta)?;
        return Ok(m.fps);
    }
    Err(CliError::new(
        "MissingMetadata",
        2,
        format!(
            "{} has no video.json; pass --fps",
            dir.display()
        ),
    ))
}

/// Geometry, angle channels and area waveform for one mask sequence.
fn analyze_sequence(
    seq: &MaskSequence,
    cfg: &RunConfig,
) -> Result<(GeometryFile, VFDynSeries, SeriesChannel), CliError> {
    let geometries: Vec<FoldGeometry> = seq
        .masks
        .iter()
        .map(|m| analyze_frame(m, &cfg.geometry))
        .collect();
    let series = vfdyn_with_geometries(seq, &geometries, &cfg.geometry)?;
    let area = gaw(seq);
    Ok((
        GeometryFile {
            n_levels: cfg.geometry.n_levels,
            frames: geometries,
        },
        series,
        area,
    ))
}

fn write_series_outputs(
    out: &Path,
    geometry: &GeometryFile,
    series: &VFDynSeries,
    area: &SeriesChannel,
) -> Result<(), CliError> {
    io::write_json(&out.join("geometry.json"), geometry)?;
    let mut channels: Vec<SeriesChannel> = series
        .left
        .iter()
        .chain(series.right.iter())
        .cloned()
        .collect();
    channels.push(area.clone());
    io::write_series_csv(
        &out.join("vfdyn.csv"),
        &channels,
        Some(&series.frame_validity),
    )?;
    Ok(())
}

pub fn geometry(
    cfg: &RunConfig,
    overrides: &Overrides,
    masks_dir: &Path,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let fps = mask_dir_fps(masks_dir, overrides)?;
    let seq = load_mask_dir(masks_dir, fps)?;
    let (geometry, series, area) = analyze_sequence(&seq, cfg)?;
    write_series_outputs(out, &geometry, &series, &area)?;
    cfg.write(out)?;
    log::info!(
        "{} frame(s), {} valid",
        seq.len(),
        series.valid_frames()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// classify-side
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerdictFile {
    #[serde(flatten)]
    verdict: SideVerdict,
    per_highlight: Vec<SideVerdict>,
}

pub fn classify_side(
    cfg: &RunConfig,
    inputs: &[PathBuf],
    delta: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let delta = delta.unwrap_or(cfg.classify.delta);
    let mut per_highlight = Vec::with_capacity(inputs.len());
    for path in inputs {
        let series = vfdyn_from_csv(path)?;
        per_highlight.push(side_verdict(&series, delta)?);
    }
    let verdict = aggregate_verdicts(&per_highlight, delta)?;
    io::write_json(
        &out.join("verdict.json"),
        &VerdictFile {
            verdict,
            per_highlight,
        },
    )?;
    cfg.write(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(
    cfg: &RunConfig,
    overrides: &Overrides,
    spec_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let mut spec: SynthSpec = io::read_json(spec_path)?;
    if let Some(seed) = overrides.seed {
        spec.seed = seed;
    }
    let truth = match &spec.kind {
        SynthKind::EllipseMask(p) => {
            let (mask, truth) = gen_ellipse_mask(p)?;
            write_mask(&out.join("mask.png"), &mask)?;
            truth
        }
        SynthKind::TeardropMask(p) => {
            let (mask, truth) = gen_teardrop_mask(p)?;
            write_mask(&out.join("mask.png"), &mask)?;
            truth
        }
        SynthKind::OscSequence(p) => {
            let (seq, truth) = gen_osc_sequence(p, spec.seed)?;
            let dir = out.join("masks");
            write_mask_dir(&dir, &seq)?;
            io::write_json(&dir.join("video.json"), &io::VideoMeta { fps: seq.fps })?;
            truth
        }
        SynthKind::StrobeVideo(p) => {
            let (frames, truth) = gen_strobe_video(p)?;
            io::write_frame_dir(&out.join("frames"), &frames)?;
            truth
        }
        SynthKind::VowelAudio(p) => {
            let (clip, truth) = gen_vowel_audio(p, spec.seed)?;
            io::write_wav(&out.join("audio.wav"), &clip)?;
            truth
        }
        SynthKind::Exam(p) => {
            let bundle = gen_exam(p, spec.seed)?;
            io::write_wav(&out.join("audio.wav"), &bundle.audio)?;
            io::write_frame_dir(&out.join("frames"), &bundle.frames)?;
            let mask_dir = out.join("masks");
            write_mask_dir(&mask_dir, &bundle.masks)?;
            io::write_json(
                &mask_dir.join("video.json"),
                &io::VideoMeta {
                    fps: bundle.masks.fps,
                },
            )?;
            io::write_indexed_csv(
                &out.join("detections.csv"),
                "frame,confidence",
                &bundle.detections,
            )?;
            bundle.truth
        }
    };
    io::write_json(&out.join("ground_truth.json"), &truth)?;
    io::write_json(&out.join("synth_spec.json"), &spec)?;
    cfg.write(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// export-features
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn export_features(
    cfg: &RunConfig,
    overrides: &Overrides,
    highlights_path: &Path,
    audio: &Path,
    masks_dir: &Path,
    label: Option<VfpLabel>,
    mel_format: MelFormat,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let file: HighlightFile = io::read_json(highlights_path)?;
    let clip = io::read_wav(audio)?;
    let fps = mask_dir_fps(masks_dir, overrides)?;
    let seq = load_mask_dir(masks_dir, fps)?;

    let mut bundle = FeatureBundle::default();
    for (i, h) in file.highlights.iter().enumerate() {
        let id = highlight_id(i);
        let (f0, f1) = segment_frames(&h.span, fps, usize::MAX);
        if f1 > seq.len() || f0 >= f1 {
            return Err(CliError::new(
                "AlignmentMismatch",
                3,
                format!(
                    "highlight {id} covers frames [{f0}, {f1}) but only {} masks exist",
                    seq.len()
                ),
            ));
        }
        let audio_clip = clip.slice_segment(&h.span).ok_or_else(|| {
            CliError::new(
                "AlignmentMismatch",
                3,
                format!("highlight {id} lies outside the audio clip"),
            )
        })?;
        let sub = MaskSequence::new(fps, seq.masks[f0..f1].to_vec())
            .map_err(CliError::from)?;
        let (_, series, _) = analyze_sequence(&sub, cfg)?;
        bundle.highlights.push(HighlightFeatures {
            id,
            audio: audio_clip,
            vfdyn: series,
            label,
        });
    }

    match mel_format {
        MelFormat::Bin => {
            export_bundle(&bundle, out)?;
        }
        MelFormat::Csv => export_features_csv(&bundle, out)?,
    }
    cfg.write(out)?;
    Ok(())
}

/// CSV-mel variant of [`laryngo_core::classify::export_features`].
fn export_features_csv(bundle: &FeatureBundle, out: &Path) -> Result<(), CliError> {
    let mut entries = Vec::new();
    for h in &bundle.highlights {
        let mel_cfg = export_mel_config(h.audio.sample_rate);
        let mel = mel_spectrogram_centered(&h.audio, &mel_cfg)?;
        let mel_file = format!("mel_{}.csv", h.id);
        let channels: Vec<SeriesChannel> = (0..mel.bins)
            .map(|b| {
                SeriesChannel::new(
                    format!("mel{b}"),
                    (0..mel.frames).map(|f| mel.at(f, b)).collect(),
                )
            })
            .collect();
        io::write_series_csv(&out.join(&mel_file), &channels, None)?;

        let vfdyn_file = format!("vfdyn_{}.csv", h.id);
        let angle_channels: Vec<SeriesChannel> = h
            .vfdyn
            .left
            .iter()
            .chain(h.vfdyn.right.iter())
            .cloned()
            .collect();
        io::write_series_csv(
            &out.join(&vfdyn_file),
            &angle_channels,
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
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            highlights: entries,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HighlightReport {
    id: String,
    #[serde(flatten)]
    span: HighlightSegment,
    frames: usize,
    valid_frames: usize,
    verdict: Option<SideVerdict>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    vocal_segments: Vec<TimeSegment>,
    strobe_segment: Option<TimeSegment>,
    highlights: Vec<HighlightReport>,
    side: Option<SideVerdict>,
}

#[allow(clippy::too_many_arguments)]
pub fn analyze(
    cfg: &RunConfig,
    overrides: &Overrides,
    audio: &Path,
    frames_dir: &Path,
    masks_dir: &Path,
    detections: Option<&Path>,
    scores: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let stage = run_highlight_stage(
        cfg,
        overrides,
        audio,
        frames_dir,
        detections,
        Some(masks_dir),
        scores,
    )?;
    write_highlight_stage(&stage, out)?;

    let seq = load_mask_dir(masks_dir, stage.fps)?;
    let mut reports = Vec::new();
    let mut verdicts = Vec::new();
    for (i, h) in stage.highlights.iter().enumerate() {
        let id = highlight_id(i);
        let (f0, f1) = segment_frames(&h.span, stage.fps, seq.len().min(stage.n_frames));
        if f0 >= f1 {
            continue;
        }
        let sub = MaskSequence::new(stage.fps, seq.masks[f0..f1].to_vec())
            .map_err(CliError::from)?;
        let h_dir = out.join(&id);
        ensure_out_dir(&h_dir)?;
        let (geometry, series, area) = analyze_sequence(&sub, cfg)?;
        write_series_outputs(&h_dir, &geometry, &series, &area)?;
        let verdict = side_verdict(&series, cfg.classify.delta).ok();
        if let Some(v) = &verdict {
            verdicts.push(v.clone());
        }
        reports.push(HighlightReport {
            id,
            span: h.clone(),
            frames: f1 - f0,
            valid_frames: series.valid_frames(),
            verdict,
        });
    }
    let side = if verdicts.is_empty() {
        None
    } else {
        Some(aggregate_verdicts(&verdicts, cfg.classify.delta)?)
    };
    io::write_json(
        &out.join("report.json"),
        &AnalyzeReport {
            vocal_segments: stage.vocal.clone(),
            strobe_segment: stage.strobe_report.as_ref().map(|r| r.selected),
            highlights: reports,
            side,
        },
    )?;
    cfg.write(out)?;
    Ok(())
}
