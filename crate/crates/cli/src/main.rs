//! Batch command-line frontend: spot vocalizations on the audio track,
//! extract strobe-lit and fold-visible intervals, compute mask geometry and
//! angle-deviation series, and lateralize paralysis — each step composable
//! through files, plus an `analyze` command chaining the full flow.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Error carrying the machine-readable code and process exit status.
/// Exit 2 = input/config problem, exit 3 = data degeneracy.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub exit: u8,
    pub detail: String,
}

impl CliError {
    pub fn new(code: &str, exit: u8, detail: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            exit,
            detail: detail.into(),
        }
    }
}

impl From<laryngo_core::io::IoError> for CliError {
    fn from(e: laryngo_core::io::IoError) -> Self {
        use laryngo_core::io::IoError::*;
        let code = match &e {
            MissingMetadata(_) => "MissingMetadata",
            Unreadable { .. } => "UnreadableInput",
            Unwritable { .. } => "WriteFailure",
            UnsupportedFormat { .. } => "UnsupportedFormat",
            MalformedRecord { .. } => "MalformedRecord",
            BadData { .. } => "BadData",
        };
        CliError::new(code, 2, e.to_string())
    }
}

impl From<laryngo_core::audio::AudioError> for CliError {
    fn from(e: laryngo_core::audio::AudioError) -> Self {
        use laryngo_core::audio::AudioError::*;
        match &e {
            ClipTooShort { .. } => CliError::new("ClipTooShort", 3, e.to_string()),
            TooFewFrames { .. } => CliError::new("TooFewFrames", 3, e.to_string()),
            ScorerFailure { .. } => CliError::new("ScorerFailure", 2, e.to_string()),
            BadClip => CliError::new("BadAudio", 2, e.to_string()),
        }
    }
}

impl From<laryngo_core::video::VideoError> for CliError {
    fn from(e: laryngo_core::video::VideoError) -> Self {
        use laryngo_core::video::VideoError::*;
        match &e {
            SequenceTooShort { .. } => CliError::new("SequenceTooShort", 3, e.to_string()),
            NoEligibleSegment => CliError::new("NoEligibleSegment", 3, e.to_string()),
            MissingFrameEntry { .. } => CliError::new("MissingFrameEntry", 2, e.to_string()),
            BadFrameSeries => CliError::new("BadFrameSeries", 2, e.to_string()),
        }
    }
}

impl From<laryngo_core::mask::MaskError> for CliError {
    fn from(e: laryngo_core::mask::MaskError) -> Self {
        use laryngo_core::mask::MaskError::*;
        let code = match &e {
            UnreadableFile { .. } => "UnreadableFile",
            UnsupportedFormat { .. } => "UnsupportedFormat",
            AlphaOutOfRange(_) => "AlphaOutOfRange",
            BadSequence => "BadMaskSequence",
        };
        CliError::new(code, 2, e.to_string())
    }
}

impl From<laryngo_core::geometry::GeometryError> for CliError {
    fn from(e: laryngo_core::geometry::GeometryError) -> Self {
        use laryngo_core::geometry::GeometryError::*;
        let code = match &e {
            MaskTooSmall { .. } => "MaskTooSmall",
            DegenerateMidline { .. } => "DegenerateMidline",
            CoincidentPoints => "CoincidentPoints",
            AllFramesDegenerate(_) => "AllFramesDegenerate",
        };
        CliError::new(code, 3, e.to_string())
    }
}

impl From<laryngo_core::classify::ClassifyError> for CliError {
    fn from(e: laryngo_core::classify::ClassifyError) -> Self {
        use laryngo_core::classify::ClassifyError::*;
        match e {
            InsufficientFrames(_) => CliError::new("InsufficientFrames", 3, e.to_string()),
            WriteFailure(_) => CliError::new("WriteFailure", 2, e.to_string()),
            Audio(inner) => inner.into(),
        }
    }
}

impl From<laryngo_core::synth::SynthError> for CliError {
    fn from(e: laryngo_core::synth::SynthError) -> Self {
        CliError::new("BadParams", 2, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Normal,
    LeftVfp,
    RightVfp,
}

impl From<LabelArg> for laryngo_core::classify::VfpLabel {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Normal => Self::Normal,
            LabelArg::LeftVfp => Self::LeftVfp,
            LabelArg::RightVfp => Self::RightVfp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MelFormat {
    /// float32 little-endian raster with an 8-byte header
    Bin,
    /// one column per mel band
    Csv,
}

#[derive(Parser)]
#[command(
    name = "laryngo",
    version,
    about = "Laryngoscopic exam analysis: highlight extraction, glottis-mask geometry and paralysis lateralization"
)]
struct Cli {
    /// Config JSON overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Frame-rate override for inputs without metadata.
    #[arg(long, global = true)]
    fps: Option<f64>,
    /// Number of midline divisions N (levels are 1..N-1).
    #[arg(long, global = true)]
    n_levels: Option<usize>,
    /// Decision threshold override for chunk scores.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Seed override for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spot vocalizations, select the strobe segment and assemble highlights.
    Highlights {
        /// Exam audio track (WAV, PCM16 or float32).
        #[arg(long)]
        audio: PathBuf,
        /// Frame directory (frame_%06d.png + video.json).
        #[arg(long)]
        frames: PathBuf,
        /// Detection sidecar CSV (frame,confidence) for fold presence.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Mask directory for fold presence (alternative to --detections).
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Score sidecar CSV (frame_index,posterior) replacing the built-in
        /// vowel scorer.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame mask geometry, angle channels and the area waveform.
    Geometry {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Left/right paralysis side from angle-series CSVs.
    ClassifySide {
        /// One or more vfdyn CSV files (one per highlight).
        #[arg(required = true)]
        vfdyn: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Abstention margin override.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Generate a synthetic fixture bundle with ground truth.
    Synth {
        /// Generator spec JSON ({"seed":..,"kind":..,"params":{..}}).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-highlight log-mel and angle-series features plus manifest.
    ExportFeatures {
        /// Highlights JSON produced by `highlights` or `analyze`.
        #[arg(long)]
        highlights: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Diagnosis label recorded in the manifest.
        #[arg(long, value_enum)]
        label: Option<LabelArg>,
        /// On-disk mel format.
        #[arg(long, value_enum, default_value = "bin")]
        mel_format: MelFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: highlights, per-highlight geometry, side verdict.
    Analyze {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    detail: &'a str,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LARYNGO_LOG")).init();
    let cli = Cli::parse();
    let overrides = config::Overrides {
        fps: cli.fps,
        n_levels: cli.n_levels,
        threshold: cli.threshold,
        seed: cli.seed,
    };
    let result = config::RunConfig::load(cli.config.as_ref(), &overrides).and_then(|cfg| {
        match cli.command {
            Command::Highlights {
                audio,
                frames,
                detections,
                masks,
                scores,
                out,
            } => commands::highlights(
                &cfg,
                &overrides,
                &audio,
                &frames,
                detections.as_deref(),
                masks.as_deref(),
                scores.as_deref(),
                &out,
            ),
            Command::Geometry { masks, out } => commands::geometry(&cfg, &overrides, &masks, &out),
            Command::ClassifySide { vfdyn, out, delta } => {
                commands::classify_side(&cfg, &vfdyn, delta, &out)
            }
            Command::Synth { spec, out } => commands::synth(&cfg, &overrides, &spec, &out),
            Command::ExportFeatures {
                highlights,
                audio,
                masks,
                label,
                mel_format,
                out,
            } => commands::export_features(
                &cfg,
                &overrides,
                &highlights,
                &audio,
                &masks,
                label.map(Into::into),
                mel_format,
                &out,
            ),
            Command::Analyze {
                audio,
                frames,
                masks,
                detections,
                scores,
                out,
            } => commands::analyze(
                &cfg,
                &overrides,
                &audio,
                &frames,
                &masks,
                detections.as_deref(),
                scores.as_deref(),
                &out,
            ),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let json = serde_json::to_string(&ErrorJson {
                error: &e.code,
                detail: &e.detail,
            })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.code));
            eprintln!("{json}");
            ExitCode::from(e.exit)
        }
    }
}
