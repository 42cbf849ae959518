//! Effective run configuration: defaults, optional config file, CLI
//! overrides. The merged result is written next to every run's outputs.

use std::path::{Path, PathBuf};

use laryngo_core::audio::{KwsConfig, VowelScorer};
use laryngo_core::classify;
use laryngo_core::geometry::GeometryConfig;
use laryngo_core::video::HsvChannel;
use serde::{Deserialize, Serialize};

fn default_eps_empty() -> f64 {
    0.02
}
fn default_presence_threshold() -> f64 {
    0.5
}
fn default_presence_min_area() -> usize {
    20
}
fn default_min_highlight_s() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoConfig {
    /// Frames with mean value below this are empty.
    pub eps_empty: f64,
    /// HSV channel driving fluctuation analysis.
    pub channel: HsvChannel,
    /// Detection confidence required for fold presence.
    pub presence_threshold: f64,
    /// Mask area (pixels) required for fold presence.
    pub presence_min_area: usize,
    /// Highlights shorter than this are dropped.
    pub min_highlight_s: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            eps_empty: default_eps_empty(),
            channel: HsvChannel::Value,
            presence_threshold: default_presence_threshold(),
            presence_min_area: default_presence_min_area(),
            min_highlight_s: default_min_highlight_s(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    /// Decision threshold applied to the built-in vowel scorer. The trained
    /// model's 0.38 threshold (`kws.threshold`) is calibrated for sidecar
    /// score files and is kept separate.
    pub vowel_threshold: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            vowel_threshold: VowelScorer::OPERATING_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    /// Relative variance margin below which the verdict abstains.
    pub delta: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            delta: classify::DEFAULT_DELTA,
        }
    }
}

/// Everything a run needs; serialized as `run_config.json` in the output
/// directory so results are reproducible from files alone.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub kws: KwsConfig,
    pub scorer: ScorerConfig,
    pub video: VideoConfig,
    pub geometry: GeometryConfig,
    pub classify: ClassifyConfig,
}

/// CLI-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub fps: Option<f64>,
    pub n_levels: Option<usize>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&PathBuf>, overrides: &Overrides) -> Result<Self, crate::CliError> {
        let mut cfg: RunConfig = match path {
            Some(p) => laryngo_core::io::read_json(p)
                .map_err(|e| crate::CliError::new("BadConfig", 2, e.to_string()))?,
            None => RunConfig::default(),
        };
        if let Some(n) = overrides.n_levels {
            if n < 2 {
                return Err(crate::CliError::new(
                    "BadConfig",
                    2,
                    format!("n-levels must be at least 2, got {n}"),
                ));
            }
            cfg.geometry.n_levels = n;
        }
        if let Some(t) = overrides.threshold {
            cfg.kws.threshold = t;
            cfg.scorer.vowel_threshold = t;
        }
        Ok(cfg)
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), crate::CliError> {
        laryngo_core::io::write_json(&out_dir.join("run_config.json"), self)
            .map_err(crate::CliError::from)
    }
}
