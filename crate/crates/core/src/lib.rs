//! Analytical core for laryngoscopic exam review.
//!
//! The crate turns a raw stroboscopic exam recording (audio track, frame
//! directory, per-frame glottis masks or detector output) into reviewable
//! artifacts:
//!
//! - vocalization segments spotted on the audio track ([`audio`])
//! - strobe-lit and fold-visible video intervals, merged into highlight
//!   segments ([`video`])
//! - per-frame glottal area and the diffusion-prior mean raster ([`mask`])
//! - per-fold angle-deviation series extracted from glottis masks
//!   ([`geometry`])
//! - a variance-based left/right paralysis verdict plus feature export for
//!   external classifiers ([`classify`])
//!
//! [`synth`] generates deterministic synthetic fixtures with analytic ground
//! truth; every pipeline stage is validated against those oracles.

pub mod audio;
pub mod classify;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod model;
pub mod synth;
pub mod video;

pub use model::{
    AngleSet, FrameMask, GlottisMask, Point2, SegmentKind, SeriesChannel, TimeSegment,
};
