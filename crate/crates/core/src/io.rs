//! On-disk formats shared by the pipeline stages and the CLI.
//!
//! - WAV ingestion (PCM16 / float32; stereo downmixed by averaging)
//! - frame directories: `frame_%06d.png` plus `video.json` with the fps
//! - CSV: series channels (one column per channel), detection sidecars
//!   (`frame,confidence`) and score sidecars (`frame_index,posterior`)
//! - float32 little-endian rasters with an 8-byte header (two u32: rows,
//!   cols), used for mel features and prior-mean exports
//!
//! All writers are deterministic: identical inputs produce identical bytes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::model::SeriesChannel;
use crate::video::{FrameSeries, RgbFrame};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt file {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("malformed {what} at {path} line {line}: {detail}")]
    MalformedRecord {
        what: &'static str,
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("missing metadata: {0}")]
    MissingMetadata(String),
    #[error("{path}: {detail}")]
    BadData { path: PathBuf, detail: String },
}

impl IoError {
    fn unreadable(path: &Path, source: std::io::Error) -> Self {
        IoError::Unreadable {
            path: path.to_path_buf(),
            source,
        }
    }

    fn unwritable(path: &Path, source: std::io::Error) -> Self {
        IoError::Unwritable {
            path: path.to_path_buf(),
            source,
        }
    }
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

/// Read a WAV file into a mono clip. Multi-channel input is downmixed by
/// averaging the channels; 16-bit PCM is scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioClip, IoError> {
    let reader = hound::WavReader::open(path).map_err(|e| IoError::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?,
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?,
        (fmt, bits) => {
            return Err(IoError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("unsupported sample format {fmt:?}/{bits} bit"),
            })
        }
    };
    let samples = if channels <= 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate).map_err(|e| IoError::BadData {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write a mono float32 WAV file.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), IoError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| IoError::Unwritable {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(|e| IoError::Unwritable {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    writer.finalize().map_err(|e| IoError::Unwritable {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

// ---------------------------------------------------------------------------
// Frame directories
// ---------------------------------------------------------------------------

/// Sidecar metadata for a frame directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps: f64,
}

/// Name of the n-th frame image inside a frame or mask directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Load `frame_%06d.png` files (consecutive from zero) plus `video.json`.
pub fn load_frame_dir(dir: &Path) -> Result<FrameSeries, IoError> {
    let meta_path = dir.join("video.json");
    if !meta_path.exists() {
        return Err(IoError::MissingMetadata(format!(
            "{} (expected video.json with fps)",
            meta_path.display()
        )));
    }
    let meta: VideoMeta = read_json(&meta_path)?;
    if !(meta.fps > 0.0) {
        return Err(IoError::BadData {
            path: meta_path,
            detail: format!("fps must be positive, got {}", meta.fps),
        });
    }
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_file_name(frames.len()));
        if !path.exists() {
            break;
        }
        frames.push(load_rgb_frame(&path)?);
    }
    if frames.is_empty() {
        return Err(IoError::BadData {
            path: dir.to_path_buf(),
            detail: "no frame_%06d.png files found".into(),
        });
    }
    FrameSeries::new(meta.fps, frames).map_err(|e| IoError::BadData {
        path: dir.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write a frame series as `frame_%06d.png` plus `video.json`.
pub fn write_frame_dir(dir: &Path, series: &FrameSeries) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::unwritable(dir, e))?;
    write_json(&dir.join("video.json"), &VideoMeta { fps: series.fps })?;
    for (i, frame) in series.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        let img = image::RgbImage::from_raw(
            frame.width as u32,
            frame.height as u32,
            frame.data.clone(),
        )
        .expect("frame buffer matches dimensions");
        img.save(&path).map_err(|e| IoError::Unwritable {
            path,
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    Ok(())
}

/// Decode one RGB frame image.
pub fn load_rgb_frame(path: &Path) -> Result<RgbFrame, IoError> {
    let img = image::open(path).map_err(|e| IoError::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok(RgbFrame {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        data: rgb.into_raw(),
    })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Write series channels as CSV: header row of labels, one row per frame.
/// An optional `valid` boolean column is appended last.
pub fn write_series_csv(
    path: &Path,
    channels: &[SeriesChannel],
    validity: Option<&[bool]>,
) -> Result<(), IoError> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| IoError::unwritable(path, e))?);
    let n = channels.first().map(|c| c.values.len()).unwrap_or(0);
    let mut header: Vec<&str> = channels.iter().map(|c| c.label.as_str()).collect();
    if validity.is_some() {
        header.push("valid");
    }
    writeln!(file, "{}", header.join(",")).map_err(|e| IoError::unwritable(path, e))?;
    for row in 0..n {
        let mut cells: Vec<String> = channels.iter().map(|c| c.values[row].to_string()).collect();
        if let Some(v) = validity {
            cells.push(if v[row] { "1".into() } else { "0".into() });
        }
        writeln!(file, "{}", cells.join(",")).map_err(|e| IoError::unwritable(path, e))?;
    }
    file.flush().map_err(|e| IoError::unwritable(path, e))
}

/// Read a series CSV written by [`write_series_csv`]. Returns the channels
/// and, when a `valid` column is present, the validity flags.
pub fn read_series_csv(path: &Path) -> Result<(Vec<SeriesChannel>, Option<Vec<bool>>), IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::unreadable(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| IoError::MalformedRecord {
        what: "series csv",
        path: path.to_path_buf(),
        line: 1,
        detail: "empty file".into(),
    })?;
    let labels: Vec<&str> = header.split(',').collect();
    let has_valid = labels.last() == Some(&"valid");
    let n_channels = if has_valid {
        labels.len() - 1
    } else {
        labels.len()
    };
    let mut channels: Vec<SeriesChannel> = labels[..n_channels]
        .iter()
        .map(|l| SeriesChannel::new(*l, Vec::new()))
        .collect();
    let mut validity = if has_valid { Some(Vec::new()) } else { None };
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != labels.len() {
            return Err(IoError::MalformedRecord {
                what: "series csv",
                path: path.to_path_buf(),
                line: idx + 1,
                detail: format!("expected {} cells, got {}", labels.len(), cells.len()),
            });
        }
        for (c, cell) in channels.iter_mut().zip(&cells) {
            let v: f64 = cell.parse().map_err(|_| IoError::MalformedRecord {
                what: "series csv",
                path: path.to_path_buf(),
                line: idx + 1,
                detail: format!("bad float {cell:?}"),
            })?;
            c.values.push(v);
        }
        if let Some(v) = validity.as_mut() {
            v.push(cells[labels.len() - 1] != "0");
        }
    }
    Ok((channels, validity))
}

/// Read a two-column CSV of `(index, value)` records. A header line is
/// tolerated and skipped when the first cell is not an integer.
pub fn read_indexed_csv(path: &Path, what: &'static str) -> Result<Vec<(usize, f64)>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::unreadable(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let first = cells.next().unwrap_or("").trim();
        let second = cells.next().unwrap_or("").trim();
        let index: usize = match first.parse() {
            Ok(v) => v,
            Err(_) if idx == 0 => continue, // header
            Err(_) => {
                return Err(IoError::MalformedRecord {
                    what,
                    path: path.to_path_buf(),
                    line: idx + 1,
                    detail: format!("bad index {first:?}"),
                })
            }
        };
        let value: f64 = second.parse().map_err(|_| IoError::MalformedRecord {
            what,
            path: path.to_path_buf(),
            line: idx + 1,
            detail: format!("bad value {second:?}"),
        })?;
        out.push((index, value));
    }
    Ok(out)
}

/// Write `(index, value)` records with the given header.
pub fn write_indexed_csv(path: &Path, header: &str, rows: &[(usize, f64)]) -> Result<(), IoError> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| IoError::unwritable(path, e))?);
    writeln!(file, "{header}").map_err(|e| IoError::unwritable(path, e))?;
    for (i, v) in rows {
        writeln!(file, "{i},{v}").map_err(|e| IoError::unwritable(path, e))?;
    }
    file.flush().map_err(|e| IoError::unwritable(path, e))
}

// ---------------------------------------------------------------------------
// Float rasters
// ---------------------------------------------------------------------------

/// Write a row-major float raster: u32 LE rows, u32 LE cols, then
/// `rows*cols` f32 LE values.
pub fn write_f32_raster(path: &Path, rows: u32, cols: u32, data: &[f64]) -> Result<(), IoError> {
    assert_eq!(data.len(), rows as usize * cols as usize);
    let mut file = BufWriter::new(File::create(path).map_err(|e| IoError::unwritable(path, e))?);
    file.write_all(&rows.to_le_bytes())
        .and_then(|_| file.write_all(&cols.to_le_bytes()))
        .map_err(|e| IoError::unwritable(path, e))?;
    for &v in data {
        file.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| IoError::unwritable(path, e))?;
    }
    file.flush().map_err(|e| IoError::unwritable(path, e))
}

/// Read a raster written by [`write_f32_raster`]. Returns (rows, cols, data).
pub fn read_f32_raster(path: &Path) -> Result<(u32, u32, Vec<f32>), IoError> {
    let mut file = BufReader::new(File::open(path).map_err(|e| IoError::unreadable(path, e))?);
    let mut header = [0u8; 8];
    file.read_exact(&mut header)
        .map_err(|e| IoError::unreadable(path, e))?;
    let rows = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let cols = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| IoError::unreadable(path, e))?;
    let expected = rows as usize * cols as usize * 4;
    if bytes.len() != expected {
        return Err(IoError::BadData {
            path: path.to_path_buf(),
            detail: format!("expected {expected} payload bytes, got {}", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = BufWriter::new(File::create(path).map_err(|e| IoError::unwritable(path, e))?);
    serde_json::to_writer_pretty(file, value).map_err(|e| IoError::Unwritable {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = BufReader::new(File::open(path).map_err(|e| IoError::unreadable(path, e))?);
    serde_json::from_reader(file).map_err(|e| IoError::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
