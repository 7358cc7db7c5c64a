//! Feature sequences and the `SVMF` binary file format.
//!
//! Layout (all little-endian): magic `SVMF`, `u32` version (1), `u32` channel count, `u32` length,
//! `f32` duration in seconds, then `channels × length` `f32` values in channel-major order.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::Mat;

pub const SVMF_MAGIC: &[u8; 4] = b"SVMF";
pub const SVMF_VERSION: u32 = 1;

/// A `channels × length` matrix of per-snippet features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    channels: usize,
    length: usize,
    duration_sec: f32,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        channels: usize,
        length: usize,
        duration_sec: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidChannelCount);
        }
        if length == 0 {
            return Err(Error::InvalidLength);
        }
        if !(duration_sec.is_finite() && duration_sec > 0.0) {
            return Err(Error::InvalidDuration);
        }
        if data.len() != channels * length {
            return Err(Error::shape(format!(
                "feature data length {} does not match {channels}x{length}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            channels,
            length,
            duration_sec,
            data,
        })
    }

    pub fn from_mat(video_id: impl Into<String>, m: &Mat, duration_sec: f32) -> Result<Self> {
        let data = m.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(video_id, m.rows(), m.cols(), duration_sec, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn duration_sec(&self) -> f64 {
        self.duration_sec as f64
    }

    pub fn snippet_duration(&self) -> f64 {
        self.duration_sec as f64 / self.length as f64
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, t: usize) -> f32 {
        self.data[c * self.length + t]
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(
            self.channels,
            self.length,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Snippets `[start, end)` as a new sequence; duration scales with the snippet count.
    pub fn slice(&self, id: impl Into<String>, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.length {
            return Err(Error::InvalidArgument(format!(
                "snippet range [{start}, {end}) outside [0, {})",
                self.length
            )));
        }
        let n = end - start;
        let mut data = Vec::with_capacity(self.channels * n);
        for c in 0..self.channels {
            data.extend_from_slice(&self.data[c * self.length + start..c * self.length + end]);
        }
        let duration = (self.snippet_duration() * n as f64) as f32;
        Self::new(id, self.channels, n, duration, data)
    }

    /// Concatenates sequences along time. All parts must share the channel count.
    pub fn concat(id: impl Into<String>, parts: &[&FeatureSequence]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let channels = first.channels;
        if parts.iter().any(|p| p.channels != channels) {
            return Err(Error::shape("concatenated sequences differ in channel count"));
        }
        let length: usize = parts.iter().map(|p| p.length).sum();
        let duration: f64 = parts.iter().map(|p| p.duration_sec()).sum();
        let mut data = Vec::with_capacity(channels * length);
        for c in 0..channels {
            for p in parts {
                data.extend_from_slice(&p.data[c * p.length..(c + 1) * p.length]);
            }
        }
        Self::new(id, channels, length, duration as f32, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(SVMF_MAGIC);
        out.write_u32::<LittleEndian>(SVMF_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.channels as u32).unwrap();
        out.write_u32::<LittleEndian>(self.length as u32).unwrap();
        out.write_f32::<LittleEndian>(self.duration_sec).unwrap();
        for &v in &self.data {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_bytes(video_id: impl Into<String>, bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Truncated(path.into()))?;
        if &magic != SVMF_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "SVMF".into(),
            });
        }
        let truncated = |_| Error::Truncated(path.into());
        let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != SVMF_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                version,
            });
        }
        let channels = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let length = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let duration = cur.read_f32::<LittleEndian>().map_err(truncated)?;
        if channels == 0 {
            return Err(Error::InvalidChannelCount);
        }
        if length == 0 {
            return Err(Error::InvalidLength);
        }
        let n = channels
            .checked_mul(length)
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let remaining = bytes.len() - cur.position() as usize;
        if remaining < 4 * n {
            return Err(Error::Truncated(path.into()));
        }
        if remaining > 4 * n {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload in {}",
                remaining - 4 * n,
                path.display()
            )));
        }
        let mut data = vec![0f32; n];
        cur.read_f32_into::<LittleEndian>(&mut data)
            .map_err(truncated)?;
        Self::new(video_id, channels, length, duration, data)
    }
}

/// Writes a sequence as an `SVMF` file.
pub fn save_features(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads an `SVMF` file; the video id is taken from the file stem.
pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::from_bytes(id, &bytes, path)
}
