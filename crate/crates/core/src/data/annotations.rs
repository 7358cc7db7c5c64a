//! Annotated videos, validation, and the line-delimited annotation file format.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{load_features, FeatureSequence};
use crate::error::{Error, Result};

pub type ClassId = u32;

/// Slack when comparing instance bounds against the video duration.
const DURATION_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalInstance {
    pub class_id: ClassId,
    pub t_start: f64,
    pub t_end: f64,
}

impl TemporalInstance {
    pub fn new(class_id: ClassId, t_start: f64, t_end: f64) -> Self {
        Self {
            class_id,
            t_start,
            t_end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedVideo {
    pub features: FeatureSequence,
    pub instances: Vec<TemporalInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    NegativeStart,
    EmptyInterval,
    ExceedsDuration,
    Unsorted,
    NestedSameClass,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::NonFinite => "non-finite bound",
            ViolationKind::NegativeStart => "negative start",
            ViolationKind::EmptyInterval => "empty interval",
            ViolationKind::ExceedsDuration => "exceeds duration",
            ViolationKind::Unsorted => "instances not sorted by start",
            ViolationKind::NestedSameClass => "nested same-class instance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instance {}: {}", self.index, self.kind)
    }
}

impl AnnotatedVideo {
    pub fn new(features: FeatureSequence, instances: Vec<TemporalInstance>) -> Self {
        Self {
            features,
            instances,
        }
    }

    pub fn video_id(&self) -> &str {
        &self.features.video_id
    }

    pub fn duration_sec(&self) -> f64 {
        self.features.duration_sec()
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.instances.iter().map(|i| i.class_id).collect()
    }

    pub fn has_class(&self, class_id: ClassId) -> bool {
        self.instances.iter().any(|i| i.class_id == class_id)
    }

    pub fn instances_of(&self, class_id: ClassId) -> impl Iterator<Item = &TemporalInstance> {
        self.instances.iter().filter(move |i| i.class_id == class_id)
    }

    pub fn sort_instances(&mut self) {
        self.instances.sort_by(|a, b| {
            a.t_start
                .total_cmp(&b.t_start)
                .then(a.t_end.total_cmp(&b.t_end))
                .then(a.class_id.cmp(&b.class_id))
        });
    }
}

/// Lists every annotation invariant violation. An empty list means the video is valid.
pub fn validate_annotations(video: &AnnotatedVideo) -> Vec<Violation> {
    let duration = video.duration_sec();
    let mut out = Vec::new();
    let mut push = |index, kind| out.push(Violation { index, kind });
    for (i, inst) in video.instances.iter().enumerate() {
        if !inst.t_start.is_finite() || !inst.t_end.is_finite() {
            push(i, ViolationKind::NonFinite);
            continue;
        }
        if inst.t_start < 0.0 {
            push(i, ViolationKind::NegativeStart);
        }
        if inst.t_start >= inst.t_end {
            push(i, ViolationKind::EmptyInterval);
        }
        if inst.t_end > duration + DURATION_SLACK {
            push(i, ViolationKind::ExceedsDuration);
        }
        if i > 0 && video.instances[i - 1].t_start > inst.t_start {
            push(i, ViolationKind::Unsorted);
        }
        let nested = video.instances.iter().enumerate().any(|(j, other)| {
            j != i
                && other.class_id == inst.class_id
                && other.t_start <= inst.t_start
                && inst.t_end <= other.t_end
                && (other.t_start, other.t_end, j) < (inst.t_start, inst.t_end, i)
        });
        if nested {
            push(i, ViolationKind::NestedSameClass);
        }
    }
    out
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub duration_sec: f64,
    pub feature_path: String,
    pub instances: Vec<TemporalInstance>,
}

pub fn read_annotation_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_annotation_records(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads every video in an annotation file, resolving feature paths relative to the file.
pub fn load_annotated_videos(path: &Path) -> Result<Vec<AnnotatedVideo>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_annotation_records(path)?
        .into_iter()
        .map(|rec| {
            let fpath = resolve(&base, &rec.feature_path);
            let mut features = load_features(&fpath)?;
            features.video_id = rec.video_id.clone();
            if (features.duration_sec() - rec.duration_sec).abs() > 1e-3 {
                return Err(Error::Data(format!(
                    "video {}: annotation duration {} differs from feature duration {}",
                    rec.video_id,
                    rec.duration_sec,
                    features.duration_sec()
                )));
            }
            Ok(AnnotatedVideo::new(features, rec.instances))
        })
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
