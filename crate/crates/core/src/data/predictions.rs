use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrieved moment: an interval in seconds inside a reference video and its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPrediction {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

impl MomentPrediction {
    pub fn new(video_id: impl Into<String>, t_start: f64, t_end: f64, score: f64) -> Self {
        Self {
            video_id: video_id.into(),
            t_start,
            t_end,
            score,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }
}

/// A prediction line in the output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

/// A stage-1 candidate line: the rank of a reference video for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub query_id: String,
    pub rank: usize,
    pub video_id: String,
    pub score: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// Sorts records by score descending with a deterministic (query, video, start) tie-break.
pub fn sort_prediction_records(records: &mut [PredictionRecord]) {
    records.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.query_id.cmp(&b.query_id))
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then_with(|| a.t_start.total_cmp(&b.t_start))
            .then_with(|| a.t_end.total_cmp(&b.t_end))
    });
}
