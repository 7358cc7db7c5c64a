//! Persisted reference-embedding gallery with exhaustive max-cosine search.
//!
//! File layout (little-endian): magic `SVMIDX`, `u32` version, `u32` d_e, `u32` T_emb, `u32` count,
//! then per entry `u32` id length, id bytes and `d_e·T_emb` `f32` values (row-major `d_e × T_emb`).

use std::collections::HashSet;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::checkpoint::guarded_write;
use crate::data::AnnotatedVideo;
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::stage1::{max_cos_similarity, Stage1Model};

pub const INDEX_MAGIC: &[u8; 6] = b"SVMIDX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub video_id: String,
    pub embedding: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub video_id: String,
    pub score: f64,
}

/// An immutable, ordered gallery. Values are stored at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    embed_dim: usize,
    t_emb: usize,
    entries: Vec<GalleryEntry>,
}

impl GalleryIndex {
    pub fn empty(embed_dim: usize, t_emb: usize) -> Self {
        Self {
            embed_dim,
            t_emb,
            entries: Vec::new(),
        }
    }

    /// Order-preserving build; rejects duplicate ids and inconsistent shapes.
    pub fn build(embed_dim: usize, t_emb: usize, gallery: Vec<(String, Mat)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(gallery.len());
        for (video_id, e) in gallery {
            if !seen.insert(video_id.clone()) {
                return Err(Error::Data(format!("duplicate video id {video_id} in gallery")));
            }
            if e.shape() != (embed_dim, t_emb) {
                return Err(Error::shape(format!(
                    "embedding of {video_id} is {:?}, expected ({embed_dim}, {t_emb})",
                    e.shape()
                )));
            }
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("embedding of {video_id}")));
            }
            entries.push(GalleryEntry {
                video_id,
                embedding: e.map(|v| v as f32 as f64),
            });
        }
        Ok(Self {
            embed_dim,
            t_emb,
            entries,
        })
    }

    /// Embeds every reference video with the stage-1 reference encoder.
    pub fn embed(model: &Stage1Model, videos: &[&AnnotatedVideo]) -> Result<Self> {
        let gallery = videos
            .iter()
            .map(|v| Ok((v.video_id().to_string(), model.embed_reference_video(&v.features)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::build(model.config.embed_dim, model.config.t_emb, gallery)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn t_emb(&self) -> usize {
        self.t_emb
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    /// Top-`k` videos by max-cosine score, ties broken by ascending video id.
    pub fn search(&self, e_q: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let mut hits = self
            .entries
            .iter()
            .map(|e| {
                Ok(SearchHit {
                    video_id: e.video_id.clone(),
                    score: max_cos_similarity(e_q, &e.embedding)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.video_id.cmp(&b.video_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        for v in [
            INDEX_VERSION,
            self.embed_dim as u32,
            self.t_emb as u32,
            self.entries.len() as u32,
        ] {
            out.write_u32::<LittleEndian>(v).unwrap();
        }
        for e in &self.entries {
            out.write_u32::<LittleEndian>(e.video_id.len() as u32)
                .unwrap();
            out.extend_from_slice(e.video_id.as_bytes());
            for &v in e.embedding.as_slice() {
                out.write_f32::<LittleEndian>(v as f32).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |_| Error::Truncated(path.into());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 6];
        cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "SVMIDX".into(),
            });
        }
        let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                version,
            });
        }
        let d_e = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let t_emb = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let count = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let n = d_e * t_emb;
        let mut gallery = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if len > bytes.len() || n * 4 > bytes.len() {
                return Err(Error::Truncated(path.into()));
            }
            let mut id = vec![0u8; len];
            cur.read_exact(&mut id).map_err(truncated)?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::Format(format!("non-UTF-8 video id in {}", path.display())))?;
            let mut vals = vec![0f32; n];
            cur.read_f32_into::<LittleEndian>(&mut vals)
                .map_err(truncated)?;
            let e = Mat::from_vec(d_e, t_emb, vals.into_iter().map(f64::from).collect())?;
            gallery.push((id, e));
        }
        if cur.position() as usize != bytes.len() {
            return Err(Error::Format(format!("trailing bytes in {}", path.display())));
        }
        Self::build(d_e, t_emb, gallery)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        guarded_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
