//! An on-disk benchmark: query clips, reference videos and the manifest tying them together.
//!
//! Directory layout:
//!
//! ```text
//! <dir>/manifest.json       split, query membership, reference kinds, construction warnings
//! <dir>/queries.jsonl       one annotation record per query clip (a single full-length instance)
//! <dir>/references.jsonl    one annotation record per reference video
//! <dir>/features/*.svmf     feature files
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::queries::{extract_query_clips, QueryClip};
use super::reference::{build_reference_set, ReferenceKind, ReferenceVideo};
use super::split::{ClassSplit, QuerySet};
use crate::data::{
    load_annotated_videos, save_features, write_annotation_records, AnnotatedVideo,
    AnnotationRecord, TemporalInstance,
};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub split: ClassSplit,
    pub queries: Vec<QueryClip>,
    pub references: Vec<ReferenceVideo>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestReference {
    pub video_id: String,
    pub kind: ReferenceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub split: ClassSplit,
    pub queries: BTreeMap<QuerySet, Vec<String>>,
    pub references: Vec<ManifestReference>,
    pub warnings: Vec<String>,
}

/// Cuts the instances of `v1` into query clips and builds the reference gallery from `v2`.
pub fn build_corpus(
    v1: &[AnnotatedVideo],
    v2: &[AnnotatedVideo],
    split: ClassSplit,
    seed: u64,
) -> Result<Corpus> {
    let queries = extract_query_clips(v1, &split);
    let references = build_reference_set(v2, &mut seeded_rng(seed))?;
    let mut warnings = queries.warnings.clone();
    warnings.extend(references.warnings.iter().cloned());
    Ok(Corpus {
        split,
        queries: queries.into_all(),
        references: references.videos,
        warnings,
    })
}

impl Corpus {
    pub fn queries_in(&self, set: QuerySet) -> impl Iterator<Item = &QueryClip> {
        self.queries.iter().filter(move |q| q.set == set)
    }

    pub fn reference_videos(&self) -> impl Iterator<Item = &AnnotatedVideo> {
        self.references.iter().map(|r| &r.video)
    }

    pub fn reference(&self, video_id: &str) -> Option<&AnnotatedVideo> {
        self.references
            .iter()
            .map(|r| &r.video)
            .find(|v| v.video_id() == video_id)
    }

    pub fn manifest(&self) -> Manifest {
        let mut queries: BTreeMap<QuerySet, Vec<String>> = BTreeMap::new();
        for set in QuerySet::ALL {
            queries.insert(
                set,
                self.queries_in(set).map(|q| q.query_id.clone()).collect(),
            );
        }
        Manifest {
            version: 1,
            split: self.split.clone(),
            queries,
            references: self
                .references
                .iter()
                .map(|r| ManifestReference {
                    video_id: r.video.video_id().to_string(),
                    kind: r.kind,
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let mut query_records = Vec::with_capacity(self.queries.len());
        for q in &self.queries {
            let rel = format!("features/{}.svmf", q.query_id);
            save_features(&q.features, &dir.join(&rel))?;
            query_records.push(AnnotationRecord {
                video_id: q.query_id.clone(),
                duration_sec: q.features.duration_sec(),
                feature_path: rel,
                instances: vec![TemporalInstance::new(
                    q.class_id,
                    0.0,
                    q.features.duration_sec(),
                )],
            });
        }
        write_annotation_records(&dir.join("queries.jsonl"), &query_records)?;
        let mut ref_records = Vec::with_capacity(self.references.len());
        for (i, r) in self.references.iter().enumerate() {
            // merged ids can be long; the file name only needs to be unique
            let rel = format!("features/ref_{i:05}.svmf");
            save_features(&r.video.features, &dir.join(&rel))?;
            ref_records.push(AnnotationRecord {
                video_id: r.video.video_id().to_string(),
                duration_sec: r.video.duration_sec(),
                feature_path: rel,
                instances: r.video.instances.clone(),
            });
        }
        write_annotation_records(&dir.join("references.jsonl"), &ref_records)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, manifest + "\n").map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut set_of = BTreeMap::new();
        for (set, ids) in &manifest.queries {
            for id in ids {
                set_of.insert(id.clone(), *set);
            }
        }
        let queries = load_annotated_videos(&dir.join("queries.jsonl"))?
            .into_iter()
            .map(|v| {
                let id = v.video_id().to_string();
                let set = *set_of
                    .get(&id)
                    .ok_or_else(|| Error::Data(format!("query {id} missing from manifest")))?;
                let class_id = v
                    .instances
                    .first()
                    .ok_or_else(|| Error::Data(format!("query {id} has no class")))?
                    .class_id;
                Ok(QueryClip {
                    query_id: id,
                    class_id,
                    set,
                    features: v.features,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let kinds: BTreeMap<_, _> = manifest
            .references
            .iter()
            .map(|r| (r.video_id.clone(), r.kind))
            .collect();
        let references = load_annotated_videos(&dir.join("references.jsonl"))?
            .into_iter()
            .map(|video| {
                let kind = *kinds.get(video.video_id()).ok_or_else(|| {
                    Error::Data(format!("reference {} missing from manifest", video.video_id()))
                })?;
                Ok(ReferenceVideo { video, kind })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            split: manifest.split,
            queries,
            references,
            warnings: manifest.warnings,
        })
    }
}
