//! End-to-end retrieval (stage-1 search, stage-2 re-localization, assembly) and evaluation.

use std::collections::{BTreeMap, HashMap};

use crate::benchmark::QueryClip;
use crate::data::{AnnotatedVideo, CandidateRecord, ClassId, FeatureSequence, PredictionRecord};
use crate::error::{Error, Result};
use crate::gallery::{GalleryIndex, SearchHit};
use crate::metrics::{
    ar_at_an, auc, hr_at_k, map_at_k, prec_at_n, recall_monotonicity_check, ArCurve,
    ProposalSet, RankedRelevance, Report, MAX_AN, TIOU_THRESHOLDS,
};
use crate::postprocess::{assemble_results, AssembledResults, CandidateMaps};
use crate::stage1::Stage1Model;
use crate::stage2::Stage2Model;

pub const DEFAULT_TOP_VIDEOS: usize = 10;
pub const DEFAULT_TIOU_TAU: f64 = 0.5;

/// Everything needed to answer a query against an indexed gallery.
pub struct Retriever<'a> {
    pub stage1: &'a Stage1Model,
    pub stage2: &'a Stage2Model,
    pub index: &'a GalleryIndex,
    references: HashMap<&'a str, &'a AnnotatedVideo>,
    pub top_videos: usize,
    pub sigma: f64,
    /// Clips kept per candidate video after soft-NMS.
    pub per_video_top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub candidates: Vec<SearchHit>,
    pub results: AssembledResults,
}

impl QueryResult {
    pub fn candidate_records(&self, query_id: &str) -> Vec<CandidateRecord> {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, h)| CandidateRecord {
                query_id: query_id.to_string(),
                rank: i + 1,
                video_id: h.video_id.clone(),
                score: h.score,
            })
            .collect()
    }
}

impl<'a> Retriever<'a> {
    pub fn new(
        stage1: &'a Stage1Model,
        stage2: &'a Stage2Model,
        index: &'a GalleryIndex,
        references: &[&'a AnnotatedVideo],
    ) -> Result<Self> {
        let references: HashMap<&str, &AnnotatedVideo> =
            references.iter().map(|v| (v.video_id(), *v)).collect();
        if let Some(e) = index
            .entries()
            .iter()
            .find(|e| !references.contains_key(e.video_id.as_str()))
        {
            return Err(Error::Data(format!(
                "indexed video {} has no reference features",
                e.video_id
            )));
        }
        Ok(Self {
            stage1,
            stage2,
            index,
            references,
            top_videos: DEFAULT_TOP_VIDEOS,
            sigma: crate::postprocess::DEFAULT_SOFT_NMS_SIGMA,
            per_video_top_k: Some(MAX_AN),
        })
    }

    pub fn query(&self, query_id: &str, features: &FeatureSequence) -> Result<QueryResult> {
        let e_q = self.stage1.embed_query_clip(features)?;
        let candidates = self.index.search(&e_q, self.top_videos)?;
        let f_q = self.stage2.prepare_query(features)?;
        let mut maps = Vec::with_capacity(candidates.len());
        for hit in &candidates {
            let video = self.references[hit.video_id.as_str()];
            let f_r = self.stage2.prepare_reference(&video.features)?;
            maps.push(CandidateMaps {
                video_id: hit.video_id.clone(),
                similarity: crate::postprocess::fusion_weight(hit.score),
                duration_sec: video.duration_sec(),
                maps: self.stage2.predict(&f_q, &f_r)?,
            });
        }
        let results = assemble_results(query_id, &maps, self.sigma, self.per_video_top_k)?;
        Ok(QueryResult {
            candidates,
            results,
        })
    }
}

/// Relevance of a ranked video list for a query class: a video is relevant iff it contains the class.
pub fn ranked_relevance(
    ranked: &[String],
    class: ClassId,
    references: &HashMap<&str, &AnnotatedVideo>,
) -> RankedRelevance {
    RankedRelevance {
        relevant: ranked
            .iter()
            .map(|id| references.get(id.as_str()).is_some_and(|v| v.has_class(class)))
            .collect(),
        total_relevant: references.values().filter(|v| v.has_class(class)).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Metrics {
    pub hr_at_1: f64,
    pub hr_at_10: f64,
    pub map_at_1: f64,
    pub map_at_10: f64,
    pub queries: usize,
    pub excluded: usize,
}

/// Ranks the whole gallery for every query and scores HR@K and mAP@K.
pub fn evaluate_stage1(
    model: &Stage1Model,
    index: &GalleryIndex,
    queries: &[&QueryClip],
    references: &[&AnnotatedVideo],
) -> Result<Stage1Metrics> {
    let refs: HashMap<&str, &AnnotatedVideo> =
        references.iter().map(|v| (v.video_id(), *v)).collect();
    let k = index.len().max(1);
    let rankings = queries
        .iter()
        .map(|q| {
            let hits = index.search(&model.embed_query_clip(&q.features)?, k)?;
            let ids: Vec<String> = hits.into_iter().map(|h| h.video_id).collect();
            Ok(ranked_relevance(&ids, q.class_id, &refs))
        })
        .collect::<Result<Vec<_>>>()?;
    let map1 = map_at_k(&rankings, 1)?;
    Ok(Stage1Metrics {
        hr_at_1: hr_at_k(&rankings, 1)?.value,
        hr_at_10: hr_at_k(&rankings, 10)?.value,
        map_at_1: map1.value,
        map_at_10: map_at_k(&rankings, 10)?.value,
        queries: map1.counted,
        excluded: map1.excluded,
    })
}

/// Ground truth of a query: every instance of its class in any reference, as `(video_id, interval)`.
pub fn query_ground_truth(
    class: ClassId,
    references: &[&AnnotatedVideo],
) -> Vec<(String, (f64, f64))> {
    references
        .iter()
        .flat_map(|v| {
            v.instances_of(class)
                .map(|i| (v.video_id().to_string(), (i.t_start, i.t_end)))
        })
        .collect()
}

/// Inputs to [`evaluate_predictions`] describing the benchmark side.
pub struct GroundTruth<'a> {
    pub queries: Vec<&'a QueryClip>,
    pub references: Vec<&'a AnnotatedVideo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: Report,
    pub curve: ArCurve,
}

/// Scores candidate and prediction files against the benchmark.
///
/// Stage-1 metrics come from the candidate ranks, AR@AN/AUC from the predictions of each
/// retrieved relevant (query, video) pair, and Prec@N from each query's global clip ranking.
pub fn evaluate_predictions(
    gt: &GroundTruth<'_>,
    candidates: &[CandidateRecord],
    predictions: &[PredictionRecord],
    tau: f64,
) -> Result<Evaluation> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tIoU threshold {tau} outside [0, 1]")));
    }
    let refs: HashMap<&str, &AnnotatedVideo> =
        gt.references.iter().map(|v| (v.video_id(), *v)).collect();
    let mut cand_by_q: BTreeMap<&str, Vec<&CandidateRecord>> = BTreeMap::new();
    for c in candidates {
        cand_by_q.entry(&c.query_id).or_default().push(c);
    }
    let mut pred_by_q: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for p in predictions {
        pred_by_q.entry(&p.query_id).or_default().push(p);
    }

    let mut rankings = Vec::new();
    let mut prec_inputs = Vec::new();
    let mut sets = Vec::new();
    let mut unknown = 0usize;
    for q in &gt.queries {
        let mut cands = cand_by_q.remove(q.query_id.as_str()).unwrap_or_default();
        cands.sort_by_key(|c| c.rank);
        let ids: Vec<String> = cands.iter().map(|c| c.video_id.clone()).collect();
        rankings.push(ranked_relevance(&ids, q.class_id, &refs));

        let mut preds = pred_by_q.remove(q.query_id.as_str()).unwrap_or_default();
        preds.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.video_id.cmp(&b.video_id))
                .then_with(|| a.t_start.total_cmp(&b.t_start))
        });
        let clips: Vec<(String, (f64, f64))> = preds
            .iter()
            .map(|p| (p.video_id.clone(), (p.t_start, p.t_end)))
            .collect();
        prec_inputs.push((clips, query_ground_truth(q.class_id, &gt.references)));

        let mut seen: Vec<&str> = Vec::new();
        for id in &ids {
            if seen.contains(&id.as_str()) {
                continue;
            }
            seen.push(id);
            let Some(video) = refs.get(id.as_str()) else {
                unknown += 1;
                continue;
            };
            if !video.has_class(q.class_id) {
                continue;
            }
            sets.push(ProposalSet {
                predictions: preds
                    .iter()
                    .filter(|p| p.video_id == *id)
                    .map(|p| (p.t_start, p.t_end))
                    .collect(),
                ground_truth: video
                    .instances_of(q.class_id)
                    .map(|i| (i.t_start, i.t_end))
                    .collect(),
            });
        }
    }
    unknown += cand_by_q.len() + pred_by_q.len();

    let curve = ar_at_an(&sets, MAX_AN, &TIOU_THRESHOLDS)?;
    let mut report = Report::default();
    report.set("queries", gt.queries.len());
    report.set("unmatched_records", unknown);
    for k in [1, 5, 10] {
        report.set_f(format!("stage1.hr@{k}"), hr_at_k(&rankings, k)?.value);
        report.set_f(format!("stage1.map@{k}"), map_at_k(&rankings, k)?.value);
    }
    report.set("stage1.excluded_queries", map_at_k(&rankings, 1)?.excluded);
    report.set("stage2.pairs", curve.pairs);
    for an in [1, 5, 10, 50, 100] {
        if an <= curve.ar.len() {
            report.set_f(format!("stage2.ar@{an}"), curve.ar[an - 1]);
        }
    }
    report.set_f("stage2.auc", auc(&curve));
    report.set(
        "stage2.recall_monotone",
        recall_monotonicity_check(&curve).is_ok(),
    );
    report.set_f("e2e.tiou_tau", tau);
    for n in [1, 5, 10] {
        let p = prec_at_n(&prec_inputs, n, tau)?;
        report.set_f(format!("e2e.prec@{n}"), p.value);
        report.set(format!("e2e.prec@{n}.short_lists"), p.short_lists);
    }
    Ok(Evaluation { report, curve })
}
