//! Score fusion, Gaussian soft-NMS and cross-video result assembly.

use std::cmp::Ordering;

use crate::data::{MomentPrediction, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::tiou_unchecked;
use crate::stage2::{BmGrid, ScoreMaps};

pub const DEFAULT_SOFT_NMS_SIGMA: f64 = 0.4;
/// Fused scores below this are dropped before soft-NMS.
pub const PRUNE_THRESHOLD: f64 = 1e-4;

/// Stage-1 cosine rescaled to `[0, 1]`, the `p` handed to [`fuse_scores`].
pub fn fusion_weight(cosine: f64) -> f64 {
    ((1.0 + cosine) / 2.0).clamp(0.0, 1.0)
}

/// One prediction per valid cell with score `max(p, 0)·M_R·M_C`, intervals in seconds.
pub fn fuse_scores(
    p: f64,
    maps: &ScoreMaps,
    video_id: &str,
    duration_sec: f64,
) -> Result<Vec<MomentPrediction>> {
    if !(-1.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "similarity {p} outside [-1, 1]"
        )));
    }
    if !(duration_sec > 0.0 && duration_sec.is_finite()) {
        return Err(Error::InvalidDuration);
    }
    let p = p.max(0.0);
    let l = maps.len;
    let grid = BmGrid::new(l);
    Ok(grid
        .cells()
        .iter()
        .map(|&(s, d)| {
            let (m_c, m_r) = maps.get(s, d);
            MomentPrediction::new(
                video_id,
                s as f64 / l as f64 * duration_sec,
                ((s + d + 1) as f64 / l as f64 * duration_sec).min(duration_sec),
                p * m_r * m_c,
            )
        })
        .collect())
}

/// Descending score, then ascending video id, then ascending start.
pub fn rank_order(a: &MomentPrediction, b: &MomentPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then_with(|| a.t_start.total_cmp(&b.t_start))
        .then_with(|| a.t_end.total_cmp(&b.t_end))
}

/// Gaussian soft-NMS: repeatedly keeps the best remaining prediction and decays the others by
/// `exp(−tIoU²/σ)` against it. Only predictions in the same video interact.
pub fn soft_nms(
    preds: Vec<MomentPrediction>,
    sigma: f64,
    top_k: Option<usize>,
) -> Result<Vec<MomentPrediction>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("soft-NMS sigma {sigma} must be > 0")));
    }
    let limit = top_k.unwrap_or(usize::MAX);
    let mut rest = preds;
    let mut out = Vec::new();
    while !rest.is_empty() && out.len() < limit {
        let best = (0..rest.len())
            .min_by(|&i, &j| rank_order(&rest[i], &rest[j]))
            .expect("non-empty");
        let top = rest.swap_remove(best);
        for r in &mut rest {
            if r.video_id == top.video_id {
                let iou = tiou_unchecked(top.interval(), r.interval());
                r.score *= (-iou * iou / sigma).exp();
            }
        }
        out.push(top);
    }
    Ok(out)
}

/// A stage-1 candidate with its stage-2 score maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMaps {
    pub video_id: String,
    pub similarity: f64,
    pub duration_sec: f64,
    pub maps: ScoreMaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledResults {
    /// Per-candidate result lists, in candidate order.
    pub per_video: Vec<(String, Vec<MomentPrediction>)>,
    /// All clips of all candidates, globally ranked.
    pub global: Vec<PredictionRecord>,
}

/// Per-candidate fuse, prune and soft-NMS, then a global merge by final score.
pub fn assemble_results(
    query_id: &str,
    candidates: &[CandidateMaps],
    sigma: f64,
    per_video_top_k: Option<usize>,
) -> Result<AssembledResults> {
    let mut per_video = Vec::with_capacity(candidates.len());
    let mut all = Vec::new();
    for c in candidates {
        let fused: Vec<MomentPrediction> =
            fuse_scores(c.similarity, &c.maps, &c.video_id, c.duration_sec)?
                .into_iter()
                .filter(|p| p.score >= PRUNE_THRESHOLD)
                .collect();
        let kept = soft_nms(fused, sigma, per_video_top_k)?;
        all.extend(kept.iter().cloned());
        per_video.push((c.video_id.clone(), kept));
    }
    all.sort_by(rank_order);
    let global = all
        .into_iter()
        .map(|p| PredictionRecord {
            query_id: query_id.to_string(),
            video_id: p.video_id,
            t_start: p.t_start,
            t_end: p.t_end,
            score: p.score,
        })
        .collect();
    Ok(AssembledResults { per_video, global })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(len: usize, m_c: f64, m_r: f64) -> ScoreMaps {
        let grid = BmGrid::new(len);
        let ones = vec![1.0; grid.num_cells()];
        let scale = |v: f64| grid.scatter(&ones).iter().map(|x| x * v).collect();
        ScoreMaps {
            len,
            m_c: scale(m_c),
            m_r: scale(m_r),
        }
    }

    #[test]
    fn fuse_examples() {
        let one = fuse_scores(1.0, &maps(3, 1.0, 1.0), "v", 30.0).unwrap();
        assert_eq!(one.len(), 6);
        assert!(one.iter().all(|p| p.score == 1.0));
        let f = fuse_scores(0.5, &maps(3, 0.9, 0.8), "v", 30.0).unwrap();
        assert!((f[0].score - 0.36).abs() < 1e-12);
        assert_eq!((f[0].t_start, f[0].t_end), (0.0, 10.0));
        assert!(fuse_scores(0.0, &maps(3, 0.9, 0.8), "v", 30.0)
            .unwrap()
            .iter()
            .all(|p| p.score == 0.0));
        assert!(fuse_scores(-0.5, &maps(3, 0.9, 0.8), "v", 30.0)
            .unwrap()
            .iter()
            .all(|p| p.score == 0.0));
        assert!(fuse_scores(1.5, &maps(3, 0.9, 0.8), "v", 30.0).is_err());
    }

    #[test]
    fn soft_nms_examples() {
        let a = MomentPrediction::new("v", 0.0, 1.0, 0.9);
        let single = soft_nms(vec![a.clone()], 0.4, None).unwrap();
        assert_eq!(single, vec![a.clone()]);
        let b = MomentPrediction::new("v", 0.0, 1.0, 0.8);
        let out = soft_nms(vec![b, a.clone()], 0.4, None).unwrap();
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-1.0f64 / 0.4).exp()).abs() < 1e-12);
        assert!((out[1].score - 0.0657).abs() < 1e-4);
        let c = MomentPrediction::new("v", 5.0, 6.0, 0.8);
        let out = soft_nms(vec![a, c], 0.4, None).unwrap();
        assert_eq!(out[1].score, 0.8);
        assert!(soft_nms(vec![], 0.0, None).is_err());
    }

    #[test]
    fn fusion_weight_is_monotone_in_unit_range() {
        assert_eq!(fusion_weight(-1.0), 0.0);
        assert_eq!(fusion_weight(0.0), 0.5);
        assert_eq!(fusion_weight(1.0), 1.0);
        assert!(fusion_weight(-0.3) < fusion_weight(-0.2));
    }

    #[test]
    fn higher_similarity_candidate_outranks() {
        let cands = vec![
            CandidateMaps {
                video_id: "b".into(),
                similarity: 0.1,
                duration_sec: 10.0,
                maps: maps(4, 0.9, 0.9),
            },
            CandidateMaps {
                video_id: "a".into(),
                similarity: 0.9,
                duration_sec: 10.0,
                maps: maps(4, 0.9, 0.9),
            },
        ];
        let r = assemble_results("q", &cands, 0.4, None).unwrap();
        // soft-NMS is scale-free within a video, so each interval keeps its place per video and
        // the clip from the more similar video always ranks above the same clip from the other
        for (i, p) in r.global.iter().enumerate().filter(|(_, p)| p.video_id == "a") {
            let twin = r
                .global
                .iter()
                .position(|o| o.video_id == "b" && o.t_start == p.t_start && o.t_end == p.t_end)
                .unwrap();
            assert!(i < twin);
        }
        assert_eq!(r.global[0].video_id, "a");
        assert_eq!(r.per_video.len(), 2);
    }

    #[test]
    fn dominant_cell_is_global_top() {
        let mut m = maps(4, 0.1, 0.1);
        m.m_c[4 + 1] = 1.0;
        m.m_r[4 + 1] = 1.0;
        let r = assemble_results(
            "q",
            &[CandidateMaps {
                video_id: "v".into(),
                similarity: 1.0,
                duration_sec: 8.0,
                maps: m,
            }],
            0.4,
            None,
        )
        .unwrap();
        assert_eq!((r.global[0].t_start, r.global[0].t_end), (2.0, 6.0));
    }
}
