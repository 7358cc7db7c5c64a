//! Brute-force oracles and small fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use svmr::data::MomentPrediction;
use svmr::gallery::GalleryIndex;
use svmr::metrics::{ap_at_k, ar_at_an, tiou, ProposalSet, RankedRelevance, TIOU_THRESHOLDS};
use svmr::nn::{seeded_rng, Mat};
use svmr::postprocess::soft_nms;
use svmr::stage2::bm_sample;

pub const ORACLE_TOL: f64 = 1e-6;

/// Outcome of comparing one operation against its oracle over many random instances.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub max_err: f64,
    /// Instances whose discrete output (order, count, ids) differed.
    pub mismatches: usize,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.instances >= 100 && self.mismatches == 0 && self.max_err <= ORACLE_TOL
    }
}

fn interval(rng: &mut ChaCha8Rng, span: f64) -> (f64, f64) {
    let a = rng.gen_range(0.0..span);
    let len = rng.gen_range(0.05..span / 2.0);
    (a, a + len)
}

// Overlap by explicit case analysis on the interval endpoints.
pub fn tiou_oracle(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    let inter = if second.0 >= first.1 {
        0.0
    } else if second.1 <= first.1 {
        second.1 - second.0
    } else {
        first.1 - second.0
    };
    inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
}

pub fn check_tiou(n: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    for i in 0..n {
        let a = interval(&mut rng, 10.0);
        // every fifth instance shares an endpoint or nests exactly
        let b = match i % 5 {
            0 => (a.1, a.1 + 1.0),
            1 => (a.0, a.1),
            _ => interval(&mut rng, 10.0),
        };
        max_err = max_err.max((tiou(a, b).unwrap() - tiou_oracle(a, b)).abs());
    }
    OracleOutcome { name: "tiou", instances: n, max_err, mismatches: 0 }
}

/// Evaluates the piecewise-linear interpolant of `row` at position `x` by scanning segments.
fn interp(row: &[f64], x: f64) -> f64 {
    for i in 0..row.len() - 1 {
        let (lo, hi) = (i as f64, (i + 1) as f64);
        if x >= lo && x <= hi {
            return row[i] + (x - lo) * (row[i + 1] - row[i]);
        }
    }
    row[row.len() - 1]
}

/// Dense `C × N × L × L` sampling: cell `(s, d)` spans snippets `s..=s+d`, sampled at `N` evenly
/// spaced positions including both ends; cells past the end stay zero.
pub fn bm_sample_oracle(f: &Mat, n: usize) -> Vec<f64> {
    let (c_n, l) = f.shape();
    let mut out = vec![0.0; c_n * n * l * l];
    for c in 0..c_n {
        let row = f.row(c);
        for s in 0..l {
            for d in 0..l {
                if s + d + 1 > l {
                    continue;
                }
                for j in 0..n {
                    let x = s as f64 + (d as f64) * (j as f64) / ((n - 1) as f64);
                    out[((c * n + j) * l + s) * l + d] = interp(row, x);
                }
            }
        }
    }
    out
}

pub fn check_bm_sample(n_inst: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..n_inst {
        let (c, l, n) = (rng.gen_range(1..5), rng.gen_range(1..10), rng.gen_range(2..6));
        let f = Mat::from_vec(c, l, (0..c * l).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let got = bm_sample(&f, n).unwrap().to_dense();
        let want = bm_sample_oracle(&f, n);
        if got.len() != want.len() {
            mismatches += 1;
            continue;
        }
        for (g, w) in got.iter().zip(&want) {
            max_err = max_err.max((g - w).abs());
        }
    }
    OracleOutcome { name: "bm_sample", instances: n_inst, max_err, mismatches }
}

/// Selection-sort ranking by max cosine, ties to the smaller id.
pub fn max_cos_ranking_oracle(q: &[f64], gallery: &[(String, Mat)]) -> Vec<(String, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = gallery
        .iter()
        .map(|(id, e)| {
            let mut best = f64::NEG_INFINITY;
            for t in 0..e.cols() {
                let col: Vec<f64> = (0..e.rows()).map(|r| e.get(r, t) as f32 as f64).collect();
                let dot: f64 = q.iter().zip(&col).map(|(a, b)| a * b).sum();
                best = best.max(dot / (norm(q) * norm(&col)));
            }
            (id.clone(), best)
        })
        .collect();
    let mut out = Vec::new();
    while !scored.is_empty() {
        let mut pick = 0;
        for i in 1..scored.len() {
            let (a, b) = (&scored[i], &scored[pick]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                pick = i;
            }
        }
        out.push(scored.remove(pick));
    }
    out
}

pub fn check_max_cos_ranking(n_inst: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..n_inst {
        let (d, t, m) = (rng.gen_range(2..8), rng.gen_range(1..5), rng.gen_range(1..15));
        let gallery: Vec<(String, Mat)> = (0..m)
            .map(|i| {
                let e = Mat::from_vec(d, t, (0..d * t).map(|_| rng.gen_range(-1.0..1.0)).collect());
                (format!("v{:02}", m - 1 - i), e.unwrap())
            })
            .collect();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let index = GalleryIndex::build(d, t, gallery.clone()).unwrap();
        let got = index.search(&q, m).unwrap();
        let want = max_cos_ranking_oracle(&q, &gallery);
        if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.video_id != w.0) {
            mismatches += 1;
        }
        for (g, w) in got.iter().zip(&want) {
            max_err = max_err.max((g.score - w.1).abs());
        }
    }
    OracleOutcome { name: "max_cos_ranking", instances: n_inst, max_err, mismatches }
}

/// Soft-NMS that recomputes each candidate's score from its original value and every kept
/// prediction, instead of decaying in place.
pub fn soft_nms_oracle(preds: &[MomentPrediction], sigma: f64) -> Vec<MomentPrediction> {
    let mut kept: Vec<MomentPrediction> = Vec::new();
    let mut rest: Vec<MomentPrediction> = preds.to_vec();
    while !rest.is_empty() {
        let current: Vec<f64> = rest
            .iter()
            .map(|p| {
                kept.iter()
                    .filter(|k| k.video_id == p.video_id)
                    .map(|k| {
                        let o = tiou_oracle(k.interval(), p.interval());
                        (-o * o / sigma).exp()
                    })
                    .product::<f64>()
                    * p.score
            })
            .collect();
        let mut pick = 0;
        for i in 1..rest.len() {
            let better = current[i] > current[pick]
                || (current[i] == current[pick]
                    && (rest[i].video_id.as_str(), rest[i].t_start)
                        < (rest[pick].video_id.as_str(), rest[pick].t_start));
            if better {
                pick = i;
            }
        }
        let mut p = rest.remove(pick);
        p.score = current[pick];
        kept.push(p);
    }
    kept
}

pub fn check_soft_nms(n_inst: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..n_inst {
        let m = rng.gen_range(1..25);
        let sigma = rng.gen_range(0.1..1.0);
        let preds: Vec<MomentPrediction> = (0..m)
            .map(|_| {
                let (a, b) = interval(&mut rng, 20.0);
                let v = format!("v{}", rng.gen_range(0..3));
                MomentPrediction::new(v, a, b, rng.gen_range(0.0..1.0))
            })
            .collect();
        let got = soft_nms(preds.clone(), sigma, None).unwrap();
        let want = soft_nms_oracle(&preds, sigma);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| {
                g.video_id == w.video_id && g.t_start == w.t_start && g.t_end == w.t_end
            });
        if !same {
            mismatches += 1;
            continue;
        }
        for (g, w) in got.iter().zip(&want) {
            max_err = max_err.max((g.score - w.score).abs());
        }
    }
    OracleOutcome { name: "soft_nms", instances: n_inst, max_err, mismatches }
}

/// AP@K with each precision recounted from the top of the list.
pub fn ap_oracle(rel: &[bool], total: usize, k: usize) -> Option<f64> {
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..k.min(rel.len()) {
        if rel[i] {
            let hits = rel[..=i].iter().filter(|&&r| r).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / k.min(total) as f64)
}

pub fn check_ap(n_inst: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..n_inst {
        let len = rng.gen_range(0..20);
        let relevant: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.3)).collect();
        let shown = relevant.iter().filter(|&&r| r).count();
        let total_relevant = shown + rng.gen_range(0..3);
        let k = rng.gen_range(1..25);
        let q = RankedRelevance { relevant: relevant.clone(), total_relevant };
        match (ap_at_k(&q, k).unwrap(), ap_oracle(&relevant, total_relevant, k)) {
            (Some(g), Some(w)) => max_err = max_err.max((g - w).abs()),
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    OracleOutcome { name: "ap_at_k", instances: n_inst, max_err, mismatches }
}

/// Recall of one set at one AN and threshold, matching from scratch: each of the first `an`
/// predictions claims the free ground truth of highest tIoU at or above the threshold.
fn recall_oracle(set: &ProposalSet, an: usize, thr: f64) -> f64 {
    let mut free: Vec<(usize, (f64, f64))> = set.ground_truth.iter().copied().enumerate().collect();
    let mut hits = 0;
    for p in set.predictions.iter().take(an) {
        let best = free
            .iter()
            .enumerate()
            .map(|(slot, (idx, g))| (slot, *idx, tiou_oracle(*p, *g)))
            .filter(|&(_, _, o)| o >= thr)
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
        if let Some((slot, _, _)) = best {
            free.remove(slot);
            hits += 1;
        }
    }
    hits as f64 / set.ground_truth.len() as f64
}

pub fn ar_oracle(sets: &[ProposalSet], max_an: usize, thresholds: &[f64]) -> Vec<f64> {
    let scored: Vec<&ProposalSet> = sets.iter().filter(|s| !s.ground_truth.is_empty()).collect();
    (1..=max_an)
        .map(|an| {
            let total: f64 = scored
                .iter()
                .map(|s| thresholds.iter().map(|&t| recall_oracle(s, an, t)).sum::<f64>() / thresholds.len() as f64)
                .sum();
            if scored.is_empty() { 0.0 } else { total / scored.len() as f64 }
        })
        .collect()
}

pub fn check_ar(n_inst: usize, seed: u64) -> OracleOutcome {
    let mut rng = seeded_rng(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..n_inst {
        let sets: Vec<ProposalSet> = (0..rng.gen_range(1..4))
            .map(|_| {
                let gts = rng.gen_range(0..4);
                ProposalSet {
                    ground_truth: (0..gts).map(|_| interval(&mut rng, 30.0)).collect(),
                    predictions: (0..rng.gen_range(0..30)).map(|_| interval(&mut rng, 30.0)).collect(),
                }
            })
            .collect();
        let max_an = rng.gen_range(1..40);
        let got = ar_at_an(&sets, max_an, &TIOU_THRESHOLDS).unwrap();
        for (g, w) in got.ar.iter().zip(ar_oracle(&sets, max_an, &TIOU_THRESHOLDS)) {
            max_err = max_err.max((g - w).abs());
        }
    }
    OracleOutcome { name: "ar_at_an", instances: n_inst, max_err, mismatches: 0 }
}

pub fn run_oracles(n: usize, seed: u64) -> Vec<OracleOutcome> {
    vec![
        check_bm_sample(n, seed),
        check_max_cos_ranking(n, seed + 1),
        check_soft_nms(n, seed + 2),
        check_tiou(n, seed + 3),
        check_ap(n, seed + 4),
        check_ar(n, seed + 5),
    ]
}

/// `(name, computed, derived)` for the closed-form examples.
pub fn analytic_checks() -> Vec<(&'static str, f64, f64)> {
    use svmr::stage1::loss::{max_cos_similarity, similarity_loss};
    use svmr::stage2::{rlm_loss, ScoreMaps, Stage2Config};

    let e_r = Mat::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]);
    let cos = max_cos_similarity(&[1.0, 1.0], &e_r).unwrap();

    let both = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]);
    let sim = similarity_loss(&[1.0, 0.0], &both, &[1.0, -1.0]).unwrap();

    let nms = soft_nms(
        vec![
            MomentPrediction::new("v", 0.0, 5.0, 0.9),
            MomentPrediction::new("v", 0.0, 5.0, 0.8),
        ],
        0.4,
        None,
    )
    .unwrap();

    let maps = ScoreMaps { len: 1, m_c: vec![0.5], m_r: vec![1.0] };
    let logistic = rlm_loss(&maps, &[1.0], &Stage2Config::default()).unwrap().loss.classification;

    vec![
        ("max_cos_similarity", cos, std::f64::consts::FRAC_1_SQRT_2),
        ("similarity_loss", sim, 2.0),
        ("soft_nms_decay", nms[1].score / 0.8, (-1.0f64 / 0.4).exp()),
        ("soft_nms_score", nms[1].score, 0.8 * (-1.0f64 / 0.4).exp()),
        ("logistic_half", logistic, std::f64::consts::LN_2),
    ]
}

/// Runs `count` random stage-2 forwards and counts invalid cells that are not exactly zero in
/// the sampled map, the fused map, both score maps and the label map.
pub fn masking_violations(count: usize, seed: u64) -> usize {
    use svmr::stage2::{gt_label_map, Stage2Config, Stage2Model};

    let mut rng = seeded_rng(seed);
    let mut violations = 0;
    for i in 0..count {
        let cfg = Stage2Config {
            channels: rng.gen_range(1..5),
            query_len: rng.gen_range(1..4),
            ref_len: rng.gen_range(2..9),
            hidden: rng.gen_range(1..5),
            feat: rng.gen_range(1..5),
            samples: rng.gen_range(2..5),
            head: rng.gen_range(1..5),
            query_branch: i % 2 == 0,
            ..Stage2Config::default()
        };
        let model = Stage2Model::new(cfg.clone(), seed + i as u64).unwrap();
        let mut rand_mat = |r: usize, c: usize| {
            Mat::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let f_q = rand_mat(cfg.channels, cfg.query_len);
        let f_r = rand_mat(cfg.channels, cfg.ref_len);
        let (maps, cache) = model.forward(&f_q, &f_r).unwrap();
        let l = cfg.ref_len;
        let a = rng.gen_range(0.0..l as f64 - 1.0);
        let g = gt_label_map(&[(a, a + 1.0)], l);

        let invalid = |s: usize, d: usize| s + d + 1 > l;
        let per_cell = cfg.feat * cfg.samples;
        let dense_maps = [cache.bm.to_dense(), cache.fused_dense()];
        for s in 0..l {
            for d in 0..l {
                if !invalid(s, d) {
                    continue;
                }
                let k = s * l + d;
                for v in [maps.m_c[k], maps.m_r[k], g[k]] {
                    violations += usize::from(v != 0.0);
                }
                for dense in &dense_maps {
                    for ch in 0..per_cell {
                        violations += usize::from(dense[ch * l * l + k] != 0.0);
                    }
                }
            }
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuilderContract {
    /// Unchanged, two-source and three-source counts.
    pub mix: (usize, usize, usize),
    pub invalid: usize,
    /// Merged videos whose sources share a class.
    pub collisions: usize,
}

/// Builds references from `n` single-class synthetic videos and audits the result.
pub fn builder_contract(n: usize, seed: u64) -> BuilderContract {
    use std::collections::BTreeSet;
    use svmr::benchmark::{build_reference_set, draw_prototypes, synth_sources, ReferenceKind, SynthConfig};
    use svmr::data::validate_annotations;

    let config = SynthConfig { seed, ..SynthConfig::default() };
    let videos = synth_sources(&config, &draw_prototypes(&config), "src", n, 9).unwrap();
    let set = build_reference_set(&videos, &mut seeded_rng(seed + 1)).unwrap();
    let mut collisions = 0;
    for r in &set.videos {
        let sources = match r.kind {
            ReferenceKind::Unchanged => 1,
            ReferenceKind::TwoSource => 2,
            ReferenceKind::ThreeSource => 3,
        };
        let classes: BTreeSet<_> = r.video.instances.iter().map(|i| i.class_id).collect();
        collisions += usize::from(classes.len() != sources);
    }
    BuilderContract {
        mix: (
            set.count(ReferenceKind::Unchanged),
            set.count(ReferenceKind::TwoSource),
            set.count(ReferenceKind::ThreeSource),
        ),
        invalid: set.videos.iter().filter(|r| !validate_annotations(&r.video).is_empty()).count(),
        collisions,
    }
}

pub fn tiny_config_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.cfg")
}

pub fn tiny_config() -> svmr::app::PipelineConfig {
    svmr::app::PipelineConfig::resolve(Some(&tiny_config_path()), &[], None).unwrap()
}
