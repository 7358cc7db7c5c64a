//! Retrieval and localization metrics: tIoU, HR@K, mAP@K, AR@AN with AUC, and Prec@N.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const TIOU_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
pub const MAX_AN: usize = 100;

/// Temporal IoU of two intervals; rejects empty or reversed intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if !(a.0 < a.1) || !(b.0 < b.1) {
        return Err(Error::InvalidArgument(format!(
            "empty interval in tiou({a:?}, {b:?})"
        )));
    }
    Ok(tiou_unchecked(a, b))
}

pub(crate) fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One query's ranked list: relevance flags by rank, and the total number of relevant items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedRelevance {
    pub relevant: Vec<bool>,
    pub total_relevant: usize,
}

/// A mean over queries that also reports how many were excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub value: f64,
    pub counted: usize,
    pub excluded: usize,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff must be >= 1".into()));
    }
    Ok(())
}

fn average(values: impl Iterator<Item = Option<f64>>) -> Averaged {
    let (mut sum, mut counted, mut excluded) = (0.0, 0, 0);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                counted += 1;
            }
            None => excluded += 1,
        }
    }
    Averaged {
        value: if counted == 0 { 0.0 } else { sum / counted as f64 },
        counted,
        excluded,
    }
}

/// Fraction of queries with at least one relevant item in the top `k`.
pub fn hr_at_k(queries: &[RankedRelevance], k: usize) -> Result<Averaged> {
    check_k(k)?;
    Ok(average(queries.iter().map(|q| {
        (q.total_relevant > 0)
            .then(|| f64::from(u8::from(q.relevant.iter().take(k).any(|&r| r))))
    })))
}

/// `Σ_{i≤K} Prec(i)·rel(i) / min(K, R_q)`; `None` when the query has no relevant items.
pub fn ap_at_k(q: &RankedRelevance, k: usize) -> Result<Option<f64>> {
    check_k(k)?;
    if q.total_relevant == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in q.relevant.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(Some(sum / k.min(q.total_relevant) as f64))
}

pub fn map_at_k(queries: &[RankedRelevance], k: usize) -> Result<Averaged> {
    check_k(k)?;
    let aps = queries
        .iter()
        .map(|q| ap_at_k(q, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(aps.into_iter()))
}

/// Ranked predicted intervals and ground-truth intervals for one query-video pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub predictions: Vec<(f64, f64)>,
    pub ground_truth: Vec<(f64, f64)>,
}

/// Greedy one-to-one matching in rank order: for each of the first `an` predictions, the
/// unmatched ground truth with the highest tIoU ≥ `threshold` is consumed. Returns the number
/// of matched ground truths.
pub fn greedy_matches(preds: &[(f64, f64)], gts: &[(f64, f64)], an: usize, threshold: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut matched = 0;
    for &p in preds.iter().take(an) {
        let mut best: Option<(usize, f64)> = None;
        for (j, &g) in gts.iter().enumerate() {
            if used[j] {
                continue;
            }
            let iou = tiou_unchecked(p, g);
            if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            matched += 1;
        }
    }
    matched
}

/// Average recall at `AN = 1..=max_an`, averaged over tIoU thresholds and pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ArCurve {
    pub an: Vec<usize>,
    pub ar: Vec<f64>,
    pub pairs: usize,
    pub excluded: usize,
}

pub fn ar_at_an(sets: &[ProposalSet], max_an: usize, thresholds: &[f64]) -> Result<ArCurve> {
    check_k(max_an)?;
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no tIoU thresholds".into()));
    }
    let an: Vec<usize> = (1..=max_an).collect();
    let mut ar = vec![0.0; max_an];
    let mut pairs = 0;
    let mut excluded = 0;
    for set in sets {
        if set.ground_truth.is_empty() {
            excluded += 1;
            continue;
        }
        pairs += 1;
        let n_gt = set.ground_truth.len() as f64;
        for (i, &a) in an.iter().enumerate() {
            let mut r = 0.0;
            for &t in thresholds {
                r += greedy_matches(&set.predictions, &set.ground_truth, a, t) as f64 / n_gt;
            }
            ar[i] += r / thresholds.len() as f64;
        }
    }
    if pairs > 0 {
        ar.iter_mut().for_each(|v| *v /= pairs as f64);
    }
    Ok(ArCurve {
        an,
        ar,
        pairs,
        excluded,
    })
}

/// Trapezoidal area under AR over `AN ∈ [1, AN_max]`, divided by `AN_max`, as a percentage.
pub fn auc(curve: &ArCurve) -> f64 {
    let n = curve.ar.len();
    if n < 2 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 1..n {
        let w = (curve.an[i] - curve.an[i - 1]) as f64;
        area += w * 0.5 * (curve.ar[i] + curve.ar[i - 1]);
    }
    area / *curve.an.last().unwrap() as f64 * 100.0
}

/// First index where the curve decreases, if any.
pub fn recall_monotonicity_check(curve: &ArCurve) -> std::result::Result<(), usize> {
    match curve.ar.windows(2).position(|w| w[1] < w[0] - 1e-12) {
        Some(i) => Err(i + 1),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecAtN {
    pub value: f64,
    /// Queries that returned fewer than `N` clips.
    pub short_lists: usize,
    pub queries: usize,
}

/// Fraction of a query's top-`n` clips matching a distinct ground truth at tIoU ≥ `tau`.
///
/// Clips and ground truths are `(video_id, interval)`; a clip can only match ground truth in the
/// same video.
pub fn prec_at_n_single(
    clips: &[(String, (f64, f64))],
    gts: &[(String, (f64, f64))],
    n: usize,
    tau: f64,
) -> Result<(f64, bool)> {
    check_k(n)?;
    let take = clips.len().min(n);
    let mut used = vec![false; gts.len()];
    let mut hits = 0;
    for (vid, iv) in clips.iter().take(take) {
        let mut best: Option<(usize, f64)> = None;
        for (j, (gv, g)) in gts.iter().enumerate() {
            if used[j] || gv != vid {
                continue;
            }
            let iou = tiou_unchecked(*iv, *g);
            if iou >= tau && best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            hits += 1;
        }
    }
    let value = if take == 0 { 0.0 } else { hits as f64 / take as f64 };
    Ok((value, take < n))
}

pub fn prec_at_n(
    per_query: &[(Vec<(String, (f64, f64))>, Vec<(String, (f64, f64))>)],
    n: usize,
    tau: f64,
) -> Result<PrecAtN> {
    check_k(n)?;
    let mut sum = 0.0;
    let mut short = 0;
    for (clips, gts) in per_query {
        let (v, s) = prec_at_n_single(clips, gts, n, tau)?;
        sum += v;
        short += usize::from(s);
    }
    Ok(PrecAtN {
        value: if per_query.is_empty() {
            0.0
        } else {
            sum / per_query.len() as f64
        },
        short_lists: short,
        queries: per_query.len(),
    })
}

/// Ordered metric name → value pairs, rendered as `name = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: BTreeMap<String, String>,
}

impl Report {
    pub fn set(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn set_f(&mut self, key: impl Into<String>, value: f64) {
        self.set(key, format!("{value:.6}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

pub fn ar_curve_csv(curve: &ArCurve) -> String {
    let mut s = String::from("an,ar\n");
    for (a, r) in curve.an.iter().zip(&curve.ar) {
        let _ = writeln!(s, "{a},{r:.6}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((0.0, 2.0), (0.0, 2.0)).unwrap(), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert!((tiou((0.0, 2.0), (1.0, 3.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(tiou((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn ap_example() {
        let q = RankedRelevance {
            relevant: vec![true, false, true, false, false],
            total_relevant: 2,
        };
        assert!((ap_at_k(&q, 5).unwrap().unwrap() - 5.0 / 6.0).abs() < 1e-12);
        let none = RankedRelevance {
            relevant: vec![false; 3],
            total_relevant: 0,
        };
        let m = map_at_k(&[q.clone(), none], 5).unwrap();
        assert_eq!((m.counted, m.excluded), (1, 1));
        assert!(hr_at_k(&[q], 0).is_err());
    }

    #[test]
    fn top1_everywhere() {
        let qs = vec![
            RankedRelevance {
                relevant: vec![true, false],
                total_relevant: 1,
            };
            3
        ];
        assert_eq!(hr_at_k(&qs, 1).unwrap().value, 1.0);
        assert_eq!(map_at_k(&qs, 1).unwrap().value, 1.0);
    }

    #[test]
    fn ar_examples() {
        let one = ProposalSet {
            predictions: vec![(0.0, 3.0)],
            ground_truth: vec![(0.0, 4.0)],
        };
        let c = ar_at_an(&[one], 100, &TIOU_THRESHOLDS).unwrap();
        assert!((c.ar[0] - 0.6).abs() < 1e-12);

        let perfect = ProposalSet {
            predictions: vec![(0.0, 1.0), (2.0, 3.0)],
            ground_truth: vec![(0.0, 1.0), (2.0, 3.0)],
        };
        let c = ar_at_an(&[perfect], 100, &TIOU_THRESHOLDS).unwrap();
        assert_eq!(c.ar[0], 0.5);
        assert!(c.ar[1..].iter().all(|&v| v == 1.0));
        assert!(recall_monotonicity_check(&c).is_ok());
        assert!(auc(&c) > 98.0);

        let disjoint = ProposalSet {
            predictions: vec![(5.0, 6.0)],
            ground_truth: vec![(0.0, 1.0)],
        };
        let c = ar_at_an(&[disjoint], 100, &TIOU_THRESHOLDS).unwrap();
        assert_eq!(auc(&c), 0.0);

        let empty = ProposalSet {
            predictions: vec![],
            ground_truth: vec![],
        };
        assert_eq!(ar_at_an(&[empty], 10, &[0.5]).unwrap().excluded, 1);
    }

    #[test]
    fn decreasing_curve_flagged() {
        let c = ArCurve {
            an: vec![1, 2, 3],
            ar: vec![0.5, 0.6, 0.4],
            pairs: 1,
            excluded: 0,
        };
        assert_eq!(recall_monotonicity_check(&c), Err(2));
    }

    #[test]
    fn prec_examples() {
        let g = |a: f64, b: f64| ("v".to_string(), (a, b));
        let (p, short) = prec_at_n_single(
            &[g(0.0, 1.0), g(2.0, 3.0)],
            &[g(0.0, 1.0), g(2.0, 3.0)],
            2,
            0.5,
        )
        .unwrap();
        assert_eq!((p, short), (1.0, false));
        // tIoU 0.6 and 0.4 against distinct ground truths
        let (p, _) = prec_at_n_single(
            &[g(0.0, 6.0), g(10.0, 14.0)],
            &[g(0.0, 10.0), g(10.0, 20.0)],
            2,
            0.5,
        )
        .unwrap();
        assert_eq!(p, 0.5);
        // a single ground truth cannot be credited twice
        let (p, _) = prec_at_n_single(&[g(0.0, 1.0), g(0.0, 1.0)], &[g(0.0, 1.0)], 2, 0.5).unwrap();
        assert_eq!(p, 0.5);
        let (p, short) = prec_at_n_single(&[g(0.0, 1.0)], &[g(0.0, 1.0)], 3, 0.5).unwrap();
        assert_eq!((p, short), (1.0, true));
        let other = ("w".to_string(), (0.0, 1.0));
        assert_eq!(prec_at_n_single(&[g(0.0, 1.0)], &[other], 1, 0.5).unwrap().0, 0.0);
    }
}
