use std::path::Path;

use proptest::prelude::*;
use svmr::config::KvConfig;
use svmr::data::{FeatureSequence, MomentPrediction};
use svmr::gallery::GalleryIndex;
use svmr::metrics::{ar_at_an, recall_monotonicity_check, tiou, ProposalSet, TIOU_THRESHOLDS};
use svmr::nn::Mat;
use svmr::postprocess::soft_nms;

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0.0..50.0f64, 0.01..20.0f64).prop_map(|(a, l)| (a, a + l))
}

fn features() -> impl Strategy<Value = FeatureSequence> {
    (1usize..6, 1usize..12, 0.5f32..100.0).prop_flat_map(|(c, l, dur)| {
        prop::collection::vec(-1e3f32..1e3, c * l)
            .prop_map(move |data| FeatureSequence::new("vid", c, l, dur, data).unwrap())
    })
}

proptest! {
    #[test]
    fn feature_files_round_trip(seq in features()) {
        let bytes = seq.to_bytes();
        let back = FeatureSequence::from_bytes("vid", &bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn truncated_feature_files_are_rejected(seq in features(), cut in 1usize..8) {
        let bytes = seq.to_bytes();
        let n = bytes.len().saturating_sub(cut);
        prop_assert!(FeatureSequence::from_bytes("vid", &bytes[..n], Path::new("mem")).is_err());
    }

    #[test]
    fn gallery_index_round_trips(d in 1usize..6, t in 1usize..4, vals in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let per = d * t;
        let gallery: Vec<(String, Mat)> = vals
            .chunks_exact(per)
            .enumerate()
            .map(|(i, c)| (format!("v{i}"), Mat::from_vec(d, t, c.to_vec()).unwrap()))
            .collect();
        let index = GalleryIndex::build(d, t, gallery).unwrap();
        let back = GalleryIndex::from_bytes(&index.to_bytes(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), index.len());
        for (a, b) in back.entries().iter().zip(index.entries()) {
            prop_assert_eq!(&a.video_id, &b.video_id);
            prop_assert_eq!(&a.embedding, &b.embedding);
        }
    }

    #[test]
    fn tiou_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let ab = tiou(a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, tiou(b, a).unwrap());
        prop_assert!((tiou(a, a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_nms_only_decays_and_keeps_everything(
        raw in prop::collection::vec((interval(), 0.0..1.0f64, 0usize..3), 0..30),
        sigma in 0.05..2.0f64,
    ) {
        let preds: Vec<MomentPrediction> = raw
            .iter()
            .map(|&((a, b), s, v)| MomentPrediction::new(format!("v{v}"), a, b, s))
            .collect();
        let out = soft_nms(preds.clone(), sigma, None).unwrap();
        prop_assert_eq!(out.len(), preds.len());
        for p in &out {
            let orig = preds.iter().filter(|q| q.video_id == p.video_id && q.interval() == p.interval());
            prop_assert!(orig.clone().any(|q| p.score <= q.score + 1e-15));
        }
        let top = soft_nms(preds.clone(), sigma, Some(3)).unwrap();
        prop_assert_eq!(top.len(), preds.len().min(3));
    }

    #[test]
    fn average_recall_is_monotone_and_bounded(
        sets in prop::collection::vec(
            (prop::collection::vec(interval(), 0..20), prop::collection::vec(interval(), 0..4)),
            1..5,
        ),
    ) {
        let sets: Vec<ProposalSet> = sets
            .into_iter()
            .map(|(predictions, ground_truth)| ProposalSet { predictions, ground_truth })
            .collect();
        let curve = ar_at_an(&sets, 25, &TIOU_THRESHOLDS).unwrap();
        prop_assert!(recall_monotonicity_check(&curve).is_ok());
        prop_assert!(curve.ar.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn kv_config_text_round_trips(entries in prop::collection::btree_map("[a-z][a-z0-9_.]{0,12}", "[A-Za-z0-9_.,-]{0,10}", 0..12)) {
        let mut kv = KvConfig::new();
        for (k, v) in &entries {
            kv.set(k.clone(), v);
        }
        let back = KvConfig::parse(&kv.to_text()).unwrap();
        prop_assert_eq!(back.hash(), kv.hash());
        prop_assert_eq!(back, kv);
    }
}
