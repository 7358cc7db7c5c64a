//! The evaluation metrics on small hand-made inputs: tIoU, HR@K / mAP@K, AR@AN with its AUC,
//! and Prec@N.

use svmr::metrics::{
    ar_at_an, auc, hr_at_k, map_at_k, prec_at_n, tiou, ProposalSet, RankedRelevance,
    TIOU_THRESHOLDS,
};

fn main() -> svmr::Result<()> {
    println!("tIoU([0,2],[1,3]) = {:.4}", tiou((0.0, 2.0), (1.0, 3.0))?);

    let rankings = vec![
        RankedRelevance { relevant: vec![true, false, true], total_relevant: 2 },
        RankedRelevance { relevant: vec![false, true, false], total_relevant: 1 },
    ];
    for k in [1, 3] {
        println!("HR@{k} {:.3}  mAP@{k} {:.3}", hr_at_k(&rankings, k)?.value, map_at_k(&rankings, k)?.value);
    }

    let sets = vec![
        ProposalSet {
            predictions: vec![(0.0, 9.0), (10.0, 20.0), (30.0, 38.0)],
            ground_truth: vec![(10.0, 19.0), (30.0, 40.0)],
        },
        ProposalSet {
            predictions: vec![(5.0, 6.0), (0.0, 4.0)],
            ground_truth: vec![(0.0, 4.0)],
        },
    ];
    let curve = ar_at_an(&sets, 100, &TIOU_THRESHOLDS)?;
    println!("AR@1 {:.3}  AR@2 {:.3}  AR@100 {:.3}  AUC {:.2}", curve.ar[0], curve.ar[1], curve.ar[99], auc(&curve));

    let clip = |v: &str, a: f64, b: f64| (v.to_string(), (a, b));
    let per_query = vec![(
        vec![clip("v1", 10.0, 19.0), clip("v2", 0.0, 5.0)],
        vec![clip("v1", 10.0, 20.0)],
    )];
    println!("Prec@1 {:.2}  Prec@2 {:.2}", prec_at_n(&per_query, 1, 0.5)?.value, prec_at_n(&per_query, 2, 0.5)?.value);
    Ok(())
}
