//! Score fusion and Gaussian soft-NMS on a handful of overlapping moment predictions.

use svmr::data::MomentPrediction;
use svmr::metrics::tiou;
use svmr::postprocess::{soft_nms, DEFAULT_SOFT_NMS_SIGMA};

fn main() -> svmr::Result<()> {
    let preds = vec![
        MomentPrediction::new("v1", 10.0, 20.0, 0.95),
        MomentPrediction::new("v1", 11.0, 21.0, 0.90),
        MomentPrediction::new("v1", 10.0, 20.0, 0.85),
        MomentPrediction::new("v1", 40.0, 48.0, 0.60),
        MomentPrediction::new("v2", 10.0, 20.0, 0.80),
    ];
    println!("tIoU of the first two: {:.3}", tiou((10.0, 20.0), (11.0, 21.0))?);
    println!("decay for an exact duplicate: {:.4}", (-1.0 / DEFAULT_SOFT_NMS_SIGMA).exp());
    for p in soft_nms(preds, DEFAULT_SOFT_NMS_SIGMA, None)? {
        println!("{} [{:>4.1}, {:>4.1}] {:.4}", p.video_id, p.t_start, p.t_end, p.score);
    }
    Ok(())
}
