//! Trains the stage-1 auto-encoder on a synthetic corpus, indexes the gallery and reports
//! video-level retrieval on the held-out test classes.

use svmr::app::PipelineConfig;
use svmr::benchmark::{synth_generate, QueryClip, QuerySet};
use svmr::data::AnnotatedVideo;
use svmr::gallery::GalleryIndex;
use svmr::pipeline::evaluate_stage1;
use svmr::stage1::train_stage1;

fn main() -> svmr::Result<()> {
    let cfg = PipelineConfig::desk();
    let corpus = synth_generate(&cfg.synth, cfg.sizes)?;
    let refs: Vec<&AnnotatedVideo> = corpus.reference_videos().collect();
    let test: Vec<&QueryClip> = corpus.queries_in(QuerySet::Test).collect();

    let (model, report) = train_stage1(&corpus, cfg.stage1.clone(), &cfg.train1)?;
    for e in &report.epochs {
        println!("epoch {:>2}  train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_loss);
    }
    let index = GalleryIndex::embed(&model, &refs)?;
    let m = evaluate_stage1(&model, &index, &test, &refs)?;
    println!(
        "test queries {}: HR@1 {:.3} HR@10 {:.3} mAP@1 {:.3} mAP@10 {:.3}",
        m.queries, m.hr_at_1, m.hr_at_10, m.map_at_1, m.map_at_10
    );

    let q = test[0];
    let hits = index.search(&model.embed_query_clip(&q.features)?, 5)?;
    println!("top 5 for {} (class {}):", q.query_id, q.class_id);
    for h in hits {
        let classes = corpus.reference(&h.video_id).map(|v| v.classes()).unwrap_or_default();
        println!("  {} score {:.3} classes {classes:?}", h.video_id, h.score);
    }
    Ok(())
}
