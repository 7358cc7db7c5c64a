//! Trains the stage-2 re-localization network and compares test AUC with the untrained model,
//! overall and per reference kind.

use svmr::app::PipelineConfig;
use svmr::benchmark::{synth_generate, QueryClip, QuerySet, ReferenceKind};
use svmr::data::AnnotatedVideo;
use svmr::stage2::train::{evaluate_pairs, init_seed, train_stage2_from, Stage2Data};
use svmr::stage2::Stage2Model;

fn main() -> svmr::Result<()> {
    let mut cfg = PipelineConfig::desk();
    cfg.train2.epochs = 4;
    let corpus = synth_generate(&cfg.synth, cfg.sizes)?;
    let refs: Vec<&AnnotatedVideo> = corpus.reference_videos().collect();
    let test: Vec<&QueryClip> = corpus.queries_in(QuerySet::Test).collect();

    let untrained = Stage2Model::new(cfg.stage2.clone(), init_seed(cfg.train2.seed))?;
    let data = Stage2Data::new(&untrained.config, &test, &refs)?;
    let pairs: Vec<(usize, usize)> = data.all_pairs().into_iter().step_by(4).collect();
    let before = evaluate_pairs(&untrained, &data, &pairs)?.1;

    let (model, report) = train_stage2_from(untrained, &corpus, &cfg.train2)?;
    for e in &report.epochs {
        println!("epoch {}  train {:.4}  val AUC {:.2}", e.epoch, e.train_loss, e.val_auc);
    }
    let (curve, after) = evaluate_pairs(&model, &data, &pairs)?;
    println!("test AUC untrained {before:.2} trained {after:.2} (AR@100 {:.3})", curve.ar[99]);
    for kind in [ReferenceKind::Unchanged, ReferenceKind::TwoSource, ReferenceKind::ThreeSource] {
        let sub: Vec<_> = pairs
            .iter()
            .copied()
            .filter(|&(_, r)| corpus.references[r].kind == kind)
            .collect();
        println!("  {kind:?}: AUC {:.2} over {} pairs", evaluate_pairs(&model, &data, &sub)?.1, sub.len());
    }
    Ok(())
}
