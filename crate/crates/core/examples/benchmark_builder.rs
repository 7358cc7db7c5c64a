//! Builds a reference gallery from 300 annotated videos and checks the construction contract:
//! an even unchanged / two-source / three-source mix, valid annotations, no class collisions.

use std::collections::BTreeSet;

use svmr::benchmark::{build_reference_set, draw_prototypes, synth_sources, ReferenceKind, SynthConfig};
use svmr::data::validate_annotations;
use svmr::nn::seeded_rng;

fn main() -> svmr::Result<()> {
    let config = SynthConfig::default();
    let videos = synth_sources(&config, &draw_prototypes(&config), "v", 300, 7)?;
    let set = build_reference_set(&videos, &mut seeded_rng(11))?;
    for kind in [ReferenceKind::Unchanged, ReferenceKind::TwoSource, ReferenceKind::ThreeSource] {
        println!("{kind:?}: {}", set.count(kind));
    }
    let invalid = set.videos.iter().filter(|r| !validate_annotations(&r.video).is_empty()).count();
    println!("videos failing validation: {invalid}");
    let merged = set.videos.iter().filter(|r| r.kind != ReferenceKind::Unchanged);
    let mean_classes = merged
        .clone()
        .map(|r| r.video.instances.iter().map(|i| i.class_id).collect::<BTreeSet<_>>().len())
        .sum::<usize>() as f64
        / merged.count().max(1) as f64;
    println!("mean classes per merged video: {mean_classes:.2}");
    for w in &set.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
