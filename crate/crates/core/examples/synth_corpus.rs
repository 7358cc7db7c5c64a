//! Generates a small synthetic corpus and prints its manifest summary.
//!
//! `cargo run --release --example synth_corpus [out_dir]`

use svmr::benchmark::{synth_generate, QuerySet, ReferenceKind, SynthConfig, SynthSizes};

fn main() -> svmr::Result<()> {
    let config = SynthConfig {
        num_classes: 10,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(
        &config,
        SynthSizes {
            query_videos: 40,
            reference_videos: 60,
        },
    )?;
    for set in QuerySet::ALL {
        println!(
            "{:>5}: {} classes, {} query clips",
            set.as_str(),
            corpus.split.classes(set).len(),
            corpus.queries_in(set).count()
        );
    }
    for kind in [ReferenceKind::Unchanged, ReferenceKind::TwoSource, ReferenceKind::ThreeSource] {
        let n = corpus.references.iter().filter(|r| r.kind == kind).count();
        println!("{kind:?} references: {n}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        corpus.save(std::path::Path::new(&dir))?;
        println!("saved to {dir}");
    }
    Ok(())
}
