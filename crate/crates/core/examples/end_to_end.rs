//! The whole seeded pipeline through the command layer: synthetic corpus, both trainings,
//! gallery index, test-split queries and the evaluation report. Artifacts land in a temporary
//! directory unless one is given.
//!
//! `cargo run --release --example end_to_end [work_dir]`

use std::path::PathBuf;

use svmr::app::{run_pipeline, PipelineConfig};

fn main() -> svmr::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| svmr::Error::Data(e.to_string()))?;
    let root = std::env::args().nth(1).map_or(tmp.path().to_path_buf(), PathBuf::from);
    let mut cfg = PipelineConfig::desk();
    cfg.train2.epochs = 3;
    println!("config hash {}", cfg.hash());
    let ev = run_pipeline(&cfg, &root)?;
    print!("{}", ev.report.to_text());
    Ok(())
}
