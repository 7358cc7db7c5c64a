mod common;

use std::fs;

use svmr::app::{run_pipeline, PREDICTIONS_FILE, REPORT_FILE};

#[test]
fn seeded_pipeline_reproduces_byte_identical_outputs() {
    let cfg = common::tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    for f in [REPORT_FILE, PREDICTIONS_FILE] {
        let read = |root: &std::path::Path| fs::read(root.join("results").join(f)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{f}");
    }
    let ckpt = |root: &std::path::Path| fs::read(root.join("models/stage2.ckpt")).unwrap();
    assert_eq!(ckpt(a.path()), ckpt(b.path()));
}

#[test]
fn a_different_seed_changes_the_run() {
    let cfg = common::tiny_config();
    let mut other = cfg.clone();
    other.synth.seed = 1;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&cfg, a.path()).unwrap();
    let rb = run_pipeline(&other, b.path()).unwrap();
    assert_ne!(ra.report.to_text(), rb.report.to_text());
}
