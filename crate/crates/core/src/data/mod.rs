//! Canonical data types and file formats.

pub mod annotations;
pub mod features;
pub mod predictions;

pub use annotations::{
    load_annotated_videos, read_annotation_records, validate_annotations,
    write_annotation_records, AnnotatedVideo, AnnotationRecord, ClassId, TemporalInstance,
    Violation, ViolationKind,
};
pub use features::{load_features, save_features, FeatureSequence};
pub use predictions::{
    read_jsonl, sort_prediction_records, write_jsonl, CandidateRecord, MomentPrediction,
    PredictionRecord,
};
