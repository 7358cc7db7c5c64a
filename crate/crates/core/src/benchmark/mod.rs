//! Benchmark construction: class splits, query extraction, multi-action reference videos and
//! synthetic corpora.

pub mod corpus;
pub mod merge;
pub mod queries;
pub mod reference;
pub mod split;
pub mod synth;

pub use corpus::{build_corpus, Corpus, Manifest};
pub use merge::{
    background_insertion_points, cut_segment, insert_segment, merge_videos, MergeOutcome, Segment,
};
pub use queries::{extract_query_clips, QueryClip, QueryExtraction};
pub use reference::{
    build_reference_set, reference_mix, ReferenceKind, ReferenceSet, ReferenceVideo,
};
pub use split::{ClassSplit, QuerySet};
pub use synth::{draw_prototypes, synth_generate, synth_sources, SynthConfig, SynthSizes};
