//! Two-stage semantic video moment retrieval over pre-extracted feature sequences.

pub mod app;
pub mod benchmark;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gallery;
pub mod gradsuite;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
