//! Benchmark orchestration: manifests, the per-question pipeline, a memory
//! store, and accuracy and token-compression reports.

mod manifest;
mod pipeline;
mod report;
mod store;

use thiserror::Error;

pub use manifest::{load_manifest, validate_item, BenchmarkItem, ManifestError, Split};
pub use pipeline::{
    ensure_memory, frame_options, load_item_transcript, run_pipeline, Backends, PipelineError, PipelineOptions, PipelineOutput,
};
pub use report::{
    compute_token_stats, duration_bucket, evaluate, memory_token_stats, Accuracy, BucketStats, Comparison, DeltaRow,
    EvalOptions, ItemResult, ItemStatus, RunReport, TokenStats, BUCKETS,
};
pub use store::{write_atomic, MemoryStore};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("no items")]
    NoItems,
}
