//! Ingress and egress: line-delimited sample, hypothesis and verdict files,
//! the content-addressed embedding cache and its service client, and atomic
//! per-run persistence.

mod cache;
mod embed;
mod records;
mod store;

pub use cache::{text_hash, EmbeddingCache};
pub use embed::{
    assemble_dataset, EmbedClient, EmbeddedSample, EmbeddingTransport, HttpTransport, RetryPolicy,
    TransportFailure,
};
pub use records::{
    group_batches, load_hypotheses, load_samples, load_verdicts, save_hypotheses, save_samples,
    save_verdicts, write_atomic, HypothesisBatch, HypothesisSet, SampleRecord, FORMAT_VERSION,
};
pub use store::{fingerprint, ArtifactWriter, PolicyCheckpoint, RunManifest, RunStore, WriteMode};
