//! Diversity-aware reward computation and evaluation for group-relative
//! reinforcement learning over embedded hypothesis sets.
//!
//! * [`vector`]: embeddings, cosine geometry, validity scoring
//! * [`reward`]: validity, intra-group and gated inter-group rewards
//! * [`grpo`]: group-normalized advantages, clipped surrogate, KL
//! * [`metrics`]: SoftPass / SoftRecall / ValidRatio, sweeps, judged Pass@K
//! * [`synth`]: planted multi-mode world and toy policy training
//! * [`io`]: file formats, embedding cache and client, run persistence
//! * [`report`]: table rendering and embedding export

pub mod error;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod report;
pub mod reward;
pub mod seed;
pub mod synth;
pub mod vector;

pub use error::{Error, ErrorClass, Result};
