//! Video scene graph generation with statistical prior knowledge embedded
//! into transformer attention layers.
//!
//! The pipeline: annotated videos ([`data`], [`dataset_io`], [`synth`]) feed
//! per-class-pair co-occurrence and transition statistics ([`knowledge`]),
//! which bias the attention layers of the relationship model ([`model`]).
//! Training ([`train`]) runs AdamW with global-norm clipping; evaluation
//! ([`eval`]) scores recall@K / mean recall@K under the no-constraint
//! protocol for the PredCls / SGCls / SGGen tasks.

pub mod data;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradsuite;
pub mod knowledge;
pub mod model;
pub mod nn;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{CoreError, Result};
