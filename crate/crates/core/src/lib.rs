//! ruletwin: a learned surrogate ("twin") of a versioned rule-based record
//! validation service, kept in step with service evolution by multi-objective
//! subset selection and warm-start transfer learning.
//!
//! The crate provides the full pipeline end to end:
//!
//! * [`schema`] / [`dataset`] — record schemas, synthetic message corpora,
//!   JSONL persistence;
//! * [`rules`] — the reference rule engine (a small expression DSL), rule
//!   generation and version diffing;
//! * [`encoding`] — deterministic feature encoding of messages;
//! * [`model`] — per-rule two-branch 1-D convolutional classifiers over the
//!   encoded features, trained with Adam;
//! * [`selection`] — the five query-subset objectives and the indicator-based
//!   evolutionary search over candidate subsets;
//! * [`pipeline`] — querying the (possibly remote) validation service,
//!   augmentation, and the evolve/baseline procedures;
//! * [`metrics`] / [`stats`] — per-code evaluation and the nonparametric
//!   tests used to compare methods;
//! * [`experiment`] — packaged experiment presets and runners.
//!
//! Everything randomized is seeded; a run with the same inputs, seed and
//! configuration reproduces its outputs byte for byte.

pub mod dataset;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod schema;
pub mod seed;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};
