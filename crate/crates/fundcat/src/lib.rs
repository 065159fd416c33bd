//! Fund categorization pipeline.
//!
//! A library for learning a vendor-style fund categorization from aggregate
//! holdings data: CSV ingestion of a labeled fund universe, the exact
//! preprocessing chain (4-decimal rounding, zero imputation, one-hot
//! benchmark encoding, MinMax scaling), class-weighted decision tree and
//! random forest classifiers, a feed-forward softmax network, stratified
//! splitting and cross-validation, and a metrics suite built for imbalanced
//! multi-class problems (balanced accuracy, micro/macro F1, one-vs-rest
//! micro/macro ROC-AUC, normalized confusion matrices, top-k accuracy).
//!
//! A seeded synthetic universe generator stands in for proprietary vendor
//! extracts so the whole pipeline can run end to end out of the box. See the
//! `examples/` directory for one runnable example per capability, and the
//! `fundcat` binary for the command-line pipeline.

pub mod artifact;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod sampling;
pub mod schema;
pub mod seeding;
pub mod svg;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
