//! Incremental training for graph-convolutional top-k recommenders.
//!
//! A model is batch-trained on a base block of user–item interactions and then
//! updated block by block on newer data. Updates can be regularized against the
//! previous model with three structure-aware distillation terms (self-embedding,
//! local neighborhood, global anchor distribution) or with the simpler
//! embedding-MSE and sampled local-structure baselines.
//!
//! Module map:
//!
//! - [`data`]: parsing, preprocessing, temporal block splits and block manifests.
//! - [`graph`]: bipartite adjacency and neighbor sampling.
//! - [`model`]: embedding tables, one-layer mean aggregation, analytic backward pass, checkpoints.
//! - [`distill`]: k-means anchors, teacher snapshots and the distillation losses.
//! - [`train`]: BPR, negative sampling, Adam, base/incremental/full-batch loops.
//! - [`eval`]: Recall@k, the block protocol and metric reports.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod real;
pub mod rng;
pub mod rows;
pub mod synthetic;
pub mod train;

pub use data::{BlockSplit, Interaction, InteractionLog};
pub use distill::{DistillConfig, NodeBatch, TeacherSnapshot};
pub use error::{Error, Result};
pub use eval::{MetricsReport, RunPlan};
pub use graph::{BipartiteGraph, Side};
pub use matrix::Matrix;
pub use model::{FinalEmbeddings, ModelState};
pub use real::Real;
pub use rows::{NodeRows, RowSet};
pub use train::{Method, TrainConfig};
