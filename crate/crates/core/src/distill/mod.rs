//! Distillation against a frozen teacher: the self-embedding, local-structure
//! and global-structure terms, plus the embedding-MSE and sampled
//! local-structure-preservation baselines.
//!
//! Every loss reads student embeddings from a [`NodeRows`] holding the
//! batch's final embeddings, returns the unweighted loss value, and adds
//! `weight · ∂loss/∂row` into a gradient [`NodeRows`].

mod kmeans;
mod losses;
mod snapshot;

pub use kmeans::{kmeans_cluster, KMeans, KMeansOptions};
pub use losses::{
    anchor_distribution, embd_baseline_loss, global_distill_loss, kl_divergence, local_distill_loss,
    lsp_baseline_loss, self_distill_loss, LspSamples,
};
pub use snapshot::{Anchors, TeacherSnapshot};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Side;

/// Loss weights and structure hyperparameters. Defaults are the values
/// tuned for the one-layer model on LastFM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub lambda_self: f64,
    pub lambda_local: f64,
    pub lambda_global: f64,
    /// Clusters per side.
    pub k: usize,
    /// Softmax temperature for anchor and neighbor distributions.
    pub tau: f64,
    pub lambda_embd: f64,
    pub lambda_lsp: f64,
    pub lsp_neighbors: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_self: 100.0,
            lambda_local: 1e5,
            lambda_global: 1e6,
            k: 10,
            tau: 0.1,
            lambda_embd: 10.0,
            lambda_lsp: 1e9,
            lsp_neighbors: 10,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-4,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_self, self.lambda_local, self.lambda_global, self.lambda_embd, self.lambda_lsp];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument("distillation weights must be finite and non-negative".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.lsp_neighbors == 0 {
            return Err(Error::InvalidArgument("lsp_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Distinct users and items a loss is evaluated over.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeBatch {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl NodeBatch {
    /// Deduplicates while keeping first-occurrence order.
    pub fn new(users: impl IntoIterator<Item = u32>, items: impl IntoIterator<Item = u32>) -> Self {
        fn uniq(it: impl IntoIterator<Item = u32>) -> Vec<u32> {
            let mut seen = std::collections::HashSet::new();
            it.into_iter().filter(|x| seen.insert(*x)).collect()
        }
        Self { users: uniq(users), items: uniq(items) }
    }

    pub fn side(&self, side: Side) -> &[u32] {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }
}
