//! BPR training with Adam: base-block training, incremental updates with a
//! distillation-regularized objective, and full retraining.

mod adam;
mod bpr;
mod loops;

pub use adam::{adam_step, AdamState};
pub use bpr::{bpr_loss, bpr_triple, l2_penalty, sample_negatives};
pub use loops::{
    train_base, train_full_batch, train_incremental, EpochLog, IncrementalInputs, LossBreakdown, NoopObserver,
    TrainObserver, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain BPR on the new block.
    Finetune,
    /// BPR plus unweighted embedding MSE.
    Embd,
    /// BPR plus sampled local structure preservation.
    Lsp,
    /// BPR plus self, local and global structure distillation.
    GraphSail,
    /// Retrain from scratch on all history.
    FullBatch,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Embd => "embd",
            Method::Lsp => "lsp",
            Method::GraphSail => "graphsail",
            Method::FullBatch => "fullbatch",
        }
    }

    pub fn is_incremental(self) -> bool {
        self != Method::FullBatch
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "finetune" | "ft" => Method::Finetune,
            "embd" | "emb_d" => Method::Embd,
            "lsp" | "lsp_s" => Method::Lsp,
            "graphsail" => Method::GraphSail,
            "fullbatch" | "full_batch" => Method::FullBatch,
            other => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    /// 0 (matrix factorization) or 1 (one aggregation layer).
    pub layers: usize,
    /// Neighbors sampled per node for aggregation.
    pub n_sample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 128, layers: 1, n_sample: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub lr_inc: f64,
    pub l2: f64,
    /// Negatives paired with each positive.
    pub n_neg: usize,
    /// Positives per mini-batch.
    pub batch_size: usize,
    pub patience_base: usize,
    pub patience_inc: usize,
    pub max_epochs_base: usize,
    pub max_epochs_inc: usize,
    pub seed: u64,
    /// Serial execution for bit-for-bit replay.
    pub deterministic: bool,
    /// Recall cutoff used for validation.
    pub k: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-3,
            lr_inc: 5e-4,
            l2: 1e-5,
            n_neg: 10,
            batch_size: 2048,
            patience_base: 50,
            patience_inc: 2,
            max_epochs_base: 500,
            max_epochs_inc: 6,
            seed: 0,
            deterministic: false,
            k: 20,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr_base > 0.0 && self.lr_inc > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return bad("l2 must be non-negative".into());
        }
        if self.patience_base == 0 || self.patience_inc == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 || self.n_neg == 0 {
            return bad("batch_size and n_neg must be at least 1".into());
        }
        if self.max_epochs_base == 0 || self.max_epochs_inc == 0 {
            return bad("epoch caps must be at least 1".into());
        }
        if self.model.dim == 0 || self.model.layers > 1 {
            return bad(format!("unsupported model shape dim={} layers={}", self.model.dim, self.model.layers));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        Ok(())
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions { n_sample: self.model.n_sample, isolated_fallback: true, parallel: !self.deterministic }
    }
}
