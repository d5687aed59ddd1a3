use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::protocol::RunPlan;
use crate::error::Error;
use crate::train::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub seed: u64,
    pub method: String,
    /// Trained block; the test data comes from the block after it. 0 is the
    /// base model evaluated on its holdout.
    pub block: usize,
    pub recall: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    /// Kept out of the JSON report so deterministic runs serialize
    /// identically.
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub method: String,
    pub block: usize,
    /// `divergence`, `data` or `other`.
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn new(seed: u64, method: &str, block: usize, e: &Error) -> Self {
        let kind = if e.is_divergence() {
            "divergence"
        } else if e.is_data_error() {
            "data"
        } else {
            "other"
        };
        Self { seed, method: method.into(), block, kind: kind.into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub kind: Method,
    /// Mean over seeds for each evaluated block; null where no seed
    /// produced a result.
    pub per_block: Vec<Option<f64>>,
    /// Mean over evaluated blocks, one entry per seed that completed all
    /// blocks.
    pub per_seed: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Relative change of `mean` against the finetune row, in percent.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Effective configuration of the run.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Trained incremental blocks that were evaluated.
    pub blocks: Vec<usize>,
    pub per_block: Vec<BlockResult>,
    pub summaries: Vec<MethodSummary>,
    pub failures: Vec<Failure>,
    #[serde(skip)]
    labels: Vec<(String, Method)>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl MetricsReport {
    pub fn new(plan: &RunPlan, blocks: Vec<usize>) -> Self {
        Self {
            config: serde_json::to_value(plan).unwrap_or(serde_json::Value::Null),
            seeds: plan.seeds.clone(),
            blocks,
            per_block: Vec::new(),
            summaries: Vec::new(),
            failures: Vec::new(),
            labels: plan.methods.iter().map(|m| (m.label.clone(), m.method)).collect(),
        }
    }

    pub fn results<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a BlockResult> + 'a {
        self.per_block.iter().filter(move |r| r.method == method)
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Recomputes the per-method summaries from `per_block`.
    pub fn summarize(&mut self) {
        let mut out = Vec::new();
        for (label, kind) in &self.labels {
            let rows: Vec<&BlockResult> = self.results(label).collect();
            let per_block = self
                .blocks
                .iter()
                .map(|&b| mean(&rows.iter().filter(|r| r.block == b).map(|r| r.recall).collect::<Vec<_>>()))
                .collect();
            let per_seed: Vec<f64> = self
                .seeds
                .iter()
                .filter_map(|&s| {
                    let v: Vec<f64> = rows.iter().filter(|r| r.seed == s).map(|r| r.recall).collect();
                    (v.len() == self.blocks.len()).then(|| mean(&v)).flatten()
                })
                .collect();
            out.push(MethodSummary {
                method: label.clone(),
                kind: *kind,
                per_block,
                mean: mean(&per_seed),
                std: sample_std(&per_seed),
                per_seed,
                improvement_pct: None,
            });
        }
        let ft = out.iter().find(|s| s.kind == Method::Finetune).and_then(|s| s.mean);
        for s in &mut out {
            if let (Some(ft), Some(m)) = (ft, s.mean) {
                if ft > 0.0 {
                    s.improvement_pct = Some((m - ft) / ft * 100.0);
                }
            }
        }
        self.summaries = out;
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Mean training seconds per block for `method` over all seeds.
    pub fn mean_seconds(&self, method: &str, block: Option<usize>) -> Option<f64> {
        let v: Vec<f64> =
            self.results(method).filter(|r| block.is_none_or(|b| r.block == b)).map(|r| r.train_seconds).collect();
        mean(&v)
    }

    /// Training times per (seed, method, block), which the JSON report omits.
    pub fn timings_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.per_block
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "seed": r.seed, "method": r.method, "block": r.block, "train_seconds": r.train_seconds,
                    })
                })
                .collect(),
        )
    }

    /// Method × block table with average, improvement over finetune and
    /// mean training time per block.
    pub fn to_table(&self) -> String {
        let name_w = self.summaries.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "method");
        for b in &self.blocks {
            let _ = write!(out, "  {:>8}", format!("Inc b{b}"));
        }
        let _ = writeln!(out, "  {:>17}  {:>8}  {:>9}", "average", "%imprv", "time/blk");
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        for s in &self.summaries {
            let _ = write!(out, "{:<name_w$}", s.method);
            for v in &s.per_block {
                let _ = write!(out, "  {:>8}", fmt(*v));
            }
            let avg = match (s.mean, s.std) {
                (Some(m), Some(sd)) => format!("{m:.4}±{sd:.4}"),
                _ => "-".into(),
            };
            let imp = match (s.kind, s.improvement_pct) {
                (Method::Finetune, _) | (_, None) => "-".into(),
                (_, Some(p)) => format!("{p:+.2}%"),
            };
            let secs = self.mean_seconds(&s.method, None).map_or("-".into(), |t| format!("{t:.2}s"));
            let _ = writeln!(out, "  {avg:>17}  {imp:>8}  {secs:>9}");
        }
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {} seed {} block {}: {}", f.method, f.seed, f.block, f.message);
        }
        out
    }
}
