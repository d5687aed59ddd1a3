use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::{BlockResult, Failure, MetricsReport};
use super::{halve_block, recall_at_k, EvalSplit};
use crate::data::{BlockSplit, Interaction};
use crate::distill::{DistillConfig, TeacherSnapshot};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::model::ModelState;
use crate::real::Real;
use crate::rng::{stream, Stream};
use crate::train::{
    train_base, train_full_batch, train_incremental, EpochLog, IncrementalInputs, Method, TrainConfig,
    TrainObserver, TrainOutcome,
};

/// One row of the comparison: a method and its distillation settings under
/// a display label, so that ablations of the same method can coexist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self { label: method.name().into(), method, distill: DistillConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Base-block holdout: fractions for training and validation, the rest
    /// is test.
    pub base_train_frac: f64,
    pub base_val_frac: f64,
}

impl RunPlan {
    pub fn new(methods: Vec<MethodSpec>, seeds: Vec<u64>, train: TrainConfig) -> Self {
        Self { methods, seeds, train, base_train_frac: 0.8, base_val_frac: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("need at least one method and one seed".into()));
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) || labels.contains(&"base") {
            return Err(Error::InvalidArgument("method labels must be unique and not \"base\"".into()));
        }
        let (a, b) = (self.base_train_frac, self.base_val_frac);
        if !(a > 0.0 && b > 0.0 && a + b < 1.0) {
            return Err(Error::InvalidArgument(format!("base holdout fractions {a}/{b} invalid")));
        }
        self.train.validate()?;
        for m in &self.methods {
            m.distill.validate()?;
        }
        Ok(())
    }
}

/// Hooks for the protocol driver. Epoch logs carry the method label.
pub trait ProtocolObserver<T>: TrainObserver {
    /// Called with the selected parameters after each training call. Base
    /// models are reported under label `base` and block 0.
    fn on_model(&mut self, _seed: u64, _label: &str, _block: usize, _model: &ModelState<T>) {}
}

impl<T> ProtocolObserver<T> for crate::train::NoopObserver {}

struct Relabel<'a, T> {
    inner: &'a mut dyn ProtocolObserver<T>,
    label: String,
}

impl<T> TrainObserver for Relabel<'_, T> {
    fn on_epoch(&mut self, log: &EpochLog) {
        let mut log = log.clone();
        log.method.clone_from(&self.label);
        self.inner.on_epoch(&log);
    }
}

pub struct BaseHoldout {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

/// Random train/validation/test partition of the base block. Sizes are
/// `floor(train_frac·n)`, `floor(val_frac·n)` and the remainder.
pub fn base_holdout<R: Rng + ?Sized>(base: &[Interaction], train_frac: f64, val_frac: f64, rng: &mut R) -> BaseHoldout {
    let mut recs = base.to_vec();
    recs.shuffle(rng);
    let n = recs.len();
    let n_train = (train_frac * n as f64 + 1e-9).floor() as usize;
    let n_val = ((val_frac * n as f64 + 1e-9).floor() as usize).min(n - n_train);
    let test = recs.split_off(n_train + n_val);
    let val = recs.split_off(n_train);
    BaseHoldout { train: recs, val, test }
}

const EVAL_KEY: u64 = 10_000;

struct SeedContext {
    cfg: TrainConfig,
    holdout: BaseHoldout,
    /// Cumulative training graph through block t (index 0: base train).
    cum: Vec<BipartiteGraph>,
    /// Graph of block t alone (index 0: base train).
    local: Vec<BipartiteGraph>,
    /// Validation/test halves of block t+1, indexed by t.
    evals: Vec<Option<EvalSplit>>,
}

fn seed_context(split: &BlockSplit, plan: &RunPlan, seed: u64) -> Result<SeedContext> {
    let cfg = TrainConfig { seed, ..plan.train.clone() };
    let holdout =
        base_holdout(split.base(), plan.base_train_frac, plan.base_val_frac, &mut stream(seed, Stream::Halve, 0));
    let (nu, ni) = split.universe_through(0);
    let base_graph = BipartiteGraph::build(&holdout.train, nu, ni, None)?;
    let n = split.n_inc();
    let mut cum = vec![base_graph.clone()];
    let mut local = vec![base_graph];
    let mut evals = vec![None];
    for t in 1..n {
        let (nu, ni) = split.universe_through(t);
        cum.push(BipartiteGraph::build(split.inc(t), nu, ni, Some(&cum[t - 1]))?);
        local.push(BipartiteGraph::build(split.inc(t), nu, ni, None)?);
        evals.push(Some(halve_block(split.inc(t + 1), t + 1, &mut stream(seed, Stream::Halve, t as u64 + 1))?));
    }
    Ok(SeedContext { cfg, holdout, cum, local, evals })
}

fn test_recall<T: Real>(
    model: &ModelState<T>,
    graph: &BipartiteGraph,
    test: &[Interaction],
    cfg: &TrainConfig,
    key: u64,
) -> Result<f64> {
    let emb = model.full_embeddings(graph, &cfg.forward_options(), &mut stream(cfg.seed, Stream::Eval, EVAL_KEY + key))?;
    Ok(recall_at_k(&emb, test, graph, cfg.k, !cfg.deterministic)?.recall)
}

fn result<T>(seed: u64, label: &str, block: usize, recall: f64, out: &TrainOutcome<T>) -> BlockResult {
    BlockResult {
        seed,
        method: label.into(),
        block,
        recall,
        epochs: out.epochs_run,
        best_epoch: out.best_epoch,
        train_seconds: out.seconds,
    }
}

fn run_chain<T: Real>(
    split: &BlockSplit,
    ctx: &SeedContext,
    base: &ModelState<T>,
    spec: &MethodSpec,
    report: &mut MetricsReport,
    observer: &mut dyn ProtocolObserver<T>,
) -> std::result::Result<(), (usize, Error)> {
    let cfg = &ctx.cfg;
    let seed = cfg.seed;
    let mut prev = base.clone();
    for t in 1..split.n_inc() {
        let ev = ctx.evals[t].as_ref().expect("eval split for every trained block");
        let mut step = || -> Result<(TrainOutcome<T>, f64)> {
            let mut obs = Relabel { inner: &mut *observer, label: spec.label.clone() };
            let out = if spec.method == Method::FullBatch {
                let mut history = ctx.holdout.train.clone();
                for b in 1..=t {
                    history.extend_from_slice(split.inc(b));
                }
                train_full_batch(&history, &ctx.cum[t], &ev.val, t, cfg, &mut obs)?
            } else {
                let snapshot = TeacherSnapshot::build(
                    &prev,
                    &ctx.cum[t - 1],
                    ctx.local[t - 1].clone(),
                    &ctx.local[t],
                    &spec.distill,
                    &cfg.forward_options(),
                    &mut stream(seed, Stream::Teacher, t as u64),
                )?;
                let inputs = IncrementalInputs {
                    prev_model: &prev,
                    snapshot: &snapshot,
                    block: split.inc(t),
                    agg_graph: &ctx.cum[t],
                    val: &ev.val,
                    block_id: t,
                };
                train_incremental(inputs, cfg, &spec.distill, spec.method, &mut obs)?
            };
            let recall = test_recall(&out.model, &ctx.cum[t], &ev.test, cfg, t as u64)?;
            Ok((out, recall))
        };
        let (out, recall) = step().map_err(|e| (t, e))?;
        observer.on_model(seed, &spec.label, t, &out.model);
        report.per_block.push(result(seed, &spec.label, t, recall, &out));
        prev = out.model;
    }
    Ok(())
}

/// Test Recall@k of `model` as the protocol computes it for `block` under
/// `seed`: the base holdout's test part for block 0, otherwise the test half
/// of block `block + 1`, masked by the cumulative training graph.
pub fn block_test_recall<T: Real>(
    split: &BlockSplit,
    plan: &RunPlan,
    seed: u64,
    block: usize,
    model: &ModelState<T>,
) -> Result<f64> {
    if block >= split.n_inc() {
        return Err(Error::InvalidArgument(format!("block {block} has no following block to test on")));
    }
    let ctx = seed_context(split, plan, seed)?;
    let test = match &ctx.evals[block] {
        Some(ev) => &ev.test,
        None => &ctx.holdout.test,
    };
    let g = &ctx.cum[block];
    if model.n_users() < g.n_users() || model.n_items() < g.n_items() {
        return Err(Error::SnapshotMismatch(format!(
            "model covers {}x{} nodes, block {block} needs {}x{}",
            model.n_users(),
            model.n_items(),
            g.n_users(),
            g.n_items()
        )));
    }
    test_recall(model, g, test, &ctx.cfg, block as u64)
}

/// Runs the block protocol: per seed, train the base model once, then for
/// every method and every block t in 1..N train on block t and test on a
/// random half of block t+1 (the other half is validation). The last block
/// is evaluation data only. Method failures are recorded in the report and
/// do not stop other methods.
pub fn run_protocol<T: Real>(
    split: &BlockSplit,
    plan: &RunPlan,
    observer: &mut dyn ProtocolObserver<T>,
) -> Result<MetricsReport> {
    plan.validate()?;
    if split.n_inc() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 incremental blocks, got {}", split.n_inc())));
    }
    let mut report = MetricsReport::new(plan, (1..split.n_inc()).collect());
    for &seed in &plan.seeds {
        let ctx = seed_context(split, plan, seed)?;
        let cfg = &ctx.cfg;
        let base = (|| -> Result<(TrainOutcome<T>, f64)> {
            let (nu, ni) = split.universe_through(0);
            let model =
                ModelState::init(nu, ni, cfg.model.dim, cfg.model.layers, &mut stream(seed, Stream::Init, 0))?;
            let mut obs = Relabel { inner: &mut *observer, label: "base".into() };
            let out = train_base(model, &ctx.holdout.train, &ctx.cum[0], &ctx.holdout.val, cfg, &mut obs)?;
            let recall = test_recall(&out.model, &ctx.cum[0], &ctx.holdout.test, cfg, 0)?;
            Ok((out, recall))
        })();
        let base = match base {
            Ok((out, recall)) => {
                observer.on_model(seed, "base", 0, &out.model);
                report.per_block.push(result(seed, "base", 0, recall, &out));
                out.model
            }
            Err(e) => {
                for spec in &plan.methods {
                    report.failures.push(Failure::new(seed, &spec.label, 0, &e));
                }
                continue;
            }
        };
        for spec in &plan.methods {
            if let Err((block, e)) = run_chain(split, &ctx, &base, spec, &mut report, observer) {
                report.failures.push(Failure::new(seed, &spec.label, block, &e));
            }
        }
    }
    report.summarize();
    Ok(report)
}
