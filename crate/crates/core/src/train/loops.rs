use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::bpr::{bpr_loss, l2_penalty, sample_negatives};
use super::{Method, TrainConfig};
use crate::data::Interaction;
use crate::distill::{
    embd_baseline_loss, global_distill_loss, local_distill_loss, lsp_baseline_loss, self_distill_loss, Anchors,
    DistillConfig, LspSamples, NodeBatch, TeacherSnapshot,
};
use crate::error::{Error, Result};
use crate::eval::recall_at_k;
use crate::graph::{BipartiteGraph, Side};
use crate::matrix::Matrix;
use crate::model::{ModelState, ParamGrads};
use crate::real::Real;
use crate::rng::{stream, Rng, Stream};
use crate::rows::{NodeRows, RowSet};

/// Loss components of one epoch, summed over its steps. Distillation terms
/// are unweighted; `total` is the weighted objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub l2: f64,
    #[serde(rename = "self")]
    pub self_: f64,
    pub local: f64,
    pub global: f64,
    pub embd: f64,
    pub lsp: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.bpr += o.bpr;
        self.l2 += o.l2;
        self.self_ += o.self_;
        self.local += o.local;
        self.global += o.global;
        self.embd += o.embd;
        self.lsp += o.lsp;
        self.total += o.total;
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// `base`, `incremental` or `full`.
    pub stage: String,
    pub method: String,
    pub block: usize,
    pub seed: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_recall: f64,
    /// Training time of the epoch, excluding validation.
    pub seconds: f64,
}

pub trait TrainObserver {
    fn on_epoch(&mut self, _log: &EpochLog) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters at the epoch with the best validation recall.
    pub model: ModelState<T>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
    /// Wall-clock training time, excluding validation.
    pub seconds: f64,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy)]
struct Weights {
    self_: f64,
    local: f64,
    global: f64,
    embd: f64,
    lsp: f64,
}

impl Weights {
    fn for_method(method: Method, d: &DistillConfig) -> Self {
        let zero = Weights { self_: 0.0, local: 0.0, global: 0.0, embd: 0.0, lsp: 0.0 };
        match method {
            Method::Finetune | Method::FullBatch => zero,
            Method::Embd => Weights { embd: d.lambda_embd, ..zero },
            Method::Lsp => Weights { lsp: d.lambda_lsp, ..zero },
            Method::GraphSail => Weights { self_: d.lambda_self, local: d.lambda_local, global: d.lambda_global, ..zero },
        }
    }

    fn any(&self) -> bool {
        [self.self_, self.local, self.global, self.embd, self.lsp].iter().any(|&w| w != 0.0)
    }
}

struct Distill<'a, T> {
    teacher: &'a TeacherSnapshot<T>,
    weights: Weights,
    tau: f64,
    lsp_neighbors: usize,
    anchors: Option<Anchors<T>>,
}

struct Rngs {
    shuffle: Rng,
    negatives: Rng,
    neighbors: Rng,
    lsp: Rng,
    eval: Rng,
    anchors: Rng,
}

impl Rngs {
    fn new(seed: u64, key: u64) -> Self {
        Self {
            shuffle: stream(seed, Stream::Shuffle, key),
            negatives: stream(seed, Stream::Negatives, key),
            neighbors: stream(seed, Stream::Neighbors, key),
            lsp: stream(seed, Stream::Lsp, key),
            eval: stream(seed, Stream::Eval, key),
            anchors: stream(seed, Stream::Anchors, key),
        }
    }
}

struct Stage<'a> {
    name: &'static str,
    method: Method,
    block: usize,
    /// Distinguishes random streams of different training calls.
    rng_key: u64,
    lr: f64,
    patience: usize,
    max_epochs: usize,
    agg: &'a BipartiteGraph,
    val: &'a [Interaction],
}

fn uniq(it: impl IntoIterator<Item = u32>, seen: &mut [bool]) -> Vec<u32> {
    let mut out = Vec::new();
    for x in it {
        if !seen[x as usize] {
            seen[x as usize] = true;
            out.push(x);
        }
    }
    for &x in &out {
        seen[x as usize] = false;
    }
    out
}

struct Trainer<'a, T> {
    model: ModelState<T>,
    adam: AdamState<T>,
    cfg: &'a TrainConfig,
    stage: Stage<'a>,
    distill: Option<Distill<'a, T>>,
    rngs: Rngs,
    seen_u: Vec<bool>,
    seen_i: Vec<bool>,
}

impl<T: Real> Trainer<'_, T> {
    fn step(&mut self, batch: &[(u32, u32)]) -> Result<LossBreakdown> {
        let cfg = self.cfg;
        let n_items = self.model.n_items();
        let mut triples = Vec::with_capacity(batch.len() * cfg.n_neg);
        for &(u, i) in batch {
            for j in sample_negatives(self.stage.agg, u, cfg.n_neg, n_items, &mut self.rngs.negatives)? {
                triples.push((u, i, j));
            }
        }
        let nb = NodeBatch::new(
            batch.iter().map(|p| p.0),
            batch.iter().map(|p| p.1).chain(triples.iter().map(|t| t.2)),
        );

        let mut extra_u: Vec<u32> = Vec::new();
        let mut extra_i: Vec<u32> = Vec::new();
        let mut lsp_samples = None;
        if let Some(d) = &self.distill {
            if d.weights.local != 0.0 {
                for &u in &nb.users {
                    if d.teacher.covers(Side::User, u) {
                        extra_i.extend_from_slice(d.teacher.prev_neighbors(Side::User, u));
                    }
                }
                for &i in &nb.items {
                    if d.teacher.covers(Side::Item, i) {
                        extra_u.extend_from_slice(d.teacher.prev_neighbors(Side::Item, i));
                    }
                }
            }
            if d.weights.lsp != 0.0 {
                let s = LspSamples::draw(d.teacher, &nb, d.lsp_neighbors, &mut self.rngs.lsp);
                extra_i.extend(s.neighbor_ids(Side::User));
                extra_u.extend(s.neighbor_ids(Side::Item));
                lsp_samples = Some(s);
            }
        }
        let need_u = uniq(nb.users.iter().copied().chain(extra_u), &mut self.seen_u);
        let need_i = uniq(nb.items.iter().copied().chain(extra_i), &mut self.seen_i);

        let fwd = cfg.forward_options();
        let (mu, cache_u) = self.model.forward_embed(self.stage.agg, &need_u, Side::User, &fwd, &mut self.rngs.neighbors)?;
        let (mi, cache_i) = self.model.forward_embed(self.stage.agg, &need_i, Side::Item, &fwd, &mut self.rngs.neighbors)?;
        let student = NodeRows { users: RowSet::from_matrix(&need_u, &mu), items: RowSet::from_matrix(&need_i, &mi) };
        let mut grads = NodeRows::zeros_like(&student);

        let mut out = LossBreakdown { bpr: bpr_loss(&student, &triples, &mut grads)?.to_f64_lossy(), ..Default::default() };
        out.total = out.bpr;
        if let Some(d) = &self.distill {
            let w = d.weights;
            let tau = T::of(d.tau);
            let mut term = |weight: f64, slot: &mut f64, f: &mut dyn FnMut(T) -> Result<T>| -> Result<()> {
                if weight != 0.0 {
                    let v = f(T::of(weight))?.to_f64_lossy();
                    *slot += v;
                    out.total += weight * v;
                }
                Ok(())
            };
            term(w.self_, &mut out.self_, &mut |wt| self_distill_loss(&student, d.teacher, &nb, &mut grads, wt))?;
            term(w.local, &mut out.local, &mut |wt| local_distill_loss(&student, d.teacher, &nb, &mut grads, wt))?;
            if w.global != 0.0 {
                let anchors = d.anchors.as_ref().expect("anchors refreshed before the epoch");
                term(w.global, &mut out.global, &mut |wt| {
                    global_distill_loss(&student, d.teacher, anchors, tau, &nb, &mut grads, wt)
                })?;
            }
            term(w.embd, &mut out.embd, &mut |wt| embd_baseline_loss(&student, d.teacher, &nb, &mut grads, wt))?;
            if let Some(samples) = &lsp_samples {
                term(w.lsp, &mut out.lsp, &mut |wt| {
                    lsp_baseline_loss(&student, d.teacher, samples, tau, &nb, &mut grads, wt)
                })?;
            }
        }
        debug_assert_eq!(grads.users.len(), need_u.len());
        debug_assert_eq!(grads.items.len(), need_i.len());

        let d = self.model.dim();
        let mut pg = ParamGrads::new(d);
        let up_u = Matrix::from_vec(need_u.len(), d, grads.users.values().to_vec());
        let up_i = Matrix::from_vec(need_i.len(), d, grads.items.values().to_vec());
        self.model.backward(&cache_u, &up_u, &mut pg)?;
        self.model.backward(&cache_i, &up_i, &mut pg)?;
        out.l2 = l2_penalty(&self.model, &nb.users, &nb.items, cfg.l2, &mut pg).to_f64_lossy();
        out.total += out.l2;
        adam_step(&mut self.model, &pg, &mut self.adam, self.stage.lr)?;
        Ok(out)
    }

    fn refresh_anchors(&mut self) -> Result<()> {
        let Some(d) = &mut self.distill else { return Ok(()) };
        if d.weights.global == 0.0 {
            return Ok(());
        }
        let emb = self.model.full_embeddings(self.stage.agg, &self.cfg.forward_options(), &mut self.rngs.anchors)?;
        d.anchors = Some(d.teacher.student_anchors(&emb)?);
        Ok(())
    }

    fn validate(&mut self) -> Result<f64> {
        let emb = self.model.full_embeddings(self.stage.agg, &self.cfg.forward_options(), &mut self.rngs.eval)?;
        Ok(recall_at_k(&emb, self.stage.val, self.stage.agg, self.cfg.k, !self.cfg.deterministic)?.recall)
    }

    fn run(mut self, positives: &[(u32, u32)], observer: &mut dyn TrainObserver) -> Result<TrainOutcome<T>> {
        let mut order: Vec<usize> = (0..positives.len()).collect();
        let mut best: Option<(ModelState<T>, usize, f64)> = None;
        let mut since_best = 0;
        let mut history = Vec::new();
        let mut seconds = 0.0;
        let mut epochs_run = 0;
        for epoch in 0..self.stage.max_epochs {
            let t0 = Instant::now();
            self.refresh_anchors()?;
            order.shuffle(&mut self.rngs.shuffle);
            let mut loss = LossBreakdown::default();
            let mut batch = Vec::with_capacity(self.cfg.batch_size);
            for chunk in order.chunks(self.cfg.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&k| positives[k]));
                loss.add(&self.step(&batch)?);
            }
            if !self.model.all_finite() {
                return Err(Error::Divergence("parameters".into()));
            }
            let elapsed = t0.elapsed().as_secs_f64();
            seconds += elapsed;
            epochs_run += 1;
            let val = self.validate()?;
            let log = EpochLog {
                stage: self.stage.name.into(),
                method: self.stage.method.name().into(),
                block: self.stage.block,
                seed: self.cfg.seed,
                epoch,
                loss,
                val_recall: val,
                seconds: elapsed,
            };
            observer.on_epoch(&log);
            history.push(log);
            if best.as_ref().is_none_or(|b| val > b.2) {
                best = Some((self.model.clone(), epoch, val));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.stage.patience {
                    break;
                }
            }
        }
        let (model, best_epoch, best_val) = best.expect("at least one epoch");
        Ok(TrainOutcome { model, best_epoch, best_val, epochs_run, seconds, history })
    }
}

fn pairs(records: &[Interaction]) -> Vec<(u32, u32)> {
    records.iter().map(|r| (r.user, r.item)).collect()
}

fn check_ids<T: Real>(model: &ModelState<T>, graph: &BipartiteGraph, records: &[Interaction]) -> Result<()> {
    if graph.n_users() > model.n_users() || graph.n_items() > model.n_items() {
        return Err(Error::ShapeMismatch(format!(
            "graph universe {}x{} exceeds model tables {}x{}",
            graph.n_users(),
            graph.n_items(),
            model.n_users(),
            model.n_items()
        )));
    }
    for r in records {
        if r.user as usize >= model.n_users() {
            return Err(Error::IdOutOfRange { side: "user", id: r.user, n: model.n_users() });
        }
        if r.item as usize >= model.n_items() {
            return Err(Error::IdOutOfRange { side: "item", id: r.item, n: model.n_items() });
        }
    }
    Ok(())
}

fn trainer<'a, T: Real>(
    model: ModelState<T>,
    cfg: &'a TrainConfig,
    stage: Stage<'a>,
    distill: Option<Distill<'a, T>>,
) -> Trainer<'a, T> {
    let adam = AdamState::new(&model);
    let rngs = Rngs::new(cfg.seed, stage.rng_key);
    let seen_u = vec![false; model.n_users()];
    let seen_i = vec![false; model.n_items()];
    Trainer { model, adam, cfg, stage, distill, rngs, seen_u, seen_i }
}

/// BPR-only training with per-epoch validation and early stopping; returns
/// the best-validation parameters. `graph` is built from `train` and serves
/// for aggregation, negative sampling and validation masking.
pub fn train_base<T: Real>(
    model: ModelState<T>,
    train: &[Interaction],
    graph: &BipartiteGraph,
    val: &[Interaction],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_ids(&model, graph, train)?;
    let stage = Stage {
        name: "base",
        method: Method::FullBatch,
        block: 0,
        rng_key: 0,
        lr: cfg.lr_base,
        patience: cfg.patience_base,
        max_epochs: cfg.max_epochs_base,
        agg: graph,
        val,
    };
    trainer(model, cfg, stage, None).run(&pairs(train), observer)
}

/// Fresh initialization followed by base-style training on all history up
/// to and including incremental block `block`.
pub fn train_full_batch<T: Real>(
    history: &[Interaction],
    graph: &BipartiteGraph,
    val: &[Interaction],
    block: usize,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let key = 1000 + block as u64;
    let model = ModelState::init(
        graph.n_users(),
        graph.n_items(),
        cfg.model.dim,
        cfg.model.layers,
        &mut stream(cfg.seed, Stream::Init, key),
    )?;
    check_ids(&model, graph, history)?;
    let stage = Stage {
        name: "full",
        method: Method::FullBatch,
        block,
        rng_key: key,
        lr: cfg.lr_base,
        patience: cfg.patience_base,
        max_epochs: cfg.max_epochs_base,
        agg: graph,
        val,
    };
    trainer(model, cfg, stage, None).run(&pairs(history), observer)
}

pub struct IncrementalInputs<'a, T> {
    pub prev_model: &'a ModelState<T>,
    pub snapshot: &'a TeacherSnapshot<T>,
    /// Interactions of the new block; the only source of positive pairs.
    pub block: &'a [Interaction],
    /// Cumulative graph through the new block: aggregation, negatives and
    /// validation masking.
    pub agg_graph: &'a BipartiteGraph,
    pub val: &'a [Interaction],
    pub block_id: usize,
}

/// Continues training `prev_model` on a new block. The model's tables grow
/// to the aggregation graph's universe (new rows Xavier-initialized) and
/// the objective is BPR plus the method's distillation terms.
pub fn train_incremental<T: Real>(
    inputs: IncrementalInputs<'_, T>,
    cfg: &TrainConfig,
    dcfg: &DistillConfig,
    method: Method,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    dcfg.validate()?;
    if !method.is_incremental() {
        return Err(Error::InvalidArgument("full-batch is not an incremental method".into()));
    }
    let prev = inputs.prev_model;
    let snap = inputs.snapshot;
    if snap.n_nodes(Side::User) != prev.n_users() || snap.n_nodes(Side::Item) != prev.n_items() {
        return Err(Error::SnapshotMismatch(format!(
            "teacher covers {}x{} nodes, previous model has {}x{}",
            snap.n_nodes(Side::User),
            snap.n_nodes(Side::Item),
            prev.n_users(),
            prev.n_items()
        )));
    }
    if snap.embeddings().users.cols() != prev.dim() {
        return Err(Error::SnapshotMismatch("embedding width differs".into()));
    }
    let mut model = prev.clone();
    let key = inputs.block_id as u64;
    model.grow(inputs.agg_graph.n_users(), inputs.agg_graph.n_items(), &mut stream(cfg.seed, Stream::Grow, key));
    check_ids(&model, inputs.agg_graph, inputs.block)?;
    let weights = Weights::for_method(method, dcfg);
    let distill = weights.any().then_some(Distill {
        teacher: snap,
        weights,
        tau: dcfg.tau,
        lsp_neighbors: dcfg.lsp_neighbors,
        anchors: None,
    });
    let stage = Stage {
        name: "incremental",
        method,
        block: inputs.block_id,
        rng_key: key,
        lr: cfg.lr_inc,
        patience: cfg.patience_inc,
        max_epochs: cfg.max_epochs_inc,
        agg: inputs.agg_graph,
        val: inputs.val,
    };
    trainer(model, cfg, stage, distill).run(&pairs(inputs.block), observer)
}
