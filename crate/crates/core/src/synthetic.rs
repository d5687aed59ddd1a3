//! Synthetic interaction data with planted group preferences.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Zipf};

use crate::data::{Interaction, InteractionLog};
use crate::distill::{DistillConfig, TeacherSnapshot};
use crate::error::{Error, Result};
use crate::eval::recall_at_k;
use crate::graph::BipartiteGraph;
use crate::model::ModelState;
use crate::real::Real;
use crate::rng::{stream, Rng, Stream};
use crate::train::{train_base, train_incremental, IncrementalInputs, Method, NoopObserver, TrainConfig};

/// Two-phase data: users prefer the items of one group, and in phase 2 a
/// fraction of users switches to a different group.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub phase1_per_user: usize,
    pub phase2_per_user: usize,
    pub shift_frac: f64,
    /// Probability that an interaction ignores the user's group.
    pub noise: f64,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 300,
            n_groups: 10,
            phase1_per_user: 20,
            phase2_per_user: 10,
            shift_frac: 0.5,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseData {
    pub n_users: usize,
    pub n_items: usize,
    pub base_train: Vec<Interaction>,
    pub base_val: Vec<Interaction>,
    /// Held-out phase-1 interactions, never trained on.
    pub phase1_test: Vec<Interaction>,
    pub inc_train: Vec<Interaction>,
    pub inc_val: Vec<Interaction>,
    pub shifted: Vec<bool>,
}

fn draw_items(
    rng: &mut Rng,
    group: usize,
    cfg: &TwoPhaseConfig,
    n: usize,
    taken: &mut HashSet<u32>,
) -> Vec<u32> {
    let in_group: Vec<u32> = (0..cfg.n_items as u32).filter(|i| *i as usize % cfg.n_groups == group).collect();
    let mut out = Vec::with_capacity(n);
    let mut guard = 0;
    while out.len() < n && guard < 100 * n {
        guard += 1;
        let item = if rng.random::<f64>() < cfg.noise {
            rng.random_range(0..cfg.n_items as u32)
        } else {
            in_group[rng.random_range(0..in_group.len())]
        };
        if taken.insert(item) {
            out.push(item);
        }
    }
    out
}

pub fn two_phase(cfg: &TwoPhaseConfig, seed: u64) -> Result<TwoPhaseData> {
    if cfg.n_groups < 2 || cfg.n_items < cfg.n_groups || cfg.phase1_per_user < 10 {
        return Err(Error::InvalidArgument("two-phase config too small".into()));
    }
    let mut rng = stream(seed, Stream::Synthetic, 0);
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    order.shuffle(&mut rng);
    let n_shift = (cfg.shift_frac * cfg.n_users as f64).round() as usize;
    let mut shifted = vec![false; cfg.n_users];
    for &u in &order[..n_shift] {
        shifted[u] = true;
    }
    let (mut base_train, mut base_val, mut phase1_test) = (Vec::new(), Vec::new(), Vec::new());
    let (mut inc_train, mut inc_val) = (Vec::new(), Vec::new());
    let mut time = 0u64;
    let mut rec = |user: usize, item: u32| {
        time += 1;
        Interaction { user: user as u32, item, time }
    };
    let mut phase2 = Vec::new();
    for (u, &moved) in shifted.iter().enumerate() {
        let g1 = rng.random_range(0..cfg.n_groups);
        let g2 = if moved { (g1 + rng.random_range(1..cfg.n_groups)) % cfg.n_groups } else { g1 };
        let mut taken = HashSet::new();
        let mut p1 = draw_items(&mut rng, g1, cfg, cfg.phase1_per_user, &mut taken);
        p1.shuffle(&mut rng);
        let n_test = p1.len() / 10;
        for (k, &i) in p1.iter().enumerate() {
            let r = rec(u, i);
            match k {
                k if k < n_test => phase1_test.push(r),
                k if k < 2 * n_test => base_val.push(r),
                _ => base_train.push(r),
            }
        }
        phase2.push((u, draw_items(&mut rng, g2, cfg, cfg.phase2_per_user, &mut taken)));
    }
    for (u, items) in phase2 {
        let n_val = (items.len() / 5).max(1);
        for (k, &i) in items.iter().enumerate() {
            let r = rec(u, i);
            if k < n_val {
                inc_val.push(r);
            } else {
                inc_train.push(r);
            }
        }
    }
    Ok(TwoPhaseData { n_users: cfg.n_users, n_items: cfg.n_items, base_train, base_val, phase1_test, inc_train, inc_val, shifted })
}

impl TwoPhaseData {
    pub fn base_graph(&self) -> Result<BipartiteGraph> {
        BipartiteGraph::build(&self.base_train, self.n_users, self.n_items, None)
    }

    /// Base plus phase-2 training interactions.
    pub fn cumulative_graph(&self) -> Result<BipartiteGraph> {
        BipartiteGraph::build(&self.inc_train, self.n_users, self.n_items, Some(&self.base_graph()?))
    }

    /// Base model trained on phase-1 data with early stopping on the
    /// phase-1 validation split.
    pub fn train_base_model<T: Real>(&self, cfg: &TrainConfig) -> Result<ModelState<T>> {
        let model = ModelState::init(
            self.n_users,
            self.n_items,
            cfg.model.dim,
            cfg.model.layers,
            &mut stream(cfg.seed, Stream::Init, 0),
        )?;
        let g = self.base_graph()?;
        Ok(train_base(model, &self.base_train, &g, &self.base_val, cfg, &mut NoopObserver)?.model)
    }

    /// Updates `base` on phase 2 with `method` and returns Recall@k on the
    /// held-out phase-1 interactions, masking everything trained on.
    pub fn phase1_recall_after_update<T: Real>(
        &self,
        base: &ModelState<T>,
        cfg: &TrainConfig,
        method: Method,
        dcfg: &DistillConfig,
    ) -> Result<f64> {
        let bg = self.base_graph()?;
        let cum = self.cumulative_graph()?;
        let local = BipartiteGraph::build(&self.inc_train, self.n_users, self.n_items, None)?;
        let snapshot = TeacherSnapshot::build(
            base,
            &bg,
            bg.clone(),
            &local,
            dcfg,
            &cfg.forward_options(),
            &mut stream(cfg.seed, Stream::Teacher, 1),
        )?;
        let inputs = IncrementalInputs {
            prev_model: base,
            snapshot: &snapshot,
            block: &self.inc_train,
            agg_graph: &cum,
            val: &self.inc_val,
            block_id: 1,
        };
        let out = train_incremental(inputs, cfg, dcfg, method, &mut NoopObserver)?;
        let emb = out.model.full_embeddings(&cum, &cfg.forward_options(), &mut stream(cfg.seed, Stream::Eval, 99))?;
        Ok(recall_at_k(&emb, &self.phase1_test, &cum, cfg.k, !cfg.deterministic)?.recall)
    }
}

/// Time-ordered log with a long-tailed user activity and item popularity,
/// grouped item preferences and a gradual drift of users towards a second
/// group. Every user and item occurs at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub n_groups: usize,
    /// Probability, at the end of the timeline, that an interaction follows
    /// the user's second group.
    pub drift: f64,
    pub noise: f64,
}

impl ShapedConfig {
    /// Counts of the LastFM tag-assignment data after preprocessing.
    pub fn lastfm() -> Self {
        Self { n_users: 1892, n_items: 12523, n_records: 186_474, n_groups: 20, drift: 0.5, noise: 0.05 }
    }
}

pub fn shaped_log(cfg: &ShapedConfig, seed: u64) -> Result<InteractionLog> {
    let (nu, ni) = (cfg.n_users, cfg.n_items);
    if cfg.n_records < nu.max(ni) || cfg.n_records > nu * ni / 2 || cfg.n_groups == 0 || ni < cfg.n_groups {
        return Err(Error::InvalidArgument("shaped config infeasible".into()));
    }
    let mut rng = stream(seed, Stream::Synthetic, 1);
    let bad = |e: rand_distr::ZipfError| Error::InvalidArgument(e.to_string());
    let user_zipf = Zipf::new(nu as f64, 0.8).map_err(bad)?;
    let groups: Vec<Vec<u32>> =
        (0..cfg.n_groups).map(|g| (0..ni as u32).filter(|i| *i as usize % cfg.n_groups == g).collect()).collect();
    let mut user_perm: Vec<u32> = (0..nu as u32).collect();
    user_perm.shuffle(&mut rng);
    let prefs: Vec<(usize, usize)> =
        (0..nu).map(|_| (rng.random_range(0..cfg.n_groups), rng.random_range(0..cfg.n_groups))).collect();
    let group_zipf: Vec<Zipf<f64>> =
        groups.iter().map(|g| Zipf::new(g.len() as f64, 1.0)).collect::<std::result::Result<_, _>>().map_err(bad)?;

    let mut pairs: HashSet<(u32, u32)> = HashSet::with_capacity(cfg.n_records);
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(cfg.n_records);
    let mut items: Vec<u32> = (0..ni as u32).collect();
    items.shuffle(&mut rng);
    for (k, &i) in items.iter().enumerate() {
        let u = if k < nu { user_perm[k] } else { rng.random_range(0..nu as u32) };
        pairs.insert((u, i));
        out.push((u, i));
    }
    for u in 0..nu as u32 {
        if !out.iter().any(|p| p.0 == u) {
            let i = rng.random_range(0..ni as u32);
            if pairs.insert((u, i)) {
                out.push((u, i));
            }
        }
    }
    let n_seed = out.len();
    while out.len() < cfg.n_records {
        let progress = out.len() as f64 / cfg.n_records as f64;
        let u = user_perm[user_zipf.sample(&mut rng) as usize - 1];
        let (g1, g2) = prefs[u as usize];
        let i = if rng.random::<f64>() < cfg.noise {
            rng.random_range(0..ni as u32)
        } else {
            let g = if rng.random::<f64>() < cfg.drift * progress { g2 } else { g1 };
            groups[g][group_zipf[g].sample(&mut rng) as usize - 1]
        };
        if pairs.insert((u, i)) {
            out.push((u, i));
        }
    }
    // Coverage records are spread over the timeline; the rest keep their
    // generation order so that the drift follows time.
    let mut seed_times: Vec<u64> = (0..n_seed).map(|_| rng.random_range(0..cfg.n_records as u64)).collect();
    seed_times.sort_unstable();
    let mut recs: Vec<Interaction> = Vec::with_capacity(cfg.n_records);
    for (k, &(user, item)) in out.iter().enumerate() {
        let time = if k < n_seed { seed_times[k] } else { k as u64 };
        recs.push(Interaction { user, item, time });
    }
    InteractionLog::from_records(recs)
}
