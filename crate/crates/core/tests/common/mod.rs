#![allow(dead_code)]

use increc::data::Interaction;
use increc::distill::{
    embd_baseline_loss, global_distill_loss, local_distill_loss, lsp_baseline_loss, self_distill_loss, Anchors,
    LspSamples,
};
use increc::model::ParamGrads;
use increc::rng::{stream, Rng, Stream};
use increc::train::{bpr_loss, l2_penalty};
use increc::{BipartiteGraph, FinalEmbeddings, Matrix, ModelState, NodeBatch, NodeRows, Result, RowSet, Side, TeacherSnapshot};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const D: usize = 8;
pub const EPS: f64 = 1e-4;

pub fn randn(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data)
}

pub fn random_graph(rng: &mut Rng, nu: usize, ni: usize, p: f64) -> BipartiteGraph {
    let mut recs = Vec::new();
    for u in 0..nu as u32 {
        for i in 0..ni as u32 {
            if rng.random::<f64>() < p {
                recs.push(Interaction { user: u, item: i, time: 0 });
            }
        }
    }
    BipartiteGraph::build(&recs, nu, ni, None).unwrap()
}

/// A teacher covering `nt` nodes per side and a student over `ns > nt`
/// nodes per side (the extra ones are new), all in the batch.
pub struct Fixture {
    pub teacher: TeacherSnapshot<f64>,
    pub student: NodeRows<f64>,
    pub batch: NodeBatch,
    pub anchors: Anchors<f64>,
    pub samples: LspSamples,
    pub triples: Vec<(u32, u32, u32)>,
    pub tau: f64,
}

pub fn fixture(seed: u64) -> Fixture {
    let mut rng = stream(seed, Stream::Synthetic, 77);
    let (nt, ns, k) = (4usize, 5usize, 2usize);
    let prev = random_graph(&mut rng, nt, nt, 0.5);
    let new = random_graph(&mut rng, ns, ns, 0.5);
    let emb = FinalEmbeddings { users: randn(&mut rng, nt, D, 0.5), items: randn(&mut rng, nt, D, 0.5), block: 0, epoch: 0 };
    let clusters: Vec<u32> = (0..nt as u32).map(|i| i % k as u32).collect();
    let teacher = TeacherSnapshot::from_parts(emb, prev, &new, clusters.clone(), clusters, k).unwrap();
    let ids: Vec<u32> = (0..ns as u32).collect();
    let student = NodeRows {
        users: RowSet::from_matrix(&ids, &randn(&mut rng, ns, D, 0.5)),
        items: RowSet::from_matrix(&ids, &randn(&mut rng, ns, D, 0.5)),
    };
    let batch = NodeBatch::new(ids.clone(), ids.clone());
    let anchors = Anchors { users: randn(&mut rng, k, D, 0.5), items: randn(&mut rng, k, D, 0.5) };
    let samples = LspSamples::draw(&teacher, &batch, 3, &mut rng);
    let triples = (0..6)
        .map(|_| (rng.random_range(0..ns as u32), rng.random_range(0..ns as u32), rng.random_range(0..ns as u32)))
        .collect();
    Fixture { teacher, student, batch, anchors, samples, triples, tau: 0.5 }
}

/// Same fixture with every covered student row equal to the teacher's and
/// the student anchors recomputed from those rows.
pub fn fixture_student_equals_teacher(seed: u64) -> Fixture {
    let mut fx = fixture(seed);
    for side in [Side::User, Side::Item] {
        for id in 0..fx.teacher.n_nodes(side) as u32 {
            let row = fx.teacher.teacher_row(side, id).to_vec();
            fx.student.side_mut(side).get_mut(id).unwrap().copy_from_slice(&row);
        }
    }
    let full = FinalEmbeddings {
        users: Matrix::from_rows(&(0..5).map(|i| fx.student.users.get(i).unwrap().to_vec()).collect::<Vec<_>>()),
        items: Matrix::from_rows(&(0..5).map(|i| fx.student.items.get(i).unwrap().to_vec()).collect::<Vec<_>>()),
        block: 1,
        epoch: 0,
    };
    fx.anchors = fx.teacher.student_anchors(&full).unwrap();
    fx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Bpr,
    SelfDistill,
    Local,
    Global,
    Embd,
    Lsp,
}

pub const ALL_LOSSES: [Loss; 6] = [Loss::Bpr, Loss::SelfDistill, Loss::Local, Loss::Global, Loss::Embd, Loss::Lsp];

pub fn eval_loss(loss: Loss, fx: &Fixture, student: &NodeRows<f64>, grads: &mut NodeRows<f64>) -> Result<f64> {
    let t = &fx.teacher;
    match loss {
        Loss::Bpr => bpr_loss(student, &fx.triples, grads),
        Loss::SelfDistill => self_distill_loss(student, t, &fx.batch, grads, 1.0),
        Loss::Local => local_distill_loss(student, t, &fx.batch, grads, 1.0),
        Loss::Global => global_distill_loss(student, t, &fx.anchors, fx.tau, &fx.batch, grads, 1.0),
        Loss::Embd => embd_baseline_loss(student, t, &fx.batch, grads, 1.0),
        Loss::Lsp => lsp_baseline_loss(student, t, &fx.samples, fx.tau, &fx.batch, grads, 1.0),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Relative error between the analytic student-row gradient of `loss` and
/// central differences.
pub fn loss_grad_error(loss: Loss, fx: &Fixture) -> f64 {
    let mut grads = NodeRows::zeros_like(&fx.student);
    eval_loss(loss, fx, &fx.student, &mut grads).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for side in [Side::User, Side::Item] {
        for &id in fx.student.side(side).ids() {
            for c in 0..D {
                let f = |delta: f64| {
                    let mut s = fx.student.clone();
                    s.side_mut(side).get_mut(id).unwrap()[c] += delta;
                    let mut scratch = NodeRows::zeros_like(&s);
                    eval_loss(loss, fx, &s, &mut scratch).unwrap()
                };
                numeric.push((f(EPS) - f(-EPS)) / (2.0 * EPS));
                analytic.push(grads.get(side, id).map_or(0.0, |g| g[c]));
            }
        }
    }
    relative_error(&analytic, &numeric)
}

/// A one-layer model over a small random graph, with fixed neighbor lists
/// for every node and a random linear readout of the final embeddings.
pub struct ForwardFixture {
    pub model: ModelState<f64>,
    pub users: Vec<u32>,
    pub items: Vec<u32>,
    pub user_nbrs: Vec<Vec<u32>>,
    pub item_nbrs: Vec<Vec<u32>>,
    pub readout_u: Matrix<f64>,
    pub readout_i: Matrix<f64>,
}

pub fn forward_fixture(seed: u64) -> ForwardFixture {
    let mut rng = stream(seed, Stream::Synthetic, 78);
    let (nu, ni) = (5usize, 5usize);
    let g = random_graph(&mut rng, nu, ni, 0.4);
    let model = ModelState::from_parts(
        randn(&mut rng, nu, D, 1.0),
        randn(&mut rng, ni, D, 1.0),
        Some(randn(&mut rng, D, 2 * D, 0.5)),
        Some(randn(&mut rng, D, 2 * D, 0.5)),
    )
    .unwrap();
    let users: Vec<u32> = (0..nu as u32).collect();
    let items: Vec<u32> = (0..ni as u32).collect();
    let mut draw = |side: Side, n: u32| -> Vec<u32> {
        if g.degree(side, n) == 0 {
            Vec::new()
        } else {
            g.sample_neighbors(side, n, 3, &mut rng).unwrap()
        }
    };
    let user_nbrs = users.iter().map(|&u| draw(Side::User, u)).collect();
    let item_nbrs = items.iter().map(|&i| draw(Side::Item, i)).collect();
    let readout_u = randn(&mut rng, nu, D, 1.0);
    let readout_i = randn(&mut rng, ni, D, 1.0);
    ForwardFixture { model, users, items, user_nbrs, item_nbrs, readout_u, readout_i }
}

impl ForwardFixture {
    pub fn objective(&self, model: &ModelState<f64>) -> f64 {
        let (hu, _) = model.forward_given_neighbors(&self.users, Side::User, &self.user_nbrs, false).unwrap();
        let (hi, _) = model.forward_given_neighbors(&self.items, Side::Item, &self.item_nbrs, false).unwrap();
        let dot = |a: &Matrix<f64>, b: &Matrix<f64>| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum::<f64>();
        dot(&hu, &self.readout_u) + dot(&hi, &self.readout_i)
    }

    pub fn analytic(&self) -> ParamGrads<f64> {
        let mut g = ParamGrads::new(D);
        let (_, cu) = self.model.forward_given_neighbors(&self.users, Side::User, &self.user_nbrs, false).unwrap();
        let (_, ci) = self.model.forward_given_neighbors(&self.items, Side::Item, &self.item_nbrs, false).unwrap();
        self.model.backward(&cu, &self.readout_u, &mut g).unwrap();
        self.model.backward(&ci, &self.readout_i, &mut g).unwrap();
        g
    }

    /// Smallest |pre-activation|; central differences straddle the ReLU kink
    /// when this is below ε.
    pub fn min_preactivation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (side, nodes, nbrs) in [(Side::User, &self.users, &self.user_nbrs), (Side::Item, &self.items, &self.item_nbrs)] {
            let w = self.model.weight(side).unwrap();
            for (node, list) in nodes.iter().zip(nbrs) {
                let z = concat_input(&self.model, side, *node, list);
                let mut h = vec![0.0; D];
                w.matvec_into(&z, &mut h);
                m = h.iter().fold(m, |acc, x| acc.min(x.abs()));
            }
        }
        m
    }

    /// Relative error over all parameters: both embedding tables and both
    /// weight matrices.
    pub fn grad_error(&self) -> f64 {
        let g = self.analytic();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for side in [Side::User, Side::Item] {
            let n = self.model.n_nodes(side);
            for r in 0..n {
                for c in 0..D {
                    let f = |delta: f64| {
                        let mut m = self.model.clone();
                        m.table_mut(side).row_mut(r)[c] += delta;
                        self.objective(&m)
                    };
                    numeric.push((f(EPS) - f(-EPS)) / (2.0 * EPS));
                    analytic.push(g.rows.get(side, r as u32).map_or(0.0, |row| row[c]));
                }
            }
            for idx in 0..D * 2 * D {
                let f = |delta: f64| {
                    let mut m = self.model.clone();
                    m.weight_mut(side).unwrap().as_mut_slice()[idx] += delta;
                    self.objective(&m)
                };
                numeric.push((f(EPS) - f(-EPS)) / (2.0 * EPS));
                analytic.push(g.weight(side).map_or(0.0, |w| w.as_slice()[idx]));
            }
        }
        relative_error(&analytic, &numeric)
    }
}

fn concat_input(model: &ModelState<f64>, side: Side, node: u32, nbrs: &[u32]) -> Vec<f64> {
    let mut z = model.table(side).row(node as usize).to_vec();
    let mut agg = vec![0.0; D];
    for &nb in nbrs {
        for (a, x) in agg.iter_mut().zip(model.table(side.other()).row(nb as usize)) {
            *a += x / nbrs.len() as f64;
        }
    }
    z.extend(agg);
    z
}

/// L2 penalty gradient check over the given rows and both weights.
pub fn l2_grad_error(seed: u64) -> f64 {
    let fx = forward_fixture(seed);
    let lambda = 0.3;
    let users = [0u32, 2, 4];
    let items = [1u32, 3];
    let mut g = ParamGrads::new(D);
    l2_penalty(&fx.model, &users, &items, lambda, &mut g);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (side, ids) in [(Side::User, &users[..]), (Side::Item, &items[..])] {
        for r in 0..fx.model.n_nodes(side) {
            for c in 0..D {
                let f = |delta: f64| {
                    let mut m = fx.model.clone();
                    m.table_mut(side).row_mut(r)[c] += delta;
                    l2_penalty(&m, &users, &items, lambda, &mut ParamGrads::new(D))
                };
                numeric.push((f(EPS) - f(-EPS)) / (2.0 * EPS));
                let touched = ids.contains(&(r as u32));
                analytic.push(if touched { g.rows.get(side, r as u32).unwrap()[c] } else { 0.0 });
            }
        }
    }
    relative_error(&analytic, &numeric)
}

/// Random embeddings, training mask and test set for `nu` users and `ni`
/// items. Scores are rounded to a coarse grid so that ties occur.
pub fn ranking_instance(seed: u64, nu: usize, ni: usize) -> (FinalEmbeddings<f64>, Vec<Interaction>, BipartiteGraph) {
    let mut rng = stream(seed, Stream::Synthetic, 79);
    let mut users = randn(&mut rng, nu, 4, 1.0);
    let mut items = randn(&mut rng, ni, 4, 1.0);
    for x in users.as_mut_slice().iter_mut().chain(items.as_mut_slice()) {
        *x = (*x * 2.0).round() / 2.0;
    }
    let mask = random_graph(&mut rng, nu, ni, 0.2);
    let mut test = Vec::new();
    for u in 0..nu as u32 {
        if rng.random::<f64>() < 0.2 {
            continue;
        }
        for _ in 0..rng.random_range(1..6) {
            test.push(Interaction { user: u, item: rng.random_range(0..ni as u32), time: 0 });
        }
    }
    (FinalEmbeddings { users, items, block: 0, epoch: 0 }, test, mask)
}

/// Full sort of every user's unmasked items by (score desc, id asc).
pub fn brute_force_recall(emb: &FinalEmbeddings<f64>, test: &[Interaction], mask: &BipartiteGraph, k: usize) -> f64 {
    let mut hits = 0usize;
    let mut positives = 0usize;
    for u in 0..emb.users.rows() as u32 {
        let mut wanted: Vec<u32> =
            test.iter().filter(|r| r.user == u && !mask.has_edge(u, r.item)).map(|r| r.item).collect();
        wanted.sort_unstable();
        wanted.dedup();
        if wanted.is_empty() {
            continue;
        }
        let mut scored: Vec<(f64, u32)> = (0..emb.items.rows() as u32)
            .filter(|&i| !mask.has_edge(u, i))
            .map(|i| {
                let s: f64 = emb.users.row(u as usize).iter().zip(emb.items.row(i as usize)).map(|(a, b)| a * b).sum();
                (s, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        hits += scored.iter().take(k).filter(|(_, i)| wanted.contains(i)).count();
        positives += wanted.len();
    }
    if positives == 0 {
        0.0
    } else {
        hits as f64 / positives as f64
    }
}
