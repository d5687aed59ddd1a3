use rand::Rng;

use super::kmeans::{kmeans_cluster, KMeansOptions};
use super::DistillConfig;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::matrix::Matrix;
use crate::model::{FinalEmbeddings, ForwardOptions, ModelState};
use crate::real::{axpy, dot, Real};

/// User-side and item-side anchor tables (`K × d` each).
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors<T> {
    pub users: Matrix<T>,
    pub items: Matrix<T>,
}

impl<T: Real> Anchors<T> {
    pub fn side(&self, side: Side) -> &Matrix<T> {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }
}

/// Everything the student is distilled against, frozen at construction.
///
/// The teacher covers nodes `[0, n)` on each side, where `n` is the size of
/// the teacher's tables; nodes beyond that are new in the current block.
#[derive(Debug, Clone)]
pub struct TeacherSnapshot<T> {
    emb: FinalEmbeddings<T>,
    prev_graph: BipartiteGraph,
    deg_prev: [Vec<usize>; 2],
    deg_new: [Vec<usize>; 2],
    clusters: [Vec<u32>; 2],
    anchors: Anchors<T>,
    eta_norm: [T; 2],
    local_target: [Vec<Option<T>>; 2],
}

fn idx(side: Side) -> usize {
    side.tag() as usize
}

impl<T: Real> TeacherSnapshot<T> {
    /// Assembles a snapshot from precomputed parts.
    ///
    /// * `emb`: teacher final embeddings.
    /// * `prev_graph`: interactions of the teacher's training block (`N^{t−1}`).
    /// * `new_graph`: interactions of the block being trained (`N^t`).
    /// * `clusters`: cluster id per teacher node, per side.
    pub fn from_parts(
        emb: FinalEmbeddings<T>,
        prev_graph: BipartiteGraph,
        new_graph: &BipartiteGraph,
        user_clusters: Vec<u32>,
        item_clusters: Vec<u32>,
        k: usize,
    ) -> Result<Self> {
        let n = [emb.users.rows(), emb.items.rows()];
        if user_clusters.len() != n[0] || item_clusters.len() != n[1] {
            return Err(Error::ShapeMismatch("cluster assignment length differs from teacher universe".into()));
        }
        if prev_graph.n_users() > n[0] || prev_graph.n_items() > n[1] {
            return Err(Error::SnapshotMismatch("previous-block graph exceeds the teacher universe".into()));
        }
        let deg = |g: &BipartiteGraph, side: Side| -> Vec<usize> {
            (0..n[idx(side)] as u32).map(|id| g.degree(side, id)).collect()
        };
        let deg_prev = [deg(&prev_graph, Side::User), deg(&prev_graph, Side::Item)];
        let deg_new = [deg(new_graph, Side::User), deg(new_graph, Side::Item)];
        let clusters = [user_clusters, item_clusters];
        let anchors = Anchors {
            users: cluster_means(&emb.users, &clusters[0], k)?,
            items: cluster_means(&emb.items, &clusters[1], k)?,
        };
        let eta_norm = [Side::User, Side::Item].map(|side| {
            let s = idx(side);
            let sq: f64 = (0..n[s]).map(|id| eta_raw(deg_prev[s][id], deg_new[s][id]).powi(2)).sum();
            // Falls back to 1 when no covered node has history.
            T::of(if sq > 0.0 { sq.sqrt() } else { 1.0 })
        });
        let local_target = [Side::User, Side::Item].map(|side| {
            let table = emb.side(side);
            let other = emb.side(side.other());
            (0..n[idx(side)] as u32)
                .map(|id| {
                    let nbrs = prev_graph.neighbors(side, id);
                    (!nbrs.is_empty()).then(|| {
                        let mut c = vec![T::zero(); table.cols()];
                        for &nb in nbrs {
                            axpy(&mut c, T::one(), other.row(nb as usize));
                        }
                        dot(table.row(id as usize), &c) / T::of(nbrs.len() as f64)
                    })
                })
                .collect()
        });
        Ok(Self { emb, prev_graph, deg_prev, deg_new, clusters, anchors, eta_norm, local_target })
    }

    /// Builds the snapshot from a trained model: full-graph forward pass over
    /// `agg_graph`, then k-means with `K` clusters on each side.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        prev_model: &ModelState<T>,
        agg_graph: &BipartiteGraph,
        prev_graph: BipartiteGraph,
        new_graph: &BipartiteGraph,
        cfg: &DistillConfig,
        fwd: &ForwardOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let emb = prev_model.full_embeddings(agg_graph, fwd, rng)?;
        let opts = KMeansOptions { max_iter: cfg.kmeans_max_iter, tol: cfg.kmeans_tol };
        let ku = kmeans_cluster(&emb.users, cfg.k, rng, opts)?;
        let ki = kmeans_cluster(&emb.items, cfg.k, rng, opts)?;
        Self::from_parts(emb, prev_graph, new_graph, ku.assignments, ki.assignments, cfg.k)
    }

    pub fn embeddings(&self) -> &FinalEmbeddings<T> {
        &self.emb
    }

    pub fn n_nodes(&self, side: Side) -> usize {
        self.emb.n_nodes(side)
    }

    pub fn covers(&self, side: Side, id: u32) -> bool {
        (id as usize) < self.n_nodes(side)
    }

    pub fn teacher_row(&self, side: Side, id: u32) -> &[T] {
        self.emb.side(side).row(id as usize)
    }

    /// `N^{t−1}` of a covered node.
    pub fn prev_neighbors(&self, side: Side, id: u32) -> &[u32] {
        self.prev_graph.neighbors(side, id)
    }

    pub fn prev_graph(&self) -> &BipartiteGraph {
        &self.prev_graph
    }

    pub fn prev_degree(&self, side: Side, id: u32) -> usize {
        self.deg_prev[idx(side)].get(id as usize).copied().unwrap_or(0)
    }

    pub fn new_degree(&self, side: Side, id: u32) -> usize {
        self.deg_new[idx(side)].get(id as usize).copied().unwrap_or(0)
    }

    /// `|N^{t−1}| / max(1, |N^t|)` for covered nodes, 0 otherwise.
    pub fn eta(&self, side: Side, id: u32) -> T {
        if !self.covers(side, id) {
            return T::zero();
        }
        T::of(eta_raw(self.prev_degree(side, id), self.new_degree(side, id)))
    }

    /// L2 norm of η over every covered node of a side.
    pub fn eta_norm(&self, side: Side) -> T {
        self.eta_norm[idx(side)]
    }

    pub fn clusters(&self, side: Side) -> &[u32] {
        &self.clusters[idx(side)]
    }

    pub fn k(&self) -> usize {
        self.anchors.users.rows()
    }

    pub fn anchors(&self) -> &Anchors<T> {
        &self.anchors
    }

    /// `emb^{t−1}_v · c^{t−1}_v`, or `None` when `v` had no neighbors at `t−1`.
    pub fn local_target(&self, side: Side, id: u32) -> Option<T> {
        self.local_target[idx(side)].get(id as usize).copied().flatten()
    }

    /// Student anchors: per-cluster means of the student's current final
    /// embeddings under the teacher's frozen cluster assignments.
    pub fn student_anchors(&self, student: &FinalEmbeddings<T>) -> Result<Anchors<T>> {
        let k = self.k();
        let take = |side: Side| -> Result<Matrix<T>> {
            let table = student.side(side);
            let n = self.n_nodes(side);
            if table.rows() < n {
                return Err(Error::SnapshotMismatch(format!(
                    "student has {} {} rows, teacher covers {n}",
                    table.rows(),
                    side.name()
                )));
            }
            let covered = Matrix::from_vec(n, table.cols(), table.as_slice()[..n * table.cols()].to_vec());
            cluster_means(&covered, self.clusters(side), k)
        };
        Ok(Anchors { users: take(Side::User)?, items: take(Side::Item)? })
    }
}

fn eta_raw(prev: usize, new: usize) -> f64 {
    prev as f64 / new.max(1) as f64
}

fn cluster_means<T: Real>(points: &Matrix<T>, assign: &[u32], k: usize) -> Result<Matrix<T>> {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter_rows().zip(assign) {
        let a = a as usize;
        if a >= k {
            return Err(Error::ShapeMismatch(format!("cluster id {a} with k = {k}")));
        }
        axpy(sums.row_mut(a), T::one(), p);
        counts[a] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::InvalidArgument(format!("cluster {c} has no members")));
        }
        let inv = T::one() / T::of(cnt as f64);
        sums.row_mut(c).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(sums)
}
