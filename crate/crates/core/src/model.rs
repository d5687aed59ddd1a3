//! Embedding tables with an optional single mean-aggregation layer.
//!
//! With one layer, a node's final embedding is
//! `ReLU(W_side · [e_node ; mean(e_n for n in sampled cross-side neighbors)])`,
//! with separate weight matrices for user and item nodes. With zero layers the
//! final embedding is the raw table row (plain matrix factorization).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::matrix::Matrix;
use crate::real::{axpy, dot, Real};
use crate::rng::node_rng;
use crate::rows::{NodeRows, RowSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    dim: usize,
    layers: usize,
    pub e_user: Matrix<T>,
    pub e_item: Matrix<T>,
    /// `dim × 2·dim`; absent when `layers == 0`.
    pub w_user: Option<Matrix<T>>,
    pub w_item: Option<Matrix<T>>,
}

fn xavier<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| T::of(dist.sample(rng))).collect())
}

impl<T: Real> ModelState<T> {
    /// Xavier-uniform initialization of every table and weight matrix.
    pub fn init<R: Rng + ?Sized>(n_users: usize, n_items: usize, dim: usize, layers: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        if layers > 1 {
            return Err(Error::InvalidArgument(format!("layers must be 0 or 1, got {layers}")));
        }
        let e_user = xavier(n_users, dim, n_users, dim, rng);
        let e_item = xavier(n_items, dim, n_items, dim, rng);
        let (w_user, w_item) = if layers == 1 {
            (Some(xavier(dim, 2 * dim, 2 * dim, dim, rng)), Some(xavier(dim, 2 * dim, 2 * dim, dim, rng)))
        } else {
            (None, None)
        };
        Ok(Self { dim, layers, e_user, e_item, w_user, w_item })
    }

    pub fn from_parts(
        e_user: Matrix<T>,
        e_item: Matrix<T>,
        w_user: Option<Matrix<T>>,
        w_item: Option<Matrix<T>>,
    ) -> Result<Self> {
        let dim = e_user.cols();
        if e_item.cols() != dim {
            return Err(Error::ShapeMismatch("user and item tables differ in width".into()));
        }
        let layers = match (&w_user, &w_item) {
            (None, None) => 0,
            (Some(a), Some(b)) => {
                for w in [a, b] {
                    if w.rows() != dim || w.cols() != 2 * dim {
                        return Err(Error::ShapeMismatch(format!(
                            "weight is {}x{}, expected {dim}x{}",
                            w.rows(),
                            w.cols(),
                            2 * dim
                        )));
                    }
                }
                1
            }
            _ => return Err(Error::ShapeMismatch("exactly one weight matrix supplied".into())),
        };
        Ok(Self { dim, layers, e_user, e_item, w_user, w_item })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn n_users(&self) -> usize {
        self.e_user.rows()
    }

    pub fn n_items(&self) -> usize {
        self.e_item.rows()
    }

    pub fn n_nodes(&self, side: Side) -> usize {
        self.table(side).rows()
    }

    pub fn table(&self, side: Side) -> &Matrix<T> {
        match side {
            Side::User => &self.e_user,
            Side::Item => &self.e_item,
        }
    }

    pub fn table_mut(&mut self, side: Side) -> &mut Matrix<T> {
        match side {
            Side::User => &mut self.e_user,
            Side::Item => &mut self.e_item,
        }
    }

    pub fn weight(&self, side: Side) -> Option<&Matrix<T>> {
        match side {
            Side::User => self.w_user.as_ref(),
            Side::Item => self.w_item.as_ref(),
        }
    }

    pub fn weight_mut(&mut self, side: Side) -> Option<&mut Matrix<T>> {
        match side {
            Side::User => self.w_user.as_mut(),
            Side::Item => self.w_item.as_mut(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.e_user.all_finite()
            && self.e_item.all_finite()
            && self.w_user.as_ref().is_none_or(Matrix::all_finite)
            && self.w_item.as_ref().is_none_or(Matrix::all_finite)
    }

    /// Appends Xavier rows so the tables cover `n_users × n_items`.
    pub fn grow<R: Rng + ?Sized>(&mut self, n_users: usize, n_items: usize, rng: &mut R) {
        for (side, n) in [(Side::User, n_users), (Side::Item, n_items)] {
            let have = self.n_nodes(side);
            if n > have {
                let fresh: Matrix<T> = xavier(n - have, self.dim, n, self.dim, rng);
                let table = self.table_mut(side);
                for row in fresh.iter_rows() {
                    table.push_row(row);
                }
            }
        }
    }

    /// Final embeddings for `nodes` of one side. Neighbor samples are drawn
    /// from per-node generators seeded by one draw from `rng`, so the result
    /// does not depend on thread scheduling.
    pub fn forward_embed<R: Rng + ?Sized>(
        &self,
        graph: &BipartiteGraph,
        nodes: &[u32],
        side: Side,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Matrix<T>, ForwardCache<T>)> {
        let step_seed: u64 = rng.random();
        let neighbors = if self.layers == 0 {
            vec![Vec::new(); nodes.len()]
        } else {
            let sample = |&node: &u32| -> Result<Vec<u32>> {
                if graph.degree(side, node) == 0 {
                    return if opts.isolated_fallback {
                        Ok(Vec::new())
                    } else {
                        Err(Error::IsolatedNode { side: side.name(), id: node })
                    };
                }
                let mut r = node_rng(step_seed, side.tag(), node);
                graph.sample_neighbors(side, node, opts.n_sample, &mut r)
            };
            if opts.parallel {
                nodes.par_iter().map(sample).collect::<Result<Vec<_>>>()?
            } else {
                nodes.iter().map(sample).collect::<Result<Vec<_>>>()?
            }
        };
        self.forward_given_neighbors(nodes, side, &neighbors, opts.parallel)
    }

    /// Forward pass with explicit neighbor lists (an empty list means the
    /// neighborhood term is the zero vector).
    pub fn forward_given_neighbors(
        &self,
        nodes: &[u32],
        side: Side,
        neighbors: &[Vec<u32>],
        parallel: bool,
    ) -> Result<(Matrix<T>, ForwardCache<T>)> {
        let d = self.dim;
        let n = nodes.len();
        if neighbors.len() != n {
            return Err(Error::ShapeMismatch(format!("{} neighbor lists for {n} nodes", neighbors.len())));
        }
        let table = self.table(side);
        let other = self.table(side.other());
        for &node in nodes {
            if node as usize >= table.rows() {
                return Err(Error::IdOutOfRange { side: side.name(), id: node, n: table.rows() });
            }
        }
        for &nb in neighbors.iter().flatten() {
            if nb as usize >= other.rows() {
                return Err(Error::IdOutOfRange { side: side.other().name(), id: nb, n: other.rows() });
            }
        }
        let mut out = Matrix::zeros(n, d);
        let Some(w) = self.weight(side) else {
            for (k, &node) in nodes.iter().enumerate() {
                out.row_mut(k).copy_from_slice(table.row(node as usize));
            }
            let cache = ForwardCache { side, nodes: nodes.to_vec(), concat: Matrix::zeros(0, 0), active: Vec::new(), neighbors: Vec::new() };
            return Ok((out, cache));
        };
        let mut concat = Matrix::zeros(n, 2 * d);
        let mut active = vec![false; n * d];
        let one = |k: usize, h: &mut [T], z: &mut [T], act: &mut [bool]| {
            let node = nodes[k] as usize;
            z[..d].copy_from_slice(table.row(node));
            let nbrs = &neighbors[k];
            if !nbrs.is_empty() {
                let agg = &mut z[d..];
                for &nb in nbrs {
                    axpy(agg, T::one(), other.row(nb as usize));
                }
                let inv = T::one() / T::of(nbrs.len() as f64);
                agg.iter_mut().for_each(|x| *x *= inv);
            }
            w.matvec_into(z, h);
            for (hv, a) in h.iter_mut().zip(act.iter_mut()) {
                *a = *hv > T::zero();
                if !*a {
                    *hv = T::zero();
                }
            }
        };
        if parallel {
            out.as_mut_slice()
                .par_chunks_mut(d)
                .zip(concat.as_mut_slice().par_chunks_mut(2 * d))
                .zip(active.par_chunks_mut(d))
                .enumerate()
                .for_each(|(k, ((h, z), act))| one(k, h, z, act));
        } else {
            out.as_mut_slice()
                .chunks_mut(d)
                .zip(concat.as_mut_slice().chunks_mut(2 * d))
                .zip(active.chunks_mut(d))
                .enumerate()
                .for_each(|(k, ((h, z), act))| one(k, h, z, act));
        }
        let cache = ForwardCache { side, nodes: nodes.to_vec(), concat, active, neighbors: neighbors.to_vec() };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for upstream gradients `upstream`
    /// (one row per cached node) into `grads`. `ReLU'(0)` is taken as 0.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Matrix<T>, grads: &mut ParamGrads<T>) -> Result<()> {
        let d = self.dim;
        if upstream.rows() != cache.nodes.len() || upstream.cols() != d {
            return Err(Error::ShapeMismatch(format!(
                "upstream is {}x{}, cache holds {} nodes of width {d}",
                upstream.rows(),
                upstream.cols(),
                cache.nodes.len()
            )));
        }
        let side = cache.side;
        let Some(w) = self.weight(side) else {
            let rows = grads.rows.side_mut(side);
            for (k, &node) in cache.nodes.iter().enumerate() {
                let g = upstream.row(k);
                if g.iter().any(|x| *x != T::zero()) {
                    axpy(rows.entry(node), T::one(), g);
                }
            }
            return Ok(());
        };
        if cache.concat.rows() != cache.nodes.len() {
            return Err(Error::ShapeMismatch("cache was produced by a zero-layer model".into()));
        }
        let mut dpre = vec![T::zero(); d];
        let mut dz = vec![T::zero(); 2 * d];
        for (k, &node) in cache.nodes.iter().enumerate() {
            let act = &cache.active[k * d..(k + 1) * d];
            let mut any = false;
            for ((dp, &g), &a) in dpre.iter_mut().zip(upstream.row(k)).zip(act) {
                *dp = if a { g } else { T::zero() };
                any |= *dp != T::zero();
            }
            if !any {
                continue;
            }
            let z = cache.concat.row(k);
            let dw = grads.weight_mut(side, d);
            for (r, &dp) in dpre.iter().enumerate() {
                if dp != T::zero() {
                    axpy(dw.row_mut(r), dp, z);
                }
            }
            w.matvec_t_into(&dpre, &mut dz);
            axpy(grads.rows.side_mut(side).entry(node), T::one(), &dz[..d]);
            let nbrs = &cache.neighbors[k];
            if !nbrs.is_empty() {
                let scale = T::one() / T::of(nbrs.len() as f64);
                let other = grads.rows.side_mut(side.other());
                for &nb in nbrs {
                    axpy(other.entry(nb), scale, &dz[d..]);
                }
            }
        }
        Ok(())
    }

    /// Final embeddings of every user and item.
    pub fn full_embeddings<R: Rng + ?Sized>(
        &self,
        graph: &BipartiteGraph,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<FinalEmbeddings<T>> {
        let users: Vec<u32> = (0..self.n_users() as u32).collect();
        let items: Vec<u32> = (0..self.n_items() as u32).collect();
        let (eu, _) = self.forward_embed(graph, &users, Side::User, opts, rng)?;
        let (ei, _) = self.forward_embed(graph, &items, Side::Item, opts, rng)?;
        Ok(FinalEmbeddings { users: eu, items: ei, block: 0, epoch: 0 })
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            dim: self.dim,
            layers: self.layers,
            e_user: self.e_user.cast(),
            e_item: self.e_item.cast(),
            w_user: self.w_user.as_ref().map(Matrix::cast),
            w_item: self.w_item.as_ref().map(Matrix::cast),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOptions {
    /// Neighbors sampled (with replacement) per node.
    pub n_sample: usize,
    /// Use a zero neighborhood term for isolated nodes instead of failing.
    pub isolated_fallback: bool,
    pub parallel: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { n_sample: 10, isolated_fallback: true, parallel: false }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    side: Side,
    nodes: Vec<u32>,
    concat: Matrix<T>,
    active: Vec<bool>,
    neighbors: Vec<Vec<u32>>,
}

impl<T> ForwardCache<T> {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn neighbors(&self) -> &[Vec<u32>] {
        &self.neighbors
    }
}

/// Gradients with respect to model parameters: sparse embedding rows plus
/// dense weight matrices (allocated on first touch).
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub rows: NodeRows<T>,
    pub w_user: Option<Matrix<T>>,
    pub w_item: Option<Matrix<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn new(dim: usize) -> Self {
        Self { rows: NodeRows::new(dim), w_user: None, w_item: None }
    }

    pub fn weight(&self, side: Side) -> Option<&Matrix<T>> {
        match side {
            Side::User => self.w_user.as_ref(),
            Side::Item => self.w_item.as_ref(),
        }
    }

    pub fn weight_mut(&mut self, side: Side, dim: usize) -> &mut Matrix<T> {
        let slot = match side {
            Side::User => &mut self.w_user,
            Side::Item => &mut self.w_item,
        };
        slot.get_or_insert_with(|| Matrix::zeros(dim, 2 * dim))
    }

    pub fn row_set(&self, side: Side) -> &RowSet<T> {
        self.rows.side(side)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.users.all_finite()
            && self.rows.items.all_finite()
            && self.w_user.as_ref().is_none_or(Matrix::all_finite)
            && self.w_item.as_ref().is_none_or(Matrix::all_finite)
    }
}

/// Final user and item embeddings of a model at a given point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEmbeddings<T> {
    pub users: Matrix<T>,
    pub items: Matrix<T>,
    pub block: usize,
    pub epoch: usize,
}

impl<T: Real> FinalEmbeddings<T> {
    pub fn side(&self, side: Side) -> &Matrix<T> {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    pub fn n_nodes(&self, side: Side) -> usize {
        self.side(side).rows()
    }

    /// Inner-product scores for `(user, item)` pairs.
    pub fn score_pairs(&self, pairs: &[(u32, u32)]) -> Result<Vec<T>> {
        pairs
            .iter()
            .map(|&(u, i)| {
                if u as usize >= self.users.rows() {
                    return Err(Error::IdOutOfRange { side: "user", id: u, n: self.users.rows() });
                }
                if i as usize >= self.items.rows() {
                    return Err(Error::IdOutOfRange { side: "item", id: i, n: self.items.rows() });
                }
                Ok(dot(self.users.row(u as usize), self.items.row(i as usize)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dim: usize,
    pub layers: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub block: usize,
    /// Effective configuration, including the loss-term weights.
    #[serde(default)]
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn write_f32(path: &Path, m: &Matrix<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 4);
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", rows * cols * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

impl ModelState<f32> {
    /// Writes `manifest.json` plus one little-endian f32 file per tensor.
    pub fn save_checkpoint(&self, dir: &Path, seed: u64, block: usize, config: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors: Vec<(&str, &Matrix<f32>)> = vec![("e_user", &self.e_user), ("e_item", &self.e_item)];
        if let (Some(wu), Some(wi)) = (&self.w_user, &self.w_item) {
            tensors.push(("w_user", wu));
            tensors.push(("w_item", wi));
        }
        let mut entries = Vec::new();
        for (name, m) in tensors {
            let file = format!("{name}.f32");
            write_f32(&dir.join(&file), m)?;
            entries.push(TensorEntry { name: name.into(), file, rows: m.rows(), cols: m.cols() });
        }
        let manifest = CheckpointManifest {
            dim: self.dim,
            layers: self.layers,
            n_users: self.n_users(),
            n_items: self.n_items(),
            seed,
            block,
            config,
            tensors: entries,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Self)> {
        let path = dir.join("manifest.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let get = |name: &str| -> Result<Option<Matrix<f32>>> {
            manifest
                .tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| read_f32(&dir.join(&t.file), t.rows, t.cols))
                .transpose()
        };
        let e_user = get("e_user")?.ok_or_else(|| Error::format(&path, "missing e_user"))?;
        let e_item = get("e_item")?.ok_or_else(|| Error::format(&path, "missing e_item"))?;
        let model = Self::from_parts(e_user, e_item, get("w_user")?, get("w_item")?)?;
        if model.layers != manifest.layers || model.dim != manifest.dim {
            return Err(Error::format(&path, "manifest disagrees with tensor shapes"));
        }
        Ok((manifest, model))
    }
}

/// Runs `f` over `0..n` either serially or on the rayon pool, preserving order.
pub(crate) fn map_indices<R: Send, F: Fn(usize) -> R + Sync + Send>(parallel: bool, n: usize, f: F) -> Vec<R> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
