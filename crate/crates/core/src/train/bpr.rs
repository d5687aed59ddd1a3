use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::model::{ModelState, ParamGrads};
use crate::real::{axpy, dot, sigmoid, softplus, Real};
use crate::rows::NodeRows;

/// `−log σ(s_u·s_i − s_u·s_j)` and its gradients with respect to the three
/// embeddings.
pub fn bpr_triple<T: Real>(su: &[T], si: &[T], sj: &[T]) -> (T, Vec<T>, Vec<T>, Vec<T>) {
    let x = dot(su, si) - dot(su, sj);
    let loss = softplus(-x);
    let g = -sigmoid(-x);
    let gu = si.iter().zip(sj).map(|(&a, &b)| g * (a - b)).collect();
    let gi = su.iter().map(|&a| g * a).collect();
    let gj = su.iter().map(|&a| -g * a).collect();
    (loss, gu, gi, gj)
}

/// Summed BPR loss over `(user, positive, negative)` triples, accumulating
/// gradients into `grads`.
pub fn bpr_loss<T: Real>(student: &NodeRows<T>, triples: &[(u32, u32, u32)], grads: &mut NodeRows<T>) -> Result<T> {
    let mut total = T::zero();
    let missing = |side: Side, id: u32| Error::ShapeMismatch(format!("no embedding for {} {id}", side.name()));
    for &(u, i, j) in triples {
        let su = student.get(Side::User, u).ok_or_else(|| missing(Side::User, u))?;
        let si = student.get(Side::Item, i).ok_or_else(|| missing(Side::Item, i))?;
        let sj = student.get(Side::Item, j).ok_or_else(|| missing(Side::Item, j))?;
        let x = dot(su, si) - dot(su, sj);
        total += softplus(-x);
        let g = -sigmoid(-x);
        let diff: Vec<T> = si.iter().zip(sj).map(|(&a, &b)| a - b).collect();
        let su = su.to_vec();
        axpy(grads.users.entry(u), g, &diff);
        axpy(grads.items.entry(i), g, &su);
        axpy(grads.items.entry(j), -g, &su);
    }
    Ok(total)
}

/// `λ (Σ ‖e‖² over the given base rows + ‖W_user‖² + ‖W_item‖²)` with its
/// gradient added to `grads`.
pub fn l2_penalty<T: Real>(
    model: &ModelState<T>,
    users: &[u32],
    items: &[u32],
    lambda: f64,
    grads: &mut ParamGrads<T>,
) -> T {
    if lambda == 0.0 {
        return T::zero();
    }
    let lam = T::of(lambda);
    let two_lam = T::of(2.0 * lambda);
    let mut sq = T::zero();
    for (side, ids) in [(Side::User, users), (Side::Item, items)] {
        for &id in ids {
            let row = model.table(side).row(id as usize);
            sq += dot(row, row);
            axpy(grads.rows.side_mut(side).entry(id), two_lam, row);
        }
        if let Some(w) = model.weight(side) {
            sq += w.squared_norm();
            let gw = grads.weight_mut(side, model.dim());
            axpy(gw.as_mut_slice(), two_lam, w.as_slice());
        }
    }
    lam * sq
}

/// `n_neg` items drawn uniformly (with replacement) from the items the user
/// has not interacted with in `graph`.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    user: u32,
    n_neg: usize,
    n_items: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let observed = graph.neighbors(Side::User, user);
    let n_obs = observed.iter().filter(|&&i| (i as usize) < n_items).count();
    if n_obs >= n_items {
        return Err(Error::NoNegatives(user));
    }
    if n_obs * 2 > n_items {
        let seen: HashSet<u32> = observed.iter().copied().collect();
        let pool: Vec<u32> = (0..n_items as u32).filter(|i| !seen.contains(i)).collect();
        return Ok((0..n_neg).map(|_| pool[rng.random_range(0..pool.len())]).collect());
    }
    let mut out = Vec::with_capacity(n_neg);
    while out.len() < n_neg {
        let j = rng.random_range(0..n_items as u32);
        if observed.binary_search(&j).is_err() {
            out.push(j);
        }
    }
    Ok(out)
}
