//! Recall@k ranking evaluation, the incremental block protocol and reports.

mod protocol;
mod report;

pub use protocol::{base_holdout, block_test_recall, run_protocol, BaseHoldout, MethodSpec, ProtocolObserver, RunPlan};
pub use report::{BlockResult, Failure, MethodSummary, MetricsReport};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::model::{map_indices, FinalEmbeddings};
use crate::real::{dot, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub source_block: usize,
}

/// Random halves of a block. With an odd count the extra record goes to
/// validation.
pub fn halve_block<R: Rng + ?Sized>(block: &[Interaction], source_block: usize, rng: &mut R) -> Result<EvalSplit> {
    if block.len() < 2 {
        return Err(Error::InvalidArgument(format!("block {source_block} has {} records, need 2", block.len())));
    }
    let mut recs = block.to_vec();
    recs.shuffle(rng);
    let test = recs.split_off(recs.len() - recs.len() / 2);
    Ok(EvalSplit { val: recs, test, source_block })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub recall: f64,
    pub hits: usize,
    pub positives: usize,
    /// Users with at least one evaluable test item.
    pub users: usize,
}

/// Test items per user, restricted to the embedding universe and with
/// already-seen items dropped. Users left without items are omitted.
fn test_sets<T: Real>(emb: &FinalEmbeddings<T>, test: &[Interaction], mask: &BipartiteGraph) -> Vec<(u32, Vec<u32>)> {
    let nu = emb.users.rows();
    let ni = emb.items.rows();
    let mut by_user: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for r in test {
        if (r.user as usize) < nu && (r.item as usize) < ni && !mask.has_edge(r.user, r.item) {
            by_user.entry(r.user).or_default().push(r.item);
        }
    }
    by_user
        .into_iter()
        .map(|(u, mut items)| {
            items.sort_unstable();
            items.dedup();
            (u, items)
        })
        .collect()
}

/// Top-`k` items for `user` among those not in `mask`, best first. Ties
/// go to the lower item id.
pub fn top_k<T: Real>(emb: &FinalEmbeddings<T>, user: u32, mask: &BipartiteGraph, k: usize) -> Result<Vec<u32>> {
    let u = emb.users.row(user as usize);
    let seen = mask.neighbors(crate::graph::Side::User, user);
    let mut cand: Vec<(T, u32)> = Vec::with_capacity(emb.items.rows());
    let mut s = 0;
    for i in 0..emb.items.rows() as u32 {
        while s < seen.len() && seen[s] < i {
            s += 1;
        }
        if s < seen.len() && seen[s] == i {
            continue;
        }
        cand.push((dot(u, emb.items.row(i as usize)), i));
    }
    if k > cand.len() {
        return Err(Error::KTooLarge { k, available: cand.len(), user });
    }
    let better = |a: &(T, u32), b: &(T, u32)| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1));
    if k < cand.len() && k > 0 {
        cand.select_nth_unstable_by(k - 1, better);
    }
    cand.truncate(k);
    cand.sort_unstable_by(better);
    Ok(cand.into_iter().map(|c| c.1).collect())
}

/// Recall@k over all users with test items: total hits over total test
/// positives. Items the user interacted with in `mask` are excluded from
/// ranking; users or items outside the embedding tables are skipped.
pub fn recall_at_k<T: Real>(
    emb: &FinalEmbeddings<T>,
    test: &[Interaction],
    mask: &BipartiteGraph,
    k: usize,
    parallel: bool,
) -> Result<RecallResult> {
    let sets = test_sets(emb, test, mask);
    let per_user = map_indices(parallel, sets.len(), |idx| -> Result<usize> {
        let (u, items) = &sets[idx];
        let top = top_k(emb, *u, mask, k)?;
        Ok(top.iter().filter(|i| items.binary_search(i).is_ok()).count())
    });
    let mut hits = 0;
    for h in per_user {
        hits += h?;
    }
    let positives: usize = sets.iter().map(|s| s.1.len()).sum();
    let recall = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
    Ok(RecallResult { recall, hits, positives, users: sets.len() })
}
