//! User–item bipartite adjacency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Side::User => 0,
            Side::Item => 1,
        }
    }
}

/// Adjacency lists for both sides, each sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    user_adj: Vec<Vec<u32>>,
    item_adj: Vec<Vec<u32>>,
    n_edges: usize,
}

impl BipartiteGraph {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self { user_adj: vec![Vec::new(); n_users], item_adj: vec![Vec::new(); n_items], n_edges: 0 }
    }

    /// Graph over the edges of `records`, unioned with `base` when given. The
    /// node universe is the larger of the requested size and `base`'s.
    pub fn build(
        records: &[Interaction],
        n_users: usize,
        n_items: usize,
        base: Option<&BipartiteGraph>,
    ) -> Result<Self> {
        let nu = n_users.max(base.map_or(0, |b| b.n_users()));
        let ni = n_items.max(base.map_or(0, |b| b.n_items()));
        let mut user_adj = vec![Vec::new(); nu];
        let mut item_adj = vec![Vec::new(); ni];
        if let Some(b) = base {
            user_adj[..b.n_users()].clone_from_slice(&b.user_adj);
            item_adj[..b.n_items()].clone_from_slice(&b.item_adj);
        }
        for r in records {
            if r.user as usize >= n_users {
                return Err(Error::IdOutOfRange { side: "user", id: r.user, n: n_users });
            }
            if r.item as usize >= n_items {
                return Err(Error::IdOutOfRange { side: "item", id: r.item, n: n_items });
            }
            user_adj[r.user as usize].push(r.item);
            item_adj[r.item as usize].push(r.user);
        }
        for list in user_adj.iter_mut().chain(item_adj.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let n_edges = user_adj.iter().map(Vec::len).sum();
        Ok(Self { user_adj, item_adj, n_edges })
    }

    pub fn n_users(&self) -> usize {
        self.user_adj.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_adj.len()
    }

    pub fn n_nodes(&self, side: Side) -> usize {
        match side {
            Side::User => self.n_users(),
            Side::Item => self.n_items(),
        }
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Cross-side neighbors of `node`; empty for ids outside the universe.
    pub fn neighbors(&self, side: Side, node: u32) -> &[u32] {
        let adj = match side {
            Side::User => &self.user_adj,
            Side::Item => &self.item_adj,
        };
        adj.get(node as usize).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, side: Side, node: u32) -> usize {
        self.neighbors(side, node).len()
    }

    pub fn degrees(&self, side: Side) -> Vec<usize> {
        (0..self.n_nodes(side) as u32).map(|n| self.degree(side, n)).collect()
    }

    pub fn has_edge(&self, user: u32, item: u32) -> bool {
        self.neighbors(Side::User, user).binary_search(&item).is_ok()
    }

    /// `n` neighbors drawn uniformly with replacement.
    pub fn sample_neighbors<R: Rng + ?Sized>(&self, side: Side, node: u32, n: usize, rng: &mut R) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(n);
        self.sample_neighbors_into(side, node, n, rng, &mut out)?;
        Ok(out)
    }

    pub fn sample_neighbors_into<R: Rng + ?Sized>(
        &self,
        side: Side,
        node: u32,
        n: usize,
        rng: &mut R,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        let adj = self.neighbors(side, node);
        if adj.is_empty() {
            return Err(Error::IsolatedNode { side: side.name(), id: node });
        }
        out.extend((0..n).map(|_| adj[rng.random_range(0..adj.len())]));
        Ok(())
    }
}
