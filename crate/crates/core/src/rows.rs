//! Sparse sets of embedding rows keyed by node id.

use std::collections::HashMap;

use crate::graph::Side;
use crate::matrix::Matrix;
use crate::real::Real;

/// Rows of width `dim` for an arbitrary subset of node ids, kept in
/// insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet<T> {
    dim: usize,
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
    data: Vec<T>,
}

impl<T: Real> RowSet<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), index: HashMap::new(), data: Vec::new() }
    }

    /// Rows `m[k]` keyed by `ids[k]`. Duplicate ids keep the first row.
    pub fn from_matrix(ids: &[u32], m: &Matrix<T>) -> Self {
        assert_eq!(ids.len(), m.rows());
        let mut set = Self::new(m.cols());
        for (k, &id) in ids.iter().enumerate() {
            set.insert(id, m.row(k));
        }
        set
    }

    /// All rows of a dense table, keyed by row index.
    pub fn from_table(m: &Matrix<T>) -> Self {
        let ids: Vec<u32> = (0..m.rows() as u32).collect();
        Self::from_matrix(&ids, m)
    }

    pub fn zeros_like(other: &RowSet<T>) -> Self {
        Self {
            dim: other.dim,
            ids: other.ids.clone(),
            index: other.index.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn insert(&mut self, id: u32, row: &[T]) {
        assert_eq!(row.len(), self.dim);
        if self.index.contains_key(&id) {
            return;
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
    }

    pub fn get(&self, id: u32) -> Option<&[T]> {
        self.index.get(&id).map(|&k| &self.data[k * self.dim..(k + 1) * self.dim])
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut [T]> {
        let dim = self.dim;
        let k = *self.index.get(&id)?;
        Some(&mut self.data[k * dim..(k + 1) * dim])
    }

    /// Mutable row for `id`, inserting zeros if absent.
    pub fn entry(&mut self, id: u32) -> &mut [T] {
        let k = match self.index.get(&id) {
            Some(&k) => k,
            None => {
                let k = self.ids.len();
                self.index.insert(id, k);
                self.ids.push(id);
                self.data.extend(std::iter::repeat_n(T::zero(), self.dim));
                k
            }
        };
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[T])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (u32, &mut [T])> {
        self.ids.iter().copied().zip(self.data.chunks_exact_mut(self.dim.max(1)))
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A row set per side of the bipartite graph. Used both for student
/// embeddings of a batch and for gradients with respect to them.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRows<T> {
    pub users: RowSet<T>,
    pub items: RowSet<T>,
}

impl<T: Real> NodeRows<T> {
    pub fn new(dim: usize) -> Self {
        Self { users: RowSet::new(dim), items: RowSet::new(dim) }
    }

    pub fn zeros_like(other: &NodeRows<T>) -> Self {
        Self { users: RowSet::zeros_like(&other.users), items: RowSet::zeros_like(&other.items) }
    }

    pub fn side(&self, side: Side) -> &RowSet<T> {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut RowSet<T> {
        match side {
            Side::User => &mut self.users,
            Side::Item => &mut self.items,
        }
    }

    pub fn get(&self, side: Side, id: u32) -> Option<&[T]> {
        self.side(side).get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_inserts_zero_rows_once() {
        let mut s = RowSet::<f64>::new(2);
        s.entry(5)[0] = 1.0;
        s.entry(5)[1] = 2.0;
        s.entry(1);
        assert_eq!(s.ids(), &[5, 1]);
        assert_eq!(s.get(5), Some(&[1.0, 2.0][..]));
        assert_eq!(s.get(1), Some(&[0.0, 0.0][..]));
        assert!(s.get(7).is_none());
    }
}
