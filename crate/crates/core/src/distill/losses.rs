use rand::Rng;

use super::snapshot::{Anchors, TeacherSnapshot};
use super::NodeBatch;
use crate::error::{Error, Result};
use crate::graph::Side;
use crate::matrix::Matrix;
use crate::real::{axpy, dot, log_softmax_into, softmax_into, Real};
use crate::rows::NodeRows;

const SIDES: [Side; 2] = [Side::User, Side::Item];

fn student_row<T: Real>(student: &NodeRows<T>, side: Side, id: u32) -> Result<&[T]> {
    student
        .get(side, id)
        .ok_or_else(|| Error::ShapeMismatch(format!("no student embedding for {} {id}", side.name())))
}

/// Softmax over `emb · anchor_k / tau`.
pub fn anchor_distribution<T: Real>(emb: &[T], anchors: &Matrix<T>, tau: T) -> Vec<T> {
    let logits: Vec<T> = anchors.iter_rows().map(|a| dot(emb, a) / tau).collect();
    let mut p = vec![T::zero(); logits.len()];
    softmax_into(&logits, &mut p);
    p
}

/// `Σ p log(p / q)` with the convention `0 log 0 = 0`.
pub fn kl_divergence<T: Real>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > T::zero())
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<T>()
        .max(T::zero())
}

/// KL(softmax(z_s) ‖ softmax(z_t)) and its gradient with respect to `z_s`.
fn kl_logits<T: Real>(student_logits: &[T], teacher_logits: &[T], dlogits: &mut [T]) -> T {
    let k = student_logits.len();
    let mut lp = vec![T::zero(); k];
    let mut lq = vec![T::zero(); k];
    log_softmax_into(student_logits, &mut lp);
    log_softmax_into(teacher_logits, &mut lq);
    let kl: T = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
    for ((g, &a), &b) in dlogits.iter_mut().zip(&lp).zip(&lq) {
        *g = a.exp() * (a - b - kl);
    }
    // Rounding can leave a tiny negative value for identical distributions.
    kl.max(T::zero())
}

fn weighted_self_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
    factor: impl Fn(Side, u32) -> T,
) -> Result<T> {
    let mut loss = T::zero();
    let two = T::of(2.0);
    for side in SIDES {
        let ids = batch.side(side);
        if ids.is_empty() {
            continue;
        }
        let inv = T::one() / T::of(ids.len() as f64);
        for &id in ids {
            if !teacher.covers(side, id) {
                continue;
            }
            let f = factor(side, id);
            if f == T::zero() {
                continue;
            }
            let s = student_row(student, side, id)?;
            let t = teacher.teacher_row(side, id);
            let g = grads.side_mut(side).entry(id);
            for ((gv, &sv), &tv) in g.iter_mut().zip(s).zip(t) {
                let diff = sv - tv;
                loss += inv * f * diff * diff;
                *gv += weight * two * inv * f * diff;
            }
        }
    }
    Ok(loss)
}

/// Degree-weighted squared distance between student and teacher embeddings:
/// `(1/|U_b|) Σ_u (η_u/‖η_U‖) ‖emb_u^{t−1} − emb_u^t‖²` plus the item analogue.
pub fn self_distill_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
) -> Result<T> {
    weighted_self_loss(student, teacher, batch, grads, weight, |side, id| {
        teacher.eta(side, id) / teacher.eta_norm(side)
    })
}

/// Unweighted variant of [`self_distill_loss`].
pub fn embd_baseline_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
) -> Result<T> {
    weighted_self_loss(student, teacher, batch, grads, weight, |_, _| T::one())
}

/// Squared change of the dot product between a node and the mean of its
/// previous-block neighborhood. The student centroid averages the *student*
/// embeddings of the same `N^{t−1}`, so `student` must hold those rows.
pub fn local_distill_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
) -> Result<T> {
    let mut loss = T::zero();
    let two = T::of(2.0);
    for side in SIDES {
        let ids = batch.side(side);
        if ids.is_empty() {
            continue;
        }
        let inv = T::one() / T::of(ids.len() as f64);
        for &id in ids {
            if !teacher.covers(side, id) {
                continue;
            }
            let Some(target) = teacher.local_target(side, id) else { continue };
            let nbrs = teacher.prev_neighbors(side, id);
            let s = student_row(student, side, id)?;
            let mut centroid = vec![T::zero(); s.len()];
            for &nb in nbrs {
                axpy(&mut centroid, T::one(), student_row(student, side.other(), nb)?);
            }
            let inv_n = T::one() / T::of(nbrs.len() as f64);
            centroid.iter_mut().for_each(|c| *c *= inv_n);
            let r = target - dot(s, &centroid);
            loss += inv * r * r;
            // ∂/∂s = −2 r c ; ∂/∂neighbor = −2 r s / |N|
            let coef = -(weight * two * inv * r);
            axpy(grads.side_mut(side).entry(id), coef, &centroid);
            let s = s.to_vec();
            let other = grads.side_mut(side.other());
            for &nb in nbrs {
                axpy(other.entry(nb), coef * inv_n, &s);
            }
        }
    }
    Ok(loss)
}

/// Per node, `KL(student ‖ teacher)` of the softmax over anchor affinities,
/// against both the user and the item anchors. Student anchors are treated as
/// constants.
pub fn global_distill_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    student_anchors: &Anchors<T>,
    tau: T,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
) -> Result<T> {
    let k = teacher.k();
    if student_anchors.users.rows() != k || student_anchors.items.rows() != k {
        return Err(Error::SnapshotMismatch(format!("student anchors do not have k = {k} rows")));
    }
    let mut loss = T::zero();
    let mut zs = vec![T::zero(); k];
    let mut zt = vec![T::zero(); k];
    let mut dz = vec![T::zero(); k];
    for side in SIDES {
        let ids = batch.side(side);
        if ids.is_empty() {
            continue;
        }
        let inv = T::one() / T::of(ids.len() as f64);
        for &id in ids {
            if !teacher.covers(side, id) {
                continue;
            }
            let s = student_row(student, side, id)?;
            let t = teacher.teacher_row(side, id);
            let mut ds = vec![T::zero(); s.len()];
            for anchor_side in SIDES {
                let a_s = student_anchors.side(anchor_side);
                let a_t = teacher.anchors().side(anchor_side);
                for c in 0..k {
                    zs[c] = dot(s, a_s.row(c)) / tau;
                    zt[c] = dot(t, a_t.row(c)) / tau;
                }
                loss += inv * kl_logits(&zs, &zt, &mut dz);
                for (c, &g) in dz.iter().enumerate() {
                    axpy(&mut ds, g / tau, a_s.row(c));
                }
            }
            axpy(grads.side_mut(side).entry(id), weight * inv, &ds);
        }
    }
    Ok(loss)
}

/// Neighbors sampled from `N^{t−1}` for the LSP baseline, shared by the
/// teacher and student distributions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LspSamples {
    pub users: Vec<(u32, Vec<u32>)>,
    pub items: Vec<(u32, Vec<u32>)>,
}

impl LspSamples {
    /// Draws `n` neighbors with replacement for every covered batch node
    /// with at least one previous-block neighbor.
    pub fn draw<T: Real, R: Rng + ?Sized>(teacher: &TeacherSnapshot<T>, batch: &NodeBatch, n: usize, rng: &mut R) -> Self {
        let mut out = Self::default();
        for side in SIDES {
            let list = match side {
                Side::User => &mut out.users,
                Side::Item => &mut out.items,
            };
            for &id in batch.side(side) {
                if !teacher.covers(side, id) || teacher.prev_degree(side, id) == 0 {
                    continue;
                }
                let nbrs = teacher.prev_neighbors(side, id);
                list.push((id, (0..n).map(|_| nbrs[rng.random_range(0..nbrs.len())]).collect()));
            }
        }
        out
    }

    pub fn side(&self, side: Side) -> &[(u32, Vec<u32>)] {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    /// Every sampled neighbor id of the cross side for nodes on `side`.
    pub fn neighbor_ids(&self, side: Side) -> impl Iterator<Item = u32> + '_ {
        self.side(side).iter().flat_map(|(_, v)| v.iter().copied())
    }
}

/// Sampled local-structure preservation: KL between the student and teacher
/// softmax distributions over dot-product similarities to sampled neighbors.
pub fn lsp_baseline_loss<T: Real>(
    student: &NodeRows<T>,
    teacher: &TeacherSnapshot<T>,
    samples: &LspSamples,
    tau: T,
    batch: &NodeBatch,
    grads: &mut NodeRows<T>,
    weight: T,
) -> Result<T> {
    let mut loss = T::zero();
    for side in SIDES {
        let n_batch = batch.side(side).len();
        if n_batch == 0 {
            continue;
        }
        let inv = T::one() / T::of(n_batch as f64);
        for (id, nbrs) in samples.side(side) {
            let s = student_row(student, side, *id)?;
            let t = teacher.teacher_row(side, *id);
            let m = nbrs.len();
            let mut zs = vec![T::zero(); m];
            let mut zt = vec![T::zero(); m];
            let mut dz = vec![T::zero(); m];
            let mut srows = Vec::with_capacity(m);
            for (j, &nb) in nbrs.iter().enumerate() {
                let sn = student_row(student, side.other(), nb)?;
                zs[j] = dot(s, sn) / tau;
                zt[j] = dot(t, teacher.teacher_row(side.other(), nb)) / tau;
                srows.push(sn);
            }
            loss += inv * kl_logits(&zs, &zt, &mut dz);
            let mut ds = vec![T::zero(); s.len()];
            for (j, sn) in srows.iter().enumerate() {
                axpy(&mut ds, dz[j] / tau, sn);
            }
            let s = s.to_vec();
            axpy(grads.side_mut(side).entry(*id), weight * inv, &ds);
            let other = grads.side_mut(side.other());
            for (j, &nb) in nbrs.iter().enumerate() {
                axpy(other.entry(nb), weight * inv * dz[j] / tau, &s);
            }
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use crate::graph::BipartiteGraph;
    use crate::model::FinalEmbeddings;
    use crate::rng::{stream, Stream};
    use crate::rows::RowSet;

    fn graph(pairs: &[(u32, u32)], nu: usize, ni: usize) -> BipartiteGraph {
        let recs: Vec<_> = pairs.iter().map(|&(user, item)| Interaction { user, item, time: 0 }).collect();
        BipartiteGraph::build(&recs, nu, ni, None).unwrap()
    }

    fn snapshot(users: Vec<Vec<f64>>, items: Vec<Vec<f64>>, pairs: &[(u32, u32)]) -> TeacherSnapshot<f64> {
        let (nu, ni) = (users.len(), items.len());
        let g = graph(pairs, nu, ni);
        let emb = FinalEmbeddings { users: Matrix::from_rows(&users), items: Matrix::from_rows(&items), block: 0, epoch: 0 };
        TeacherSnapshot::from_parts(emb, g.clone(), &g, vec![0; nu], vec![0; ni], 1).unwrap()
    }

    fn rows(users: &[(u32, Vec<f64>)], items: &[(u32, Vec<f64>)]) -> NodeRows<f64> {
        let mut r = NodeRows::new(users.first().or(items.first()).map_or(1, |x| x.1.len()));
        for (id, v) in users {
            r.users.insert(*id, v);
        }
        for (id, v) in items {
            r.items.insert(*id, v);
        }
        r
    }

    #[test]
    fn anchor_distribution_examples() {
        let anchors = Matrix::from_rows(&[vec![1.0f64, 0.0], vec![0.0, 1.0]]);
        let p = anchor_distribution(&[1.0, 0.0], &anchors, 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let p = anchor_distribution(&[1.0, 1.0], &anchors, 0.3);
        assert!((p[0] - 0.5).abs() < 1e-15);
        let p = anchor_distribution(&[5.0, -3.0], &anchors, 1e6);
        assert!(p.iter().all(|x| (x - 0.5).abs() < 1e-5));
    }

    #[test]
    fn kl_hand_value() {
        let p = [0.7311f64, 0.2689];
        let q = [0.5, 0.5];
        let expected = 0.7311 * (1.4622f64).ln() + 0.2689 * (0.5378f64).ln();
        assert!((kl_divergence(&p, &q) - expected).abs() < 1e-12);
        assert!((expected - 0.1114).abs() < 5e-4);
    }

    #[test]
    fn self_loss_hand_value() {
        let snap = snapshot(vec![vec![1.0, 0.0]], vec![vec![0.0, 0.0]], &[(0, 0)]);
        // eta = 1/1 and the norm over one user is 1.
        let student = rows(&[(0, vec![0.0, 1.0])], &[]);
        let batch = NodeBatch::new([0], []);
        let mut g = NodeRows::zeros_like(&student);
        let l = self_distill_loss(&student, &snap, &batch, &mut g, 1.0).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g.users.get(0).unwrap(), &[-2.0, 2.0]);
    }

    #[test]
    fn embd_hand_value() {
        let snap = snapshot(vec![vec![3.0, 4.0]], vec![vec![0.0, 0.0]], &[(0, 0)]);
        let student = rows(&[(0, vec![0.0, 0.0])], &[]);
        let mut g = NodeRows::zeros_like(&student);
        let l = embd_baseline_loss(&student, &snap, &NodeBatch::new([0], []), &mut g, 1.0).unwrap();
        assert_eq!(l, 25.0);
    }

    #[test]
    fn local_hand_value() {
        // Teacher: u=[1,0], items {[1,0],[0,1]} -> dot with mean = 0.5.
        // Student: u=[1,0], items {[1,0],[1,0]} -> 1.0. Term (0.5-1)^2.
        let snap = snapshot(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[(0, 0), (0, 1)]);
        let student = rows(&[(0, vec![1.0, 0.0])], &[(0, vec![1.0, 0.0]), (1, vec![1.0, 0.0])]);
        let mut g = NodeRows::zeros_like(&student);
        let l = local_distill_loss(&student, &snap, &NodeBatch::new([0], []), &mut g, 1.0).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uncovered_nodes_contribute_nothing() {
        let snap = snapshot(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]], &[(0, 0)]);
        let student = rows(&[(0, vec![1.0, 0.0]), (5, vec![9.0, 9.0])], &[(0, vec![1.0, 0.0]), (3, vec![-4.0, 2.0])]);
        let batch = NodeBatch::new([0, 5], [0, 3]);
        let mut g = NodeRows::zeros_like(&student);
        let anchors = snap.anchors().clone();
        let total = self_distill_loss(&student, &snap, &batch, &mut g, 1.0).unwrap()
            + embd_baseline_loss(&student, &snap, &batch, &mut g, 1.0).unwrap()
            + local_distill_loss(&student, &snap, &batch, &mut g, 1.0).unwrap()
            + global_distill_loss(&student, &snap, &anchors, 0.1, &batch, &mut g, 1.0).unwrap();
        let samples = LspSamples::draw(&snap, &batch, 4, &mut stream(0, Stream::Lsp, 0));
        assert!(samples.users.iter().all(|(id, _)| *id == 0));
        let lsp = lsp_baseline_loss(&student, &snap, &samples, 0.5, &batch, &mut g, 1.0).unwrap();
        assert_eq!(total + lsp, 0.0);
        assert!(g.users.get(5).is_none_or(|r| r.iter().all(|&x| x == 0.0)));
        assert!(g.items.get(3).is_none_or(|r| r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn missing_student_row_is_an_error() {
        let snap = snapshot(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]], &[(0, 0)]);
        let student = NodeRows { users: RowSet::new(2), items: RowSet::new(2) };
        let mut g = NodeRows::new(2);
        assert!(self_distill_loss(&student, &snap, &NodeBatch::new([0], []), &mut g, 1.0).is_err());
    }
}
