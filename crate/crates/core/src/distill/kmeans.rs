use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::{axpy, sq_dist, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T> {
    pub assignments: Vec<u32>,
    pub centroids: Matrix<T>,
    /// Within-cluster sum of squares after each Lloyd update.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest<T: Real>(p: &[T], centroids: &Matrix<T>) -> (u32, T) {
    let mut best = (0u32, T::infinity());
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn objective<T: Real>(points: &Matrix<T>, assign: &[u32], centroids: &Matrix<T>) -> f64 {
    points
        .iter_rows()
        .zip(assign)
        .map(|(p, &c)| sq_dist(p, centroids.row(c as usize)).to_f64_lossy())
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations. Empty clusters are
/// refilled with the point farthest from its current centroid.
pub fn kmeans_cluster<T: Real, R: Rng + ?Sized>(
    points: &Matrix<T>,
    k: usize,
    rng: &mut R,
    opts: KMeansOptions,
) -> Result<KMeans<T>> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    let d = points.cols();

    let mut centroids = Matrix::zeros(k, d);
    centroids.row_mut(0).copy_from_slice(points.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, centroids.row(0)).to_f64_lossy()).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (dv, p) in dist.iter_mut().zip(points.iter_rows()) {
            *dv = dv.min(sq_dist(p, centroids.row(c)).to_f64_lossy());
        }
    }

    let mut assign = vec![0u32; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_iter.max(1) {
        iterations += 1;
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter_mut().zip(points.iter_rows()) {
            *a = nearest(p, &centroids).0;
            counts[*a as usize] += 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let (far, _) = points
                .iter_rows()
                .zip(&assign)
                .enumerate()
                .filter(|(_, (_, &a))| counts[a as usize] > 1)
                .map(|(i, (p, &a))| (i, sq_dist(p, centroids.row(a as usize))))
                .fold((usize::MAX, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
            counts[assign[far] as usize] -= 1;
            assign[far] = empty as u32;
            counts[empty] += 1;
        }
        let mut next = Matrix::zeros(k, d);
        for (p, &a) in points.iter_rows().zip(&assign) {
            axpy(next.row_mut(a as usize), T::one(), p);
        }
        for (c, &cnt) in counts.iter().enumerate() {
            let inv = T::one() / T::of(cnt as f64);
            next.row_mut(c).iter_mut().for_each(|x| *x *= inv);
        }
        let shift = next
            .iter_rows()
            .zip(centroids.iter_rows())
            .map(|(a, b)| sq_dist(a, b).to_f64_lossy().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        trace.push(objective(points, &assign, &centroids));
        if shift < opts.tol {
            break;
        }
    }
    Ok(KMeans { assignments: assign, centroids, objective: trace, iterations })
}
