//! Kernel spectral clustering.
//!
//! The pipeline is: normalize `A = K / n`, keep the `R` eigenpairs of largest
//! modulus, embed each point as a row of `U_1 Lambda_1`, then run k-means on
//! the rows. k-means is Lloyd's algorithm with k-means++ seeding and several
//! restarts; both steps depend on the rows only through distances and
//! centroids, so the result is invariant under isometries of the embedding.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::kernels::{kernel_matrix, DataMatrix, KernelSpec};
use crate::{par, rng};

/// `A = K / n`.
pub fn normalize_kernel(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch { expected: k.nrows(), got: k.ncols() });
    }
    let n = k.nrows() as f64;
    Ok(k.map(|v| v / n))
}

/// The `R` eigenpairs of largest modulus of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedEvd {
    /// Sorted by decreasing `|lambda|`.
    pub eigenvalues: DVector<f64>,
    /// `n x R`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// `eigenvectors * diag(eigenvalues)`; row `i` embeds point `i`.
    pub embedding: DMatrix<f64>,
}

impl TruncatedEvd {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `A^(R) = U_1 Lambda_1 U_1^T`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let m = &self.embedding * self.eigenvectors.transpose();
        (&m + m.transpose()) * 0.5
    }
}

fn symmetrized(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Order of eigenvalue indices by decreasing modulus; equal moduli keep the
/// more positive value first.
fn modulus_order(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (values[a], values[b]);
        y.abs()
            .partial_cmp(&x.abs())
            .unwrap_or(Ordering::Equal)
            .then(y.partial_cmp(&x).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    idx
}

/// Truncated eigendecomposition of `(A + A^T) / 2`.
pub fn truncated_evd(a: &DMatrix<f64>, r: usize) -> Result<TruncatedEvd> {
    let n = a.nrows();
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { r, n });
    }
    let eig = SymmetricEigen::new(symmetrized(a)?);
    let order = modulus_order(&eig.eigenvalues);
    let eigenvalues = DVector::from_iterator(r, order[..r].iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(n, r, |row, c| eig.eigenvectors[(row, order[c])]);
    let embedding = DMatrix::from_fn(n, r, |row, c| eigenvectors[(row, c)] * eigenvalues[c]);
    Ok(TruncatedEvd { eigenvalues, eigenvectors, embedding })
}

/// All eigenvalues of `(A + A^T) / 2`, sorted by decreasing modulus.
pub fn eigenvalues_by_modulus(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let vals = symmetrized(a)?.symmetric_eigenvalues();
    let order = modulus_order(&vals);
    Ok(DVector::from_iterator(vals.len(), order.iter().map(|&i| vals[i])))
}

/// k-means settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KmeansParams {
    pub restarts: usize,
    pub max_iters: usize,
    /// Lloyd stops once no center moves farther than this.
    pub tol: f64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self { restarts: 20, max_iters: 300, tol: 1e-10 }
    }
}

impl KmeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts", "need at least one restart"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "need at least one iteration"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Output of [`kmeans`] and [`ksc`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    /// Cluster index of each point, in `0..R`.
    pub labels: Vec<usize>,
    /// `R x p` matrix of centers in embedding space.
    pub centers: DMatrix<f64>,
    /// Sum of squared distances from each point to its nearest center.
    pub cost: f64,
    pub restarts_used: usize,
    /// Seed whose substreams drove the restarts.
    pub seed: u64,
    /// Truncated eigenpairs when the result came from [`ksc`].
    pub evd: Option<TruncatedEvd>,
}

fn row_sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, k: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..points.ncols() {
        let t = points[(i, c)] - centers[(k, c)];
        s += t * t;
    }
    s
}

/// Nearest center and squared distance; ties go to the lower index.
fn nearest(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centers.nrows() {
        let d = row_sq_dist(points, i, centers, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng + ?Sized>(points: &DMatrix<f64>, r: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, p) = points.shape();
    let mut centers = DMatrix::zeros(r, p);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| row_sq_dist(points, i, &centers, 0)).collect();
    for k in 1..r {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(k).copy_from(&points.row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(row_sq_dist(points, i, &centers, k));
        }
    }
    centers
}

/// Moves, for every empty cluster, the point farthest from its own center
/// (among clusters with more than one member) into it. Ties go to the lower
/// point index.
fn repair_empty(labels: &mut [usize], dists: &mut [f64], counts: &mut [usize]) {
    for k in 0..counts.len() {
        if counts[k] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            labels[i] = k;
            counts[k] = 1;
            dists[i] = 0.0;
        }
    }
}

fn lloyd<R: Rng + ?Sized>(points: &DMatrix<f64>, r: usize, params: &KmeansParams, rng: &mut R) -> (Vec<usize>, DMatrix<f64>, f64) {
    let (n, p) = points.shape();
    let mut centers = plus_plus_seed(points, r, rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for _ in 0..params.max_iters {
        let mut counts = vec![0usize; r];
        for i in 0..n {
            let (k, d) = nearest(points, i, &centers);
            labels[i] = k;
            dists[i] = d;
            counts[k] += 1;
        }
        repair_empty(&mut labels, &mut dists, &mut counts);
        let mut next = DMatrix::zeros(r, p);
        for i in 0..n {
            for c in 0..p {
                next[(labels[i], c)] += points[(i, c)];
            }
        }
        for k in 0..r {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for c in 0..p {
                    next[(k, c)] *= inv;
                }
            } else {
                next.row_mut(k).copy_from(&centers.row(k));
            }
        }
        let shift = (0..r).map(|k| row_sq_dist(&next, k, &centers, k)).fold(0.0, f64::max).sqrt();
        centers = next;
        if shift < params.tol {
            break;
        }
    }
    let mut cost = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (k, d) = nearest(points, i, &centers);
        *label = k;
        cost += d;
    }
    (labels, centers, cost)
}

/// Best-of-restarts k-means on the rows of `points` (`n x p`).
///
/// Restart `j` uses [`rng::substream`]`(seed, j)`; the lowest cost wins, with
/// ties going to the lower restart index.
pub fn kmeans_seeded(points: &DMatrix<f64>, r: usize, params: &KmeansParams, seed: u64) -> Result<ClusterResult> {
    params.validate()?;
    let n = points.nrows();
    if r == 0 {
        return Err(invalid("r", "need at least one cluster"));
    }
    if n < r {
        return Err(Error::TooFewPoints { n, k: r });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let runs = par::map_range(params.restarts, |j| lloyd(points, r, params, &mut rng::substream(seed, j as u64)));
    let (labels, centers, cost) = runs
        .into_iter()
        .reduce(|best, cand| if cand.2 < best.2 { cand } else { best })
        .ok_or(Error::Empty("no restarts"))?;
    Ok(ClusterResult { labels, centers, cost, restarts_used: params.restarts, seed, evd: None })
}

/// [`kmeans_seeded`] with the seed drawn from `rng`.
pub fn kmeans<R: Rng + ?Sized>(points: &DMatrix<f64>, r: usize, params: &KmeansParams, rng: &mut R) -> Result<ClusterResult> {
    kmeans_seeded(points, r, params, rng.random())
}

/// Settings for [`ksc`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KscParams {
    /// Number of clusters `R`.
    pub clusters: usize,
    pub kmeans: KmeansParams,
}

impl KscParams {
    pub fn new(clusters: usize) -> Self {
        Self { clusters, kmeans: KmeansParams::default() }
    }
}

/// Clusters from a precomputed kernel matrix.
pub fn ksc_from_kernel(k: &DMatrix<f64>, params: &KscParams, seed: u64) -> Result<ClusterResult> {
    let a = normalize_kernel(k)?;
    let evd = truncated_evd(&a, params.clusters)?;
    let mut res = kmeans_seeded(&evd.embedding, params.clusters, &params.kmeans, seed)?;
    res.evd = Some(evd);
    Ok(res)
}

/// Kernel spectral clustering of the columns of `x`.
pub fn ksc<R: Rng + ?Sized>(x: &DataMatrix, spec: &KernelSpec, params: &KscParams, rng: &mut R) -> Result<ClusterResult> {
    let k = kernel_matrix(spec, x)?;
    ksc_from_kernel(&k, params, rng.random())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::misclassification_rate;
    use crate::rng::stream;
    use rand_distr::StandardNormal;

    fn random_orthogonal(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.qr().q()
    }

    #[test]
    fn normalize_examples() {
        let k = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(normalize_kernel(&k).unwrap(), DMatrix::from_element(2, 2, 0.5));
        assert_eq!(normalize_kernel(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
        assert!(normalize_kernel(&DMatrix::zeros(2, 3)).is_err());
        let mut r = stream(1);
        let m = DMatrix::from_fn(8, 8, |_, _| r.random_range(-1.0..1.0));
        let s = &m + m.transpose();
        // n = 8 is a power of two, so scaling round-trips exactly
        assert_eq!(normalize_kernel(&s).unwrap() * 8.0, s);
    }

    #[test]
    fn evd_identity() {
        let evd = truncated_evd(&DMatrix::identity(3, 3), 2).unwrap();
        assert_eq!(evd.eigenvalues.as_slice(), &[1.0, 1.0]);
        let err = DMatrix::<f64>::identity(3, 3) - evd.reconstruction();
        let top = eigenvalues_by_modulus(&err).unwrap()[0].abs();
        assert!((top - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evd_selects_by_modulus() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0, 1.0]));
        let evd = truncated_evd(&a, 1).unwrap();
        assert_eq!(evd.eigenvalues[0], -5.0);
    }

    #[test]
    fn evd_ties_prefer_positive() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 2.0, 0.5]));
        assert_eq!(truncated_evd(&a, 1).unwrap().eigenvalues[0], 2.0);
    }

    #[test]
    fn evd_errors() {
        let a = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(truncated_evd(&a, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(truncated_evd(&a, 4), Err(Error::RankOutOfRange { .. })));
        let mut b = a.clone();
        b[(0, 1)] = f64::NAN;
        assert!(matches!(truncated_evd(&b, 1), Err(Error::NonFinite)));
    }

    #[test]
    fn evd_recovers_block_constant_rank_two() {
        let z = [0usize, 0, 1, 1, 1, 0, 1];
        let psi = [[0.9, 0.2], [0.2, 0.6]];
        let n = z.len();
        let a = DMatrix::from_fn(n, n, |i, j| psi[z[i]][z[j]] / n as f64);
        let evd = truncated_evd(&a, 2).unwrap();
        assert!((evd.reconstruction() - &a).norm() <= 1e-8);
        let gram = evd.eigenvectors.transpose() * &evd.eigenvectors;
        assert!((gram - DMatrix::identity(2, 2)).abs().max() <= 1e-8);
    }

    #[test]
    fn eigenvalue_sum_is_trace() {
        let mut r = stream(2);
        let m = DMatrix::from_fn(30, 30, |_, _| r.random_range(-1.0..1.0));
        let s = (&m + m.transpose()) * 0.5;
        let sum: f64 = eigenvalues_by_modulus(&s).unwrap().iter().sum();
        assert!((sum - s.trace()).abs() <= 1e-8 * 30.0);
    }

    #[test]
    fn kmeans_one_point_per_cluster() {
        let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 7.0]);
        let res = kmeans_seeded(&pts, 3, &KmeansParams::default(), 1).unwrap();
        assert_eq!(res.cost, 0.0);
        let mut l = res.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_errors() {
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(kmeans_seeded(&pts, 3, &KmeansParams::default(), 0), Err(Error::TooFewPoints { .. })));
        let bad = KmeansParams { restarts: 0, ..Default::default() };
        assert!(kmeans_seeded(&pts, 1, &bad, 0).is_err());
    }

    #[test]
    fn kmeans_separated_clouds() {
        let mut r = stream(3);
        let centres = [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (k, (cx, cy)) in centres.iter().enumerate() {
            for _ in 0..20 {
                rows.push(cx + r.random_range(-0.5..0.5));
                rows.push(cy + r.random_range(-0.5..0.5));
                truth.push(k);
            }
        }
        let pts = DMatrix::from_row_slice(60, 2, &rows);
        let res = kmeans_seeded(&pts, 3, &KmeansParams::default(), 4).unwrap();
        assert_eq!(misclassification_rate(&res.labels, &truth, 3).unwrap(), 0.0);
        let mut opt = 0.0;
        for k in 0..3 {
            let idx: Vec<usize> = (0..60).filter(|&i| truth[i] == k).collect();
            for c in 0..2 {
                let m: f64 = idx.iter().map(|&i| pts[(i, c)]).sum::<f64>() / idx.len() as f64;
                opt += idx.iter().map(|&i| (pts[(i, c)] - m).powi(2)).sum::<f64>();
            }
        }
        assert!((res.cost - opt).abs() <= 1e-8);
    }

    #[test]
    fn kmeans_cost_matches_labels_and_centres() {
        let mut r = stream(5);
        let pts = DMatrix::from_fn(50, 3, |_, _| r.random_range(-1.0..1.0));
        let res = kmeans_seeded(&pts, 4, &KmeansParams::default(), 6).unwrap();
        let direct: f64 = (0..50).map(|i| nearest(&pts, i, &res.centers).1).sum();
        assert!((res.cost - direct).abs() <= 1e-8);
        assert!(res.labels.iter().all(|&l| l < 4));
    }

    #[test]
    fn kmeans_brute_force_four_points() {
        let xs = [0.0, 0.1, 10.0, 10.1];
        let pts = DMatrix::from_row_slice(4, 1, &xs);
        let res = kmeans_seeded(&pts, 2, &KmeansParams::default(), 7).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0u32..16 {
            let groups: [Vec<f64>; 2] = [
                (0..4).filter(|i| mask >> i & 1 == 0).map(|i| xs[i]).collect(),
                (0..4).filter(|i| mask >> i & 1 == 1).map(|i| xs[i]).collect(),
            ];
            if groups.iter().any(|g| g.is_empty()) {
                continue;
            }
            let c: f64 = groups
                .iter()
                .map(|g| {
                    let m = g.iter().sum::<f64>() / g.len() as f64;
                    g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                })
                .sum();
            best = best.min(c);
        }
        assert!((res.cost - best).abs() < 1e-12);
        assert!((res.cost - 0.01).abs() < 1e-12);
        assert_eq!(res.labels[0], res.labels[1]);
        assert_eq!(res.labels[2], res.labels[3]);
        assert_ne!(res.labels[0], res.labels[2]);
    }

    #[test]
    fn kmeans_isometry_invariance() {
        let mut r = stream(8);
        let mut rows = Vec::new();
        for k in 0..3 {
            for _ in 0..15 {
                for c in 0..3 {
                    rows.push(if c == k { 5.0 } else { 0.0 } + r.random_range(-1.0..1.0));
                }
            }
        }
        let pts = DMatrix::from_row_slice(45, 3, &rows);
        let base = kmeans_seeded(&pts, 3, &KmeansParams::default(), 9).unwrap();
        for _ in 0..10 {
            let q = random_orthogonal(3, &mut r);
            let rotated = &pts * q;
            let res = kmeans_seeded(&rotated, 3, &KmeansParams::default(), 9).unwrap();
            assert_eq!(misclassification_rate(&res.labels, &base.labels, 3).unwrap(), 0.0);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut r = stream(10);
        let pts = DMatrix::from_fn(40, 2, |_, _| r.random_range(-1.0..1.0));
        let a = kmeans_seeded(&pts, 3, &KmeansParams::default(), 11).unwrap();
        let b = kmeans_seeded(&pts, 3, &KmeansParams::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cluster_repair() {
        let mut labels = vec![0, 0, 0, 0];
        let mut dists = vec![4.0, 1.0, 0.0, 49.0];
        let mut counts = vec![4, 0];
        repair_empty(&mut labels, &mut dists, &mut counts);
        assert_eq!(labels, vec![0, 0, 0, 1]);
        assert_eq!(counts, vec![3, 1]);
    }

    #[test]
    fn ksc_duplicated_points() {
        let x = DataMatrix::from_columns(&[vec![0.0], vec![0.0], vec![3.0], vec![3.0]]).unwrap();
        let res = ksc(&x, &KernelSpec::gaussian(1.0).unwrap(), &KscParams::new(2), &mut stream(12)).unwrap();
        assert_eq!(misclassification_rate(&res.labels, &[0, 0, 1, 1], 2).unwrap(), 0.0);
        assert!(res.cost.abs() < 1e-20);
        assert!(res.evd.is_some());
    }

    #[test]
    fn ksc_separated_blobs() {
        for seed in 0..10 {
            let mut r = stream(100 + seed);
            let mut cols = Vec::new();
            let mut truth = Vec::new();
            for i in 0..40 {
                let k = i % 2;
                let c = if k == 0 { -10.0 } else { 10.0 };
                cols.push(vec![c + 0.3 * r.sample::<f64, _>(StandardNormal), 0.3 * r.sample::<f64, _>(StandardNormal)]);
                truth.push(k);
            }
            let x = DataMatrix::from_columns(&cols).unwrap();
            let res = ksc(&x, &KernelSpec::gaussian(1.0).unwrap(), &KscParams::new(2), &mut r).unwrap();
            assert_eq!(misclassification_rate(&res.labels, &truth, 2).unwrap(), 0.0);
        }
    }

    #[test]
    fn ksc_column_permutation_relabels_points() {
        let mut r = stream(13);
        let mut cols = Vec::new();
        for i in 0..30 {
            let k = (i % 3) as f64;
            cols.push(vec![8.0 * k + r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]);
        }
        let x = DataMatrix::from_columns(&cols).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let base = ksc(&x, &spec, &KscParams::new(3), &mut stream(14)).unwrap();
        let order: Vec<usize> = (0..30).rev().collect();
        let permuted = ksc(&x.permute_columns(&order), &spec, &KscParams::new(3), &mut stream(14)).unwrap();
        let mapped: Vec<usize> = order.iter().map(|&i| base.labels[i]).collect();
        assert_eq!(misclassification_rate(&permuted.labels, &mapped, 3).unwrap(), 0.0);
    }
}
