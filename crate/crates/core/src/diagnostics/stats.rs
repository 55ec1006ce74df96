//! Cluster-level summaries of the mean kernel and the misclassification bound.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{invalid, Error, Result};
use crate::kernels::DataMatrix;
use crate::meankernel::{mean_function_matrix, MeanKernelFn, PairGeometry};
use crate::models::MixtureConfig;

/// Means `Psi`, variances `v2` and separations of the mean kernel between
/// clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterStats {
    pub psi: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    /// `D_kl = sum_r pi_r (Psi_kr - Psi_lr)^2`.
    pub d: DMatrix<f64>,
    /// `min_{k != l} D_kl`.
    pub gamma2: f64,
    /// `min_{k != l} pi_l D_kl`.
    pub gamma2_tilde: f64,
    /// `sum_{k,l} pi_k pi_l v2_kl`.
    pub vbar2: f64,
    pub pi: Vec<f64>,
}

impl ClusterStats {
    /// Derives `D`, `gamma^2`, `gamma~^2` and `vbar^2` from `Psi`, `v2`, `pi`.
    pub fn from_moments(psi: DMatrix<f64>, v2: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let r = pi.len();
        if psi.shape() != (r, r) || v2.shape() != (r, r) {
            return Err(Error::DimensionMismatch { expected: r, got: psi.nrows() });
        }
        let d = DMatrix::from_fn(r, r, |k, l| {
            if k == l {
                0.0
            } else {
                (0..r).map(|q| pi[q] * (psi[(k, q)] - psi[(l, q)]).powi(2)).sum()
            }
        });
        let (mut gamma2, mut gamma2_tilde) = (f64::INFINITY, f64::INFINITY);
        for k in 0..r {
            for l in 0..r {
                if k != l {
                    gamma2 = gamma2.min(d[(k, l)]);
                    gamma2_tilde = gamma2_tilde.min(pi[l] * d[(k, l)]);
                }
            }
        }
        let vbar2 = (0..r).flat_map(|k| (0..r).map(move |l| (k, l))).map(|(k, l)| pi[k] * pi[l] * v2[(k, l)]).sum();
        Ok(Self { psi, v2, d, gamma2, gamma2_tilde, vbar2, pi })
    }

    pub fn clusters(&self) -> usize {
        self.pi.len()
    }
}

fn members(labels: &[usize], r: usize) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![Vec::new(); r];
    for (i, &l) in labels.iter().enumerate() {
        if l >= r {
            return Err(Error::LabelOutOfRange { label: l, r });
        }
        m[l].push(i);
    }
    if let Some(k) = m.iter().position(Vec::is_empty) {
        return Err(Error::EmptyCluster(k));
    }
    Ok(m)
}

/// Cluster statistics of a precomputed mean-function matrix
/// `M_ij = K~(mu_i, mu_j)` over all pairs, diagonal included.
pub fn empirical_stats_from_matrix(m: &DMatrix<f64>, labels: &[usize], r: usize) -> Result<ClusterStats> {
    if m.shape() != (labels.len(), labels.len()) {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: m.nrows() });
    }
    let groups = members(labels, r)?;
    let mut psi = DMatrix::zeros(r, r);
    let mut v2 = DMatrix::zeros(r, r);
    for k in 0..r {
        for l in k..r {
            let count = (groups[k].len() * groups[l].len()) as f64;
            let mut mean = 0.0;
            for &i in &groups[k] {
                for &j in &groups[l] {
                    mean += m[(i, j)];
                }
            }
            mean /= count;
            let mut var = 0.0;
            for &i in &groups[k] {
                for &j in &groups[l] {
                    var += (m[(i, j)] - mean).powi(2);
                }
            }
            var /= count;
            psi[(k, l)] = mean;
            psi[(l, k)] = mean;
            v2[(k, l)] = var;
            v2[(l, k)] = var;
        }
    }
    let n = labels.len() as f64;
    let pi = groups.iter().map(|g| g.len() as f64 / n).collect();
    ClusterStats::from_moments(psi, v2, pi)
}

/// Empirical cluster statistics of the mean kernel on latent signals.
pub fn empirical_stats(f: &dyn MeanKernelFn, mu: &DataMatrix, labels: &[usize], r: usize) -> Result<ClusterStats> {
    if labels.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: labels.len() });
    }
    members(labels, r)?;
    empirical_stats_from_matrix(&mean_function_matrix(f, mu), labels, r)
}

/// Draws the cosine between two independent uniform directions in `R^d`:
/// `2U - 1` with `U ~ Beta((d-1)/2, (d-1)/2)`, or `+-1` when `d = 1`.
fn sample_cosine<R: Rng + ?Sized>(beta: Option<&Beta<f64>>, rng: &mut R) -> f64 {
    match beta {
        Some(b) => 2.0 * b.sample(rng) - 1.0,
        None => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Monte Carlo population statistics `Psi*`, `(v*)^2` for the nested-spheres
/// model, with the priors as `pi`.
///
/// Each cell uses `n_mc` independent signal pairs. Since the mean kernels in
/// this crate are rotation invariant, a pair is fully described by the two
/// radii and the cosine between the directions, which is drawn exactly.
pub fn population_stats<R: Rng + ?Sized>(
    f: &dyn MeanKernelFn,
    cfg: &MixtureConfig,
    n_mc: usize,
    rng: &mut R,
) -> Result<ClusterStats> {
    cfg.validate()?;
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two draws per cell"));
    }
    let r = cfg.components();
    let beta = if cfg.d > 1 {
        let a = (cfg.d as f64 - 1.0) / 2.0;
        Some(Beta::new(a, a).map_err(|_| invalid("d", "invalid Beta parameters"))?)
    } else {
        None
    };
    let mut psi = DMatrix::zeros(r, r);
    let mut v2 = DMatrix::zeros(r, r);
    for k in 0..r {
        for l in k..r {
            let (rk, rl) = (cfg.radii[k], cfg.radii[l]);
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for s in 0..n_mc {
                let alpha = sample_cosine(beta.as_ref(), rng);
                let g = PairGeometry { norm_u: rk, norm_v: rl, sq_dist: (rk * rk + rl * rl - 2.0 * rk * rl * alpha).max(0.0) };
                let v = f.pair(&g);
                let delta = v - mean;
                mean += delta / (s + 1) as f64;
                m2 += delta * (v - mean);
            }
            psi[(k, l)] = mean;
            psi[(l, k)] = mean;
            v2[(k, l)] = m2 / n_mc as f64;
            v2[(l, k)] = m2 / n_mc as f64;
        }
    }
    ClusterStats::from_moments(psi, v2, cfg.priors.clone())
}

/// Population statistics for arbitrary signal samplers: `draw(k, rng)`
/// returns a signal from component `k`.
pub fn population_stats_with<R, G>(
    f: &dyn MeanKernelFn,
    priors: &[f64],
    mut draw: G,
    n_mc: usize,
    rng: &mut R,
) -> Result<ClusterStats>
where
    R: Rng + ?Sized,
    G: FnMut(usize, &mut R) -> Vec<f64>,
{
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two draws per cell"));
    }
    let r = priors.len();
    let mut psi = DMatrix::zeros(r, r);
    let mut v2 = DMatrix::zeros(r, r);
    for k in 0..r {
        for l in k..r {
            let vals: Vec<f64> = (0..n_mc)
                .map(|_| {
                    let u = draw(k, rng);
                    let v = draw(l, rng);
                    f.pair(&PairGeometry::new(&u, &v))
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n_mc as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_mc as f64;
            psi[(k, l)] = mean;
            psi[(l, k)] = mean;
            v2[(k, l)] = var;
            v2[(l, k)] = var;
        }
    }
    ClusterStats::from_moments(psi, v2, priors.to_vec())
}

/// Block-constant matrix `Z Psi Z^T`.
pub fn block_constant(psi: &DMatrix<f64>, labels: &[usize]) -> Result<DMatrix<f64>> {
    let r = psi.nrows();
    if !psi.is_square() {
        return Err(Error::DimensionMismatch { expected: r, got: psi.ncols() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= r) {
        return Err(Error::LabelOutOfRange { label, r });
    }
    let n = labels.len();
    Ok(DMatrix::from_fn(n, n, |i, j| psi[(labels[i], labels[j])]))
}

/// Membership matrix `Z` (`n x R`, one 1 per row).
pub fn membership_matrix(labels: &[usize], r: usize) -> Result<DMatrix<f64>> {
    if let Some(&label) = labels.iter().find(|&&l| l >= r) {
        return Err(Error::LabelOutOfRange { label, r });
    }
    Ok(DMatrix::from_fn(labels.len(), r, |i, k| if labels[i] == k { 1.0 } else { 0.0 }))
}

/// The misclassification guarantee evaluated for one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MisBound {
    /// `F(gamma^2, vbar^2)`.
    pub f: f64,
    /// `F(gamma~^2, vbar^2)`, used by the validity condition.
    pub f_tilde: f64,
    /// `C_1 = 4 (1 + kappa)^2`.
    pub c1: f64,
    /// `C_1 F`, the bound on the misclassification rate.
    pub bound: f64,
    /// `F(gamma~^2, vbar^2) <= 1 / C_1`.
    pub valid: bool,
}

/// `F(g, vbar^2) = (16R/g) [ (4 L^2 sigma^2 / d)(1 + t/sqrt n)^2 max|Sigma| + vbar^2 ]`.
///
/// With `gamma^2 = 0` the bound is undefined: `F` is infinite and `valid`
/// is false.
#[allow(clippy::too_many_arguments)]
pub fn mis_bound(
    stats: &ClusterStats,
    lipschitz: f64,
    sigma: f64,
    d: usize,
    n: usize,
    t: f64,
    max_op_sigma: f64,
    kappa: f64,
) -> MisBound {
    let r = stats.clusters() as f64;
    let noise = 4.0 * lipschitz * lipschitz * sigma * sigma / d as f64 * (1.0 + t / (n as f64).sqrt()).powi(2) * max_op_sigma;
    let bracket = noise + stats.vbar2;
    let eval = |g: f64| if g > 0.0 { 16.0 * r / g * bracket } else { f64::INFINITY };
    let f = eval(stats.gamma2);
    let f_tilde = eval(stats.gamma2_tilde);
    let c1 = 4.0 * (1.0 + kappa).powi(2);
    MisBound { f, f_tilde, c1, bound: c1 * f, valid: f_tilde.is_finite() && f_tilde <= 1.0 / c1 }
}
