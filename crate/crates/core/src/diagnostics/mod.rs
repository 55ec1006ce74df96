//! Deviation norms, concentration bounds, cluster statistics and Monte Carlo
//! checks of the guarantees.
//!
//! Bounds are returned as plain numbers; [`BoundReport`] pairs one with an
//! observed deviation. Cluster-level quantities live in [`stats`], repeated
//! randomized experiments in [`trials`].

use alloc::collections::BTreeMap;
use alloc::string::String;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::spectral::TruncatedEvd;

pub mod stats;
pub mod trials;

pub use stats::{block_constant, empirical_stats, mis_bound, population_stats, ClusterStats, MisBound};

/// Spectral norm (largest singular value).
///
/// Symmetric input uses its eigenvalues directly; otherwise the smaller of
/// `M^T M` and `M M^T` is diagonalized.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.is_square() && *m == m.transpose() {
        return Ok(m.clone().symmetric_eigenvalues().iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    let g = if m.nrows() >= m.ncols() { m.tr_mul(m) } else { m * m.transpose() };
    let g = (&g + g.transpose()) * 0.5;
    Ok(g.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(*v)).max(0.0).sqrt())
}

/// Right-hand side `2 L omega sigma_inf (c^{-1/2} n + sqrt(n) t)` of the
/// Lipschitz-kernel deviation bound, holding with probability at least
/// `1 - exp(-c t^2)`.
pub fn lipschitz_bound(l: f64, omega: f64, sigma_inf: f64, n: usize, t: f64, c: f64) -> f64 {
    let nf = n as f64;
    2.0 * l * omega * sigma_inf * (nf / c.sqrt() + nf.sqrt() * t)
}

/// Per-`n` bound for the Gaussian kernel under `X_i = mu_i + (sigma/sqrt d) w_i`:
/// `(4/e)(sigma/tau)(1/sqrt d)(1 + t/sqrt n)`, with probability `>= 1 - e^{-t^2}`.
pub fn gaussian_kernel_bound(sigma: f64, tau: f64, d: usize, n: usize, t: f64) -> f64 {
    4.0 / core::f64::consts::E * (sigma / tau) / (d as f64).sqrt() * (1.0 + t / (n as f64).sqrt())
}

/// Per-`n` bound for Gaussian noise with covariance `Sigma / d`:
/// `2 sqrt(2) L sqrt(|Sigma| / d)(1 + t/sqrt n)`.
pub fn anisotropic_bound(l: f64, sigma_op: f64, d: usize, n: usize, t: f64) -> f64 {
    2.0 * core::f64::consts::SQRT_2 * l * (sigma_op / d as f64).sqrt() * (1.0 + t / (n as f64).sqrt())
}

/// `kappa^2 sigma_inf^2 (n + sqrt(n d)) + kappa sigma_inf sqrt(n) |M|`, the
/// Euclidean-kernel bound without its universal constant.
pub fn euclidean_bound(kappa: f64, sigma_inf: f64, n: usize, d: usize, opnorm_m: f64) -> f64 {
    let (nf, df) = (n as f64, d as f64);
    kappa * kappa * sigma_inf * sigma_inf * (nf + (nf * df).sqrt()) + kappa * sigma_inf * nf.sqrt() * opnorm_m
}

/// An observed deviation against a bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub deviation: f64,
    pub bound: f64,
    pub t: f64,
    pub violated: bool,
    pub context: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(deviation: f64, bound: f64, t: f64) -> Self {
        Self { deviation, bound, t, violated: deviation > bound, context: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.context.insert(String::from(key), value);
        self
    }
}

/// Both sides of `|A^(R) - K*/n|_F^2 <= 8R |A - K*/n|_op^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowRankCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares the rank-`R` truncation of `a` with a block-constant target
/// `kstar` (unnormalized; divided by `n` here).
pub fn low_rank_check(a: &DMatrix<f64>, evd: &TruncatedEvd, kstar: &DMatrix<f64>) -> Result<LowRankCheck> {
    if a.shape() != kstar.shape() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: kstar.nrows() });
    }
    let n = a.nrows() as f64;
    let target = kstar / n;
    let lhs = (evd.reconstruction() - &target).norm_squared();
    let op = operator_norm(&((a - &target + (a - &target).transpose()) * 0.5))?;
    let rhs = 8.0 * evd.rank() as f64 * op * op;
    Ok(LowRankCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-10) + 1e-14 })
}
