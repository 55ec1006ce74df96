//! Randomized checks of the concentration results.
//!
//! Every experiment takes a base seed; trial `j` runs on
//! [`rng::substream`]`(seed, j)`, so results are reproducible and independent
//! of how trials are scheduled.

use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{gaussian_kernel_bound, operator_norm, BoundReport};
use crate::error::{invalid, Error, Result};
use crate::kernels::{kernel_matrix, DataMatrix, KernelSpec};
use crate::meankernel::{mean_function_matrix, McEstimate, MeanKernelFn, MeanKernelMethod, mean_kernel_matrix};
use crate::models::{sample_gaussian_model, sample_mixture, MixtureConfig, NoiseModel};
use crate::rng::{self, Stream};
use crate::par;

use super::stats::{empirical_stats_from_matrix, ClusterStats};

/// Runs `f` on substreams `0..trials` of `seed`, in parallel when possible.
/// Output is in trial order.
pub fn run_trials<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> T + Sync + Send,
{
    par::map_range(trials, |j| f(j, &mut rng::substream(seed, j as u64)))
}

/// `|K(X) - EK|_op / n` against a per-`n` bound.
pub fn concentration_trial(spec: &KernelSpec, x: &DataMatrix, mean: &DMatrix<f64>, bound: f64, t: f64) -> Result<BoundReport> {
    let k = kernel_matrix(spec, x)?;
    if k.shape() != mean.shape() {
        return Err(Error::DimensionMismatch { expected: k.nrows(), got: mean.nrows() });
    }
    let n = x.len();
    let dev = operator_norm(&(k - mean))? / n as f64;
    Ok(BoundReport::new(dev, bound, t).with("n", n as f64).with("d", x.dim() as f64))
}

/// Gaussian kernel under `X_i = mu_i + (sigma/sqrt d) w_i`, checked against
/// the `(4/e)(sigma/tau)(1/sqrt d)(1 + t/sqrt n)` bound, which holds with
/// probability at least `1 - e^{-t^2}`.
pub fn gaussian_concentration(
    mu: &DataMatrix,
    sigma: f64,
    tau: f64,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    let spec = KernelSpec::gaussian(tau)?;
    let mean = mean_kernel_matrix(&spec, &NoiseModel::Isotropic, mu, sigma, MeanKernelMethod::ClosedForm)?;
    let (n, d) = (mu.len(), mu.dim());
    let bound = gaussian_kernel_bound(sigma, tau, d, n, t);
    let sigmas = alloc::vec![sigma; n];
    run_trials(trials, seed, |j, r| {
        let x = sample_gaussian_model(mu, &sigmas, r)?;
        Ok(concentration_trial(&spec, &x, &mean, bound, t)?
            .with("sigma", sigma)
            .with("tau", tau)
            .with("trial", j as f64))
    })
    .into_iter()
    .collect()
}

/// `E phi(X)^2 = 2 L sigma / 3` for `X ~ uniform(-2 sigma, 2 sigma)` and the
/// clamp `phi`; off-diagonal means vanish by symmetry.
pub fn product_threshold_mean_diag(lipschitz: f64, sigma: f64) -> f64 {
    2.0 * lipschitz * sigma / 3.0
}

/// Lower-bound experiment: i.i.d. uniform(-2 sigma, 2 sigma) points, clamped
/// product kernel. The report's `bound` is `L sigma / 8` per `n`, and
/// `violated` marks the trials where the deviation exceeds it.
pub fn lower_bound_trials(lipschitz: f64, sigma: f64, n: usize, trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    let spec = KernelSpec::product_threshold(lipschitz, sigma)?;
    if n == 0 {
        return Err(invalid("n", "need at least one point"));
    }
    let mean = DMatrix::identity(n, n) * product_threshold_mean_diag(lipschitz, sigma);
    let bound = lipschitz * sigma / 8.0;
    run_trials(trials, seed, |j, r| {
        let pts: Vec<f64> = (0..n).map(|_| r.random_range(-2.0 * sigma..2.0 * sigma)).collect();
        let x = DataMatrix::new(DMatrix::from_vec(1, n, pts))?;
        Ok(concentration_trial(&spec, &x, &mean, bound, 0.0)?.with("trial", j as f64))
    })
    .into_iter()
    .collect()
}

/// Variance of `K(X_1, X_2)` against `8 L^2 omega^2 sigma_inf^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceReport {
    pub variance: f64,
    /// Standard error of the variance estimate.
    pub stderr: f64,
    pub bound: f64,
    /// `variance <= bound + 4 stderr`.
    pub passes: bool,
    pub samples: usize,
}

fn variance_with_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    // shift by the first value so constant input gives exactly zero
    let shift = values.first().copied().unwrap_or(0.0);
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var).max(0.0) / n).sqrt())
}

/// Monte Carlo variance of `K(mu_1 + sigma_inf w_1, mu_2 + sigma_inf w_2)`
/// for standard normal `w`, with the Gaussian-noise constant `C^2 = 8`.
pub fn variance_check<R: Rng + ?Sized>(
    spec: &KernelSpec,
    mu1: &[f64],
    mu2: &[f64],
    sigma_inf: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<VarianceReport> {
    let l = spec.lipschitz_constant().ok_or(invalid("kernel", "variance bound needs a Lipschitz kernel"))?;
    spec.eval(mu1, mu2)?;
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two draws"));
    }
    let mut x = mu1.to_vec();
    let mut y = mu2.to_vec();
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            for (o, m) in x.iter_mut().zip(mu1) {
                *o = m + sigma_inf * rng.sample::<f64, _>(StandardNormal);
            }
            for (o, m) in y.iter_mut().zip(mu2) {
                *o = m + sigma_inf * rng.sample::<f64, _>(StandardNormal);
            }
            spec.eval(&x, &y).unwrap_or(f64::NAN)
        })
        .collect();
    let (variance, stderr) = variance_with_stderr(&values);
    let bound = 8.0 * l * l * sigma_inf * sigma_inf;
    Ok(VarianceReport { variance, stderr, bound, passes: variance <= bound + 4.0 * stderr, samples: n_mc })
}

/// Monte Carlo estimate of `E |K(X) - EK|_F^2 / n^2` for
/// `X_i = mu_i + sigma_inf w_i`, against `(4/c) L^2 sigma_inf^2` with `c = 1/2`.
pub fn frobenius_check(
    spec: &KernelSpec,
    mu: &DataMatrix,
    sigma_inf: f64,
    mean: &DMatrix<f64>,
    trials: usize,
    seed: u64,
) -> Result<(McEstimate, f64)> {
    let l = spec.lipschitz_constant().ok_or(invalid("kernel", "bound needs a Lipschitz kernel"))?;
    let n = mu.len();
    let sigmas = alloc::vec![sigma_inf * (mu.dim() as f64).sqrt(); n];
    let vals: Result<Vec<f64>> = run_trials(trials, seed, |_, r| {
        let x = sample_gaussian_model(mu, &sigmas, r)?;
        let k = kernel_matrix(spec, &x)?;
        Ok((k - mean).norm_squared() / (n * n) as f64)
    })
    .into_iter()
    .collect();
    Ok((McEstimate::from_values(vals?), 8.0 * l * l * sigma_inf * sigma_inf))
}

/// `|X^T X - d I|_op` for `X` with i.i.d. standard normal entries (`d x n`).
pub fn euclidean_deviation(n: usize, d: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    let vals: Result<Vec<f64>> = run_trials(trials, seed, |_, r| {
        let x = DMatrix::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal));
        let dev = x.tr_mul(&x) - DMatrix::identity(n, n) * d as f64;
        operator_norm(&dev)
    })
    .into_iter()
    .collect();
    Ok(McEstimate::from_values(vals?))
}

/// `|K(X) - K(X')|_F` against `2 sqrt(n) L |X - X'|_F`.
pub fn perturbation_check(spec: &KernelSpec, x: &DataMatrix, x2: &DataMatrix) -> Result<(f64, f64)> {
    let l = spec.lipschitz_constant().ok_or(invalid("kernel", "bound needs a Lipschitz kernel"))?;
    if x.as_matrix().shape() != x2.as_matrix().shape() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: x2.len() });
    }
    let lhs = (kernel_matrix(spec, x)? - kernel_matrix(spec, x2)?).norm();
    let rhs = 2.0 * (x.len() as f64).sqrt() * l * (x.as_matrix() - x2.as_matrix()).norm();
    Ok((lhs, rhs))
}

/// Tail summary of the chaos `Z = sum_ij a_ij <X_i, X_j>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChaosReport {
    /// `EZ = sum_ij a_ij <mu_i, mu_j> + sigma_inf^2 d tr(A)`.
    pub mean: f64,
    /// Empirical mean of `Z - EZ`.
    pub centered_mean: f64,
    pub variance: f64,
    pub variance_stderr: f64,
    /// `(p, s)`: the empirical `P(|Z - EZ| > s)` is `p`.
    pub tail: Vec<(f64, f64)>,
    /// `d |A|_F^2`.
    pub frobenius_term: f64,
    /// `|M A^S|_F^2` with `A^S` the symmetric part.
    pub signal_term: f64,
    pub op_norm: f64,
    pub v_fit: f64,
    /// Largest `c` with `log p <= -c min(s^2/v_fit, s)` on the upper half of
    /// the tail; zero when no such positive `c` exists.
    pub c_fit: f64,
    pub samples: usize,
}

/// Monte Carlo of the quadratic chaos for `X_i = mu_i + sigma_inf w_i`.
pub fn hw_chaos_trial<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    sigma_inf: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<ChaosReport> {
    let n = a.nrows();
    if !a.is_square() || mu.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mu.ncols() });
    }
    if n_mc < 10 {
        return Err(invalid("n_mc", "need at least ten draws"));
    }
    let d = mu.nrows();
    let mean = (mu.tr_mul(mu)).component_mul(a).sum() + sigma_inf * sigma_inf * d as f64 * a.trace();
    let devs: Vec<f64> = (0..n_mc)
        .map(|_| {
            let x = DMatrix::from_fn(d, n, |r, c| mu[(r, c)] + sigma_inf * rng.sample::<f64, _>(StandardNormal));
            x.tr_mul(&x).component_mul(a).sum() - mean
        })
        .collect();
    let centered_mean = devs.iter().sum::<f64>() / n_mc as f64;
    let (variance, variance_stderr) = variance_with_stderr(&devs);
    let mut abs: Vec<f64> = devs.iter().map(|v| v.abs()).collect();
    abs.sort_by(|x, y| x.total_cmp(y));
    let levels = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99];
    let tail: Vec<(f64, f64)> = levels
        .iter()
        .map(|q| {
            let idx = ((q * n_mc as f64) as usize).min(n_mc - 1);
            let s = abs[idx];
            let p = abs.iter().filter(|&&v| v > s).count() as f64 / n_mc as f64;
            (p, s)
        })
        .collect();
    let v_fit = variance.max(f64::MIN_POSITIVE);
    let mut c_fit = f64::INFINITY;
    for &(p, s) in tail.iter().skip(tail.len() / 2) {
        if s <= 0.0 {
            continue;
        }
        let shape = (s * s / v_fit).min(s);
        let c = if p > 0.0 { -p.ln() / shape } else { f64::INFINITY };
        c_fit = c_fit.min(c);
    }
    if !c_fit.is_finite() || c_fit <= 0.0 {
        c_fit = if devs.iter().all(|v| v.abs() == 0.0) { f64::INFINITY } else { c_fit.max(0.0) };
    }
    let a_sym = (a + a.transpose()) * 0.5;
    Ok(ChaosReport {
        mean,
        centered_mean,
        variance,
        variance_stderr,
        tail,
        frobenius_term: d as f64 * a.norm_squared(),
        signal_term: (mu * &a_sym).norm_squared(),
        op_norm: operator_norm(a)?,
        v_fit,
        c_fit,
        samples: n_mc,
    })
}

/// One cell of the empirical-vs-population comparison of `Psi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiDeviation {
    pub k: usize,
    pub l: usize,
    pub deviation: f64,
    /// `3 b t / sqrt(min(n_k, n_l))`.
    pub envelope: f64,
}

/// Draws one mixture sample and compares its empirical `Psi` with a
/// population reference. `b` is the kernel's known sup when available,
/// otherwise the largest computed entry.
pub fn psi_concentration_trial<R: Rng + ?Sized>(
    f: &dyn MeanKernelFn,
    cfg: &MixtureConfig,
    population: &ClusterStats,
    t: f64,
    rng: &mut R,
) -> Result<Vec<PsiDeviation>> {
    let r = cfg.components();
    let sample = sample_mixture(cfg, rng)?;
    let m = mean_function_matrix(f, &sample.mu);
    let emp = empirical_stats_from_matrix(&m, &sample.labels, r)?;
    let max_entry = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let b = f.sup_bound().map_or(max_entry, |s| s.max(max_entry));
    let mut counts = alloc::vec![0usize; r];
    for &l in &sample.labels {
        counts[l] += 1;
    }
    let mut out = Vec::with_capacity(r * r);
    for k in 0..r {
        for l in 0..r {
            let nmin = counts[k].min(counts[l]) as f64;
            out.push(PsiDeviation {
                k,
                l,
                deviation: (emp.psi[(k, l)] - population.psi[(k, l)]).abs(),
                envelope: 3.0 * b * t / nmin.sqrt(),
            });
        }
    }
    Ok(out)
}
