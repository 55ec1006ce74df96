//! Closed-form mean kernels against their Monte Carlo oracle.

use std::path::Path;

use ksc_core::kernels::{dot, norm, KernelSpec};
use ksc_core::meankernel::{kt_1d, mc_mean_kernel, mean_gauss_isotropic, mean_gauss_radial_or_mc, McEstimate, MeanKernelParams};
use ksc_core::models::{sample_unit_sphere, NoiseModel};
use ksc_core::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanCheckConfig {
    pub pairs: usize,
    pub samples: usize,
    pub d: usize,
    pub sigma: f64,
    pub tau: f64,
    /// Random `(m, t)` points for the one-dimensional formula.
    pub kt_points: usize,
    pub base_seed: u64,
    /// Agreement tolerance in standard errors.
    pub z: f64,
}

impl Default for MeanCheckConfig {
    fn default() -> Self {
        Self { pairs: 20, samples: 100_000, d: 10, sigma: 1.5, tau: 2.0, kt_points: 10, base_seed: 2024, z: 4.0 }
    }
}

impl MeanCheckConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.pairs == 0 || self.d < 2 {
            return Err(CliError::Config("pairs must be positive and d at least 2".into()));
        }
        if self.samples < 1000 {
            return Err(CliError::Config("samples must be at least 1000".into()));
        }
        if !(self.tau > 0.0) || !(self.sigma >= 0.0) || !(self.z > 0.0) {
            return Err(CliError::Config("tau and z must be positive, sigma nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub formula: String,
    pub index: usize,
    pub norm_u: f64,
    pub norm_v: f64,
    pub cos_angle: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub stderr: f64,
    pub z_score: f64,
    pub agrees: bool,
    /// The closed form does not apply; its value came from Monte Carlo.
    pub fallback: bool,
}

impl CheckRow {
    /// Rows that count against the check.
    pub fn failed(&self) -> bool {
        !self.agrees && !self.fallback
    }
}

fn agrees(closed: f64, est: &McEstimate, z: f64) -> (f64, bool) {
    let diff = (closed - est.estimate).abs();
    let score = if est.stderr > 0.0 { diff / est.stderr } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    (score, diff <= z * est.stderr + 1e-12)
}

#[allow(clippy::too_many_arguments)]
fn row(formula: &str, index: usize, u: &[f64], v: &[f64], closed: f64, est: &McEstimate, z: f64, fallback: bool) -> CheckRow {
    let (nu, nv) = (norm(u), norm(v));
    let cos = if nu > 0.0 && nv > 0.0 { dot(u, v) / (nu * nv) } else { 0.0 };
    let (z_score, ok) = agrees(closed, est, z);
    CheckRow {
        formula: formula.into(),
        index,
        norm_u: nu,
        norm_v: nv,
        cos_angle: cos,
        closed_form: closed,
        monte_carlo: est.estimate,
        stderr: est.stderr,
        z_score,
        agrees: ok,
        fallback,
    }
}

/// A random signal pair with norms in `[0.5, 3]`.
fn signal_pair<R: Rng>(d: usize, r: &mut R) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let a = r.random_range(0.5..3.0);
    let b = r.random_range(0.5..3.0);
    let u: Vec<f64> = sample_unit_sphere(d, r)?.into_iter().map(|x| a * x).collect();
    let v: Vec<f64> = sample_unit_sphere(d, r)?.into_iter().map(|x| b * x).collect();
    Ok((u, v))
}

/// Builds the agreement table: `pairs` isotropic rows, `pairs` radial rows,
/// one orthogonal radial row (always a fallback), then `kt_points` rows of
/// the one-dimensional formula. Row `i` draws from substream `i`.
pub fn run_meankernel_check(cfg: &MeanCheckConfig) -> CliResult<Vec<CheckRow>> {
    cfg.validate()?;
    let spec = KernelSpec::gaussian(cfg.tau)?;
    let params = MeanKernelParams::new(cfg.tau, cfg.sigma, cfg.d)?;
    let p = cfg.pairs;
    let total = 2 * p + 1 + cfg.kt_points;
    (0..total)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(cfg.base_seed, i as u64);
            if i < 2 * p {
                let (u, v) = signal_pair(cfg.d, &mut r)?;
                let (name, noise) = if i < p { ("iso", NoiseModel::Isotropic) } else { ("radial", NoiseModel::Radial) };
                let est = mc_mean_kernel(&spec, &noise, &u, &v, cfg.sigma, cfg.samples, &mut r)?;
                let (closed, fallback) = if i < p {
                    (mean_gauss_isotropic(&u, &v, cfg.sigma, cfg.sigma, &params)?, false)
                } else {
                    mean_gauss_radial_or_mc(&u, &v, &params)?
                };
                Ok(row(name, i % p, &u, &v, closed, &est, cfg.z, fallback))
            } else if i == 2 * p {
                let mut u = vec![0.0; cfg.d];
                let mut v = vec![0.0; cfg.d];
                u[0] = 2.0;
                v[1] = 3.0;
                let est = mc_mean_kernel(&spec, &NoiseModel::Radial, &u, &v, cfg.sigma, cfg.samples, &mut r)?;
                let (closed, fallback) = mean_gauss_radial_or_mc(&u, &v, &params)?;
                Ok(row("radial", p, &u, &v, closed, &est, cfg.z, fallback))
            } else {
                let m = r.random_range(-3.0..3.0);
                let t = r.random_range(0.0..2.0);
                let est = McEstimate::from_values((0..cfg.samples).map(|_| {
                    let w: f64 = r.sample(StandardNormal);
                    (-(m + t * w).powi(2) / 2.0).exp()
                }));
                let mut rw = row("kt_1d", i - 2 * p - 1, &[m], &[t], kt_1d(m, t), &est, cfg.z, false);
                rw.norm_u = m;
                rw.norm_v = t;
                rw.cos_angle = f64::NAN;
                Ok(rw)
            }
        })
        .collect()
}

/// Writes `meankernel.csv` and `meankernel_summary.json`, then fails with
/// exit code 2 if any non-fallback row disagrees.
pub fn write_and_check(cfg: &MeanCheckConfig, rows: &[CheckRow], dir: &Path) -> CliResult<()> {
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("meankernel.csv"), rows)?;
    let failed: Vec<String> = rows.iter().filter(|r| r.failed()).map(|r| format!("{}#{}", r.formula, r.index)).collect();
    let summary = serde_json::json!({
        "experiment": "meankernel",
        "configs": [cfg],
        "aggregate": {
            "rows": rows.len(),
            "fallback_rows": rows.iter().filter(|r| r.fallback).count(),
            "failed": failed,
            "max_z": rows.iter().filter(|r| !r.fallback).map(|r| r.z_score).fold(0.0, f64::max),
        },
        "seed": cfg.base_seed,
    });
    output::write_json(&dir.join("meankernel_summary.json"), &summary)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("closed form disagrees with Monte Carlo at {}", failed.join(", "))))
    }
}
