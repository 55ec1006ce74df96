//! The misclassification guarantee on one nested-spheres configuration.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::figure3::{run_figure3, ExperimentRecord, Figure3Config, KernelKind, NoiseKind};
use crate::output;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundConfig {
    pub kernel: KernelKind,
    pub alpha: f64,
    pub noise: NoiseKind,
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub radii: Vec<f64>,
    pub reps: usize,
    pub base_seed: u64,
    pub t: f64,
    pub kappa: f64,
    pub pairdist_mc: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::PairDist,
            alpha: 1.0,
            noise: NoiseKind::Iso,
            d: 10_000,
            n: 500,
            sigma: 1.5,
            radii: vec![1.0, 5.0, 10.0],
            reps: 1,
            base_seed: 2024,
            t: 2.0,
            kappa: 1.0,
            pairdist_mc: 512,
        }
    }
}

impl BoundConfig {
    pub fn as_figure3(&self) -> Figure3Config {
        Figure3Config {
            n: self.n,
            sigma: self.sigma,
            radii: self.radii.clone(),
            dims: vec![self.d],
            alphas: vec![self.alpha],
            kernels: vec![self.kernel],
            noise: vec![self.noise],
            reps: self.reps,
            base_seed: self.base_seed,
            t: self.t,
            kappa: self.kappa,
            pairdist_mc: self.pairdist_mc,
            ..Figure3Config::default()
        }
    }
}

pub fn run_bound(cfg: &BoundConfig) -> CliResult<Vec<ExperimentRecord>> {
    Ok(run_figure3(&cfg.as_figure3())?.records)
}

/// Human-readable report, one block per replicate.
pub fn report(records: &[ExperimentRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{} alpha={} noise={} d={} rep={} seed={}\n  gamma2={:.6e} gamma2_tilde={:.6e} vbar2={:.6e}\n  F={:.6e} F_tilde={:.6e} valid={}\n  misrate={:.6} bound C1*F={:.6e} nmi={:.6}\n",
            r.kernel, r.alpha, r.noise, r.d, r.rep, r.seed, r.gamma2, r.gamma2_tilde, r.vbar2, r.f_bound, r.f_tilde, r.valid, r.misrate, r.mis_bound, r.nmi
        ));
    }
    s
}

/// Writes `bound.csv` and fails with exit code 2 if a valid configuration
/// misclassifies more than its bound allows.
pub fn write_and_check(records: &[ExperimentRecord], dir: &Path, check: bool) -> CliResult<()> {
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("bound.csv"), records)?;
    let broken: Vec<usize> = records.iter().filter(|r| r.valid && r.misrate > r.mis_bound).map(|r| r.rep).collect();
    if check && !broken.is_empty() {
        return Err(CliError::CheckFailed(format!("misclassification above the bound in replicates {broken:?}")));
    }
    Ok(())
}
