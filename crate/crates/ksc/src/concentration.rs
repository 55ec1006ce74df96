//! Deviation of kernel matrices from their expectation over a grid of
//! `(n, d, t)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ksc_core::diagnostics::trials::{concentration_trial, gaussian_concentration, lower_bound_trials, run_trials};
use ksc_core::diagnostics::{anisotropic_bound, BoundReport};
use ksc_core::kernels::{DataMatrix, KernelSpec};
use ksc_core::meankernel::{mean_kernel_matrix, MeanKernelMethod};
use ksc_core::models::{sample_gaussian_model, sample_unit_sphere, NoiseModel};
use ksc_core::rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConcKernel {
    Gauss,
    PairDist,
    /// Clamped product kernel on uniform data, run as a lower-bound check.
    ProdThresh,
}

impl FromStr for ConcKernel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" => Ok(Self::Gauss),
            "pairdist" | "pair_dist" => Ok(Self::PairDist),
            "prodthresh" | "product_threshold" => Ok(Self::ProdThresh),
            other => Err(format!("unknown kernel `{other}` (expected gauss, pairdist or prodthresh)")),
        }
    }
}

impl fmt::Display for ConcKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gauss => "gauss",
            Self::PairDist => "pairdist",
            Self::ProdThresh => "prodthresh",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationConfig {
    pub kernel: ConcKernel,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub ts: Vec<f64>,
    pub tau: f64,
    pub sigma: f64,
    /// Lipschitz constant of the product kernel.
    pub lipschitz: f64,
    pub trials: usize,
    pub base_seed: u64,
    /// Draws per pair for the pair-distance mean kernel.
    pub pairdist_mc: usize,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            kernel: ConcKernel::Gauss,
            ns: vec![100],
            ds: vec![50],
            ts: vec![2.0],
            tau: 1.0,
            sigma: 1.5,
            lipschitz: 1.0,
            trials: 1000,
            base_seed: 2024,
            pairdist_mc: 4000,
        }
    }
}

impl ConcentrationConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.ns.is_empty() || self.ds.is_empty() || self.ts.is_empty() {
            return bad("list-valued parameters must be nonempty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.ns.iter().any(|&n| n < 2) {
            return bad("n must be at least 2");
        }
        if self.ds.contains(&0) {
            return bad("d must be positive");
        }
        if self.ts.iter().any(|t| !(*t >= 0.0)) {
            return bad("t must be nonnegative");
        }
        if !(self.tau > 0.0) || !(self.sigma >= 0.0) || !(self.lipschitz > 0.0) {
            return bad("tau and lipschitz must be positive, sigma nonnegative");
        }
        if self.kernel == ConcKernel::ProdThresh && (self.ds != [1] || !(self.sigma > 0.0)) {
            return bad("prodthresh runs in d = 1 with sigma > 0");
        }
        if self.pairdist_mc < 1000 {
            return bad("pairdist_mc must be at least 1000");
        }
        Ok(())
    }

    /// Grid points in emission order.
    pub fn grid(&self) -> Vec<(usize, usize, f64)> {
        let mut g = Vec::new();
        for &n in &self.ns {
            for &d in &self.ds {
                for &t in &self.ts {
                    g.push((n, d, t));
                }
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub seed: u64,
    pub trial: usize,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub tau: f64,
    pub t: f64,
    pub deviation: f64,
    pub bound: f64,
    pub violated: bool,
}

/// Rate of `violated` at one grid point, with the rate allowed by the
/// result being checked.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSummary {
    pub n: usize,
    pub d: usize,
    pub t: f64,
    pub seed: u64,
    pub trials: usize,
    pub rate: f64,
    pub max_deviation: f64,
    pub bound: f64,
    /// Upper limit on the violation rate, or lower limit on the exceedance
    /// rate for the product kernel.
    pub target: f64,
    pub passes: bool,
}

/// Fixed signals for a grid point: i.i.d. uniform on the unit sphere.
pub fn fixed_signals(n: usize, d: usize, seed: u64) -> CliResult<DataMatrix> {
    let mut r = rng::stream(seed);
    let cols = (0..n).map(|_| sample_unit_sphere(d, &mut r)).collect::<Result<Vec<_>, _>>()?;
    Ok(DataMatrix::from_columns(&cols)?)
}

fn pairdist_trials(mu: &DataMatrix, cfg: &ConcentrationConfig, t: f64, seed: u64) -> CliResult<Vec<BoundReport>> {
    let (n, d) = (mu.len(), mu.dim());
    let method = MeanKernelMethod::Reduced { samples: cfg.pairdist_mc, seed: seed ^ 0xa5a5 };
    let mean = mean_kernel_matrix(&KernelSpec::PairDist, &NoiseModel::Isotropic, mu, cfg.sigma, method)?;
    let bound = anisotropic_bound(1.0, cfg.sigma * cfg.sigma, d, n, t);
    let sigmas = vec![cfg.sigma; n];
    let spec = KernelSpec::PairDist;
    run_trials(cfg.trials, seed, |_, r| {
        let x = sample_gaussian_model(mu, &sigmas, r)?;
        concentration_trial(&spec, &x, &mean, bound, t)
    })
    .into_iter()
    .map(|r| r.map_err(CliError::from))
    .collect()
}

/// Runs every grid point. Grid point `i` uses seed `base_seed + 10^6 i`;
/// trial `j` runs on substream `j` of that seed.
pub fn run_concentration(cfg: &ConcentrationConfig) -> CliResult<(Vec<TrialRecord>, Vec<GridSummary>)> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (gi, (n, d, t)) in cfg.grid().into_iter().enumerate() {
        let seed = cfg.base_seed.wrapping_add(1_000_000 * gi as u64);
        let (reports, target, lower) = match cfg.kernel {
            ConcKernel::Gauss => {
                let mu = fixed_signals(n, d, seed)?;
                (gaussian_concentration(&mu, cfg.sigma, cfg.tau, t, cfg.trials, seed)?, (-t * t).exp() + 0.02, false)
            }
            ConcKernel::PairDist => {
                let mu = fixed_signals(n, d, seed)?;
                (pairdist_trials(&mu, cfg, t, seed)?, (-t * t).exp() + 0.02, false)
            }
            ConcKernel::ProdThresh => (lower_bound_trials(cfg.lipschitz, cfg.sigma, n, cfg.trials, seed)?, 0.95, true),
        };
        let tau = if cfg.kernel == ConcKernel::Gauss { cfg.tau } else { f64::NAN };
        let hits = reports.iter().filter(|r| r.violated).count();
        let rate = hits as f64 / reports.len() as f64;
        summaries.push(GridSummary {
            n,
            d,
            t,
            seed,
            trials: reports.len(),
            rate,
            max_deviation: reports.iter().map(|r| r.deviation).fold(0.0, f64::max),
            bound: reports[0].bound,
            target,
            passes: if lower { rate >= target } else { rate <= target },
        });
        records.extend(reports.into_iter().enumerate().map(|(j, r)| TrialRecord {
            experiment: cfg.kernel.to_string(),
            seed,
            trial: j,
            n,
            d,
            sigma: cfg.sigma,
            tau,
            t,
            deviation: r.deviation,
            bound: r.bound,
            violated: r.violated,
        }));
    }
    Ok((records, summaries))
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'static str,
    configs: Vec<&'a ConcentrationConfig>,
    aggregate: BTreeMap<&'static str, serde_json::Value>,
    seed: u64,
}

/// Writes `concentration.csv` and `concentration_summary.json`.
pub fn write_outputs(cfg: &ConcentrationConfig, records: &[TrialRecord], grid: &[GridSummary], dir: &Path) -> CliResult<()> {
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("concentration.csv"), records)?;
    let total = records.len();
    let hits = records.iter().filter(|r| r.violated).count();
    let mut aggregate = BTreeMap::new();
    aggregate.insert("trials", serde_json::json!(total));
    aggregate.insert("rate", serde_json::json!(hits as f64 / total.max(1) as f64));
    aggregate.insert("all_pass", serde_json::json!(grid.iter().all(|g| g.passes)));
    aggregate.insert("grid", serde_json::to_value(grid)?);
    let summary = Summary { experiment: "concentration", configs: vec![cfg], aggregate, seed: cfg.base_seed };
    output::write_json(&dir.join("concentration_summary.json"), &summary)
}
