//! NMI-versus-dimension sweep on nested spheres, with per-run diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ksc_core::diagnostics::stats::empirical_stats_from_matrix;
use ksc_core::diagnostics::{block_constant, low_rank_check, mis_bound, operator_norm};
use ksc_core::kernels::{kernel_matrix_from_sq_dists, sq_dist_matrix, KernelSpec};
use ksc_core::meankernel::{
    pair_geometries, GaussianIsotropicMean, GaussianRadialMean, MeanKernelFn, PairGeometry, ReducedMcMean,
};
use ksc_core::metrics::{misclassification_rate, nmi};
use ksc_core::models::{sample_mixture_seeded, MixtureConfig, NoiseModel};
use ksc_core::spectral::{ksc_from_kernel, normalize_kernel, KmeansParams, KscParams};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{self, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum KernelKind {
    Gauss,
    PairDist,
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" => Ok(Self::Gauss),
            "pairdist" | "pair_dist" => Ok(Self::PairDist),
            other => Err(format!("unknown kernel `{other}` (expected gauss or pairdist)")),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gauss => "gauss",
            Self::PairDist => "pairdist",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum NoiseKind {
    Iso,
    Radial,
}

impl NoiseKind {
    pub fn model(self) -> NoiseModel {
        match self {
            Self::Iso => NoiseModel::Isotropic,
            Self::Radial => NoiseModel::Radial,
        }
    }
}

impl FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "iso" | "isotropic" => Ok(Self::Iso),
            "radial" => Ok(Self::Radial),
            other => Err(format!("unknown noise model `{other}` (expected iso or radial)")),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iso => "iso",
            Self::Radial => "radial",
        })
    }
}

/// Sweep settings. Defaults reproduce the published experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure3Config {
    pub n: usize,
    pub sigma: f64,
    pub radii: Vec<f64>,
    pub dims: Vec<usize>,
    /// Gaussian bandwidths `tau^2 = alpha (1 + sigma^2)`.
    pub alphas: Vec<f64>,
    pub kernels: Vec<KernelKind>,
    pub noise: Vec<NoiseKind>,
    pub reps: usize,
    pub base_seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    /// Deviation level used in the misclassification bound.
    pub t: f64,
    /// Approximation factor assumed for k-means.
    pub kappa: f64,
    /// Draws for the Monte Carlo pair-distance mean kernel.
    pub pairdist_mc: usize,
}

impl Default for Figure3Config {
    fn default() -> Self {
        Self {
            n: 500,
            sigma: 1.5,
            radii: vec![1.0, 5.0, 10.0],
            dims: vec![2, 10, 100, 1000, 10_000],
            alphas: vec![1.0, 2.0],
            kernels: vec![KernelKind::Gauss, KernelKind::PairDist],
            noise: vec![NoiseKind::Iso, NoiseKind::Radial],
            reps: 12,
            base_seed: 2024,
            restarts: 20,
            max_iters: 300,
            t: 2.0,
            kappa: 1.0,
            pairdist_mc: 512,
        }
    }
}

impl Figure3Config {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.dims.is_empty() || self.alphas.is_empty() || self.kernels.is_empty() || self.noise.is_empty() || self.radii.is_empty() {
            return bad("list-valued parameters must be nonempty");
        }
        if self.dims.contains(&0) {
            return bad("dims must be positive");
        }
        if self.alphas.iter().any(|a| !(*a > 0.0)) {
            return bad("alphas must be positive");
        }
        if self.n < self.radii.len() {
            return bad("n must be at least the number of clusters");
        }
        if self.restarts == 0 || self.max_iters == 0 || self.pairdist_mc == 0 {
            return bad("restarts, max_iters and pairdist_mc must be positive");
        }
        MixtureConfig::nested_spheres(&self.radii, NoiseModel::Isotropic, self.sigma, self.dims[0], self.n)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// The kernel lines of the plot: one Gaussian per alpha, one pair-distance.
    pub fn series(&self) -> Vec<(KernelKind, f64)> {
        let mut out = Vec::new();
        for k in &self.kernels {
            match k {
                KernelKind::Gauss => out.extend(self.alphas.iter().map(|a| (KernelKind::Gauss, *a))),
                KernelKind::PairDist => out.push((KernelKind::PairDist, 0.0)),
            }
        }
        out.dedup();
        out
    }

    /// Seed of replicate `rep` at grid point `config_index`.
    pub fn seed(&self, config_index: usize, rep: usize) -> u64 {
        self.base_seed.wrapping_add(1_000_000 * config_index as u64).wrapping_add(rep as u64)
    }

    pub fn tau(&self, alpha: f64) -> f64 {
        (alpha * (1.0 + self.sigma * self.sigma)).sqrt()
    }
}

/// One clustering run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub kernel: String,
    pub noise: String,
    pub alpha: f64,
    pub d: usize,
    pub rep: usize,
    pub seed: u64,
    pub nmi: f64,
    pub misrate: f64,
    pub gamma2: f64,
    pub vbar2: f64,
    #[serde(rename = "F_bound")]
    pub f_bound: f64,
    pub deviation: f64,
    pub gamma2_tilde: f64,
    #[serde(rename = "F_tilde")]
    pub f_tilde: f64,
    pub valid: bool,
    /// `C_1 F`, the bound on the misclassification rate.
    pub mis_bound: f64,
    pub lowrank_lhs: f64,
    pub lowrank_rhs: f64,
    pub lowrank_holds: bool,
}

/// Wall-clock time of one grid point, kept out of the main table so that
/// table stays reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuntimeRecord {
    pub noise: String,
    pub d: usize,
    pub rep: usize,
    pub seed: u64,
    pub runtime_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure3Output {
    pub records: Vec<ExperimentRecord>,
    pub runtimes: Vec<RuntimeRecord>,
}

fn mean_fn(kind: KernelKind, noise: NoiseKind, tau: f64, sigma: f64, d: usize, mc: usize, seed: u64) -> CliResult<Box<dyn MeanKernelFn>> {
    Ok(match (kind, noise) {
        (KernelKind::Gauss, NoiseKind::Iso) => Box::new(GaussianIsotropicMean { tau, sigma, d }),
        (KernelKind::Gauss, NoiseKind::Radial) => Box::new(GaussianRadialMean { tau, sigma, d }),
        (KernelKind::PairDist, _) => Box::new(ReducedMcMean::new(KernelSpec::PairDist, &noise.model(), sigma, d, mc, seed)?),
    })
}

/// `K~(mu_i, mu_j)` for all pairs. Diagonal entries depend only on the
/// radius, so they are evaluated once per cluster.
fn mean_function_matrix(f: &dyn MeanKernelFn, norms: &[f64], sq: &DMatrix<f64>, labels: &[usize], radii: &[f64]) -> DMatrix<f64> {
    let n = norms.len();
    let diag: Vec<f64> = radii.iter().map(|&r| f.pair(&PairGeometry { norm_u: r, norm_v: r, sq_dist: 0.0 })).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| f.pair(&PairGeometry { norm_u: norms[i], norm_v: norms[j], sq_dist: sq[(i, j)] }))
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        m[(i, i)] = diag[labels[i]];
        for (off, v) in row.into_iter().enumerate() {
            m[(i, i + 1 + off)] = v;
            m[(i + 1 + off, i)] = v;
        }
    }
    m
}

fn run_unit(cfg: &Figure3Config, noise: NoiseKind, d: usize, rep: usize, seed: u64) -> CliResult<(Vec<ExperimentRecord>, RuntimeRecord)> {
    let start = Instant::now();
    let r = cfg.radii.len();
    let mix = MixtureConfig::nested_spheres(&cfg.radii, noise.model(), cfg.sigma, d, cfg.n)?;
    let sample = sample_mixture_seeded(&mix, seed)?;
    let sq_x = sq_dist_matrix(&sample.x);
    let (norms, sq_mu) = pair_geometries(&sample.mu);
    let params = KscParams {
        clusters: r,
        kmeans: KmeansParams { restarts: cfg.restarts, max_iters: cfg.max_iters, ..Default::default() },
    };
    let mut out = Vec::new();
    for (kind, alpha) in cfg.series() {
        let tau = cfg.tau(alpha);
        let spec = match kind {
            KernelKind::Gauss => KernelSpec::gaussian(tau)?,
            KernelKind::PairDist => KernelSpec::PairDist,
        };
        let k = kernel_matrix_from_sq_dists(&spec, &sq_x)?;
        let res = ksc_from_kernel(&k, &params, seed)?;
        let nmi_v = nmi(&res.labels, &sample.labels)?;
        let mis = misclassification_rate(&res.labels, &sample.labels, r)?;

        let f = mean_fn(kind, noise, tau, cfg.sigma, d, cfg.pairdist_mc, seed ^ 0x5eed_f00d)?;
        let m = mean_function_matrix(f.as_ref(), &norms, &sq_mu, &sample.labels, &cfg.radii);
        let stats = empirical_stats_from_matrix(&m, &sample.labels, r)?;
        let mut ek = m;
        for i in 0..cfg.n {
            ek[(i, i)] = f.same_point(norms[i]);
        }
        let deviation = operator_norm(&(&k - &ek))? / cfg.n as f64;
        let lip = spec.lipschitz_constant().unwrap_or(f64::NAN);
        let mb = mis_bound(&stats, lip, cfg.sigma, d, cfg.n, cfg.t, 1.0, cfg.kappa);
        let kstar = block_constant(&stats.psi, &sample.labels)?;
        let a = normalize_kernel(&k)?;
        let evd = res.evd.as_ref().expect("ksc returns its eigenpairs");
        let lr = low_rank_check(&a, evd, &kstar)?;
        out.push(ExperimentRecord {
            kernel: kind.to_string(),
            noise: noise.to_string(),
            alpha,
            d,
            rep,
            seed,
            nmi: nmi_v,
            misrate: mis,
            gamma2: stats.gamma2,
            vbar2: stats.vbar2,
            f_bound: mb.f,
            deviation,
            gamma2_tilde: stats.gamma2_tilde,
            f_tilde: mb.f_tilde,
            valid: mb.valid,
            mis_bound: mb.bound,
            lowrank_lhs: lr.lhs,
            lowrank_rhs: lr.rhs,
            lowrank_holds: lr.holds,
        });
    }
    let rt = RuntimeRecord { noise: noise.to_string(), d, rep, seed, runtime_ms: start.elapsed().as_millis() as u64 };
    Ok((out, rt))
}

/// Runs the full grid. Records are ordered by noise model, kernel line,
/// dimension and replicate, independent of scheduling.
pub fn run_figure3(cfg: &Figure3Config) -> CliResult<Figure3Output> {
    cfg.validate()?;
    let mut units = Vec::new();
    for (ni, &noise) in cfg.noise.iter().enumerate() {
        for (di, &d) in cfg.dims.iter().enumerate() {
            let config_index = ni * cfg.dims.len() + di;
            for rep in 0..cfg.reps {
                units.push((ni, di, noise, d, rep, cfg.seed(config_index, rep)));
            }
        }
    }
    let results: Vec<_> = units
        .par_iter()
        .map(|&(ni, di, noise, d, rep, seed)| run_unit(cfg, noise, d, rep, seed).map(|r| (ni, di, rep, r)))
        .collect::<CliResult<_>>()?;
    let series = cfg.series();
    let mut keyed = Vec::new();
    let mut runtimes = Vec::new();
    for (ni, di, rep, (recs, rt)) in results {
        for (si, rec) in recs.into_iter().enumerate() {
            keyed.push(((ni, si, di, rep), rec));
        }
        runtimes.push(((ni, di, rep), rt));
    }
    keyed.sort_by_key(|a| a.0);
    runtimes.sort_by_key(|a| a.0);
    debug_assert_eq!(keyed.len(), series.len() * cfg.noise.len() * cfg.dims.len() * cfg.reps);
    Ok(Figure3Output {
        records: keyed.into_iter().map(|(_, r)| r).collect(),
        runtimes: runtimes.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Mean, min and max NMI of one line at one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NmiSummary {
    pub kernel: String,
    pub alpha: f64,
    pub noise: String,
    pub d: usize,
    pub mean_nmi: f64,
    pub min_nmi: f64,
    pub max_nmi: f64,
    pub mean_misrate: f64,
    pub valid_runs: usize,
    pub bound_holds_on_valid: usize,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<NmiSummary> {
    let mut groups: BTreeMap<(String, String, u64, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.noise.clone(), r.kernel.clone(), r.alpha.to_bits(), r.d)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((noise, kernel, alpha, d), rs)| {
            let k = rs.len() as f64;
            NmiSummary {
                kernel,
                alpha: f64::from_bits(alpha),
                noise,
                d,
                mean_nmi: rs.iter().map(|r| r.nmi).sum::<f64>() / k,
                min_nmi: rs.iter().map(|r| r.nmi).fold(f64::INFINITY, f64::min),
                max_nmi: rs.iter().map(|r| r.nmi).fold(f64::NEG_INFINITY, f64::max),
                mean_misrate: rs.iter().map(|r| r.misrate).sum::<f64>() / k,
                valid_runs: rs.iter().filter(|r| r.valid).count(),
                bound_holds_on_valid: rs.iter().filter(|r| r.valid && r.misrate <= r.mis_bound).count(),
            }
        })
        .collect()
}

fn series_label(kernel: &str, alpha: f64) -> String {
    if kernel == "gauss" {
        format!("gauss, alpha={alpha}")
    } else {
        kernel.to_string()
    }
}

/// One SVG per noise model: mean NMI against `log10 d`, min-max whiskers.
pub fn plots(cfg: &Figure3Config, summary: &[NmiSummary]) -> Vec<(NoiseKind, String)> {
    cfg.noise
        .iter()
        .map(|&noise| {
            let series = cfg
                .series()
                .into_iter()
                .map(|(kind, alpha)| {
                    let name = kind.to_string();
                    let points = summary
                        .iter()
                        .filter(|s| s.noise == noise.to_string() && s.kernel == name && s.alpha == alpha)
                        .map(|s| ((s.d as f64).log10(), s.mean_nmi, s.min_nmi, s.max_nmi))
                        .collect();
                    Series { name: series_label(&name, alpha), points }
                })
                .collect::<Vec<_>>();
            let title = format!("{} noise, n={}, sigma={}", noise, cfg.n, cfg.sigma);
            (noise, output::line_plot_svg(&title, "dimension d (log scale)", "NMI", &series, 0.0, 1.0))
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'static str,
    configs: Vec<&'a Figure3Config>,
    aggregate: Aggregate,
    seed: u64,
}

#[derive(Serialize)]
struct Aggregate {
    records: usize,
    valid_runs: usize,
    bound_holds_on_valid: usize,
    lowrank_violations: usize,
    lines: Vec<NmiSummary>,
}

/// Writes `figure3.csv`, `figure3_runtime.csv`, `figure3_summary.json` and
/// `figure3_<noise>.svg` into `dir`.
pub fn write_outputs(cfg: &Figure3Config, out: &Figure3Output, dir: &Path) -> CliResult<()> {
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("figure3.csv"), &out.records)?;
    output::write_csv(&dir.join("figure3_runtime.csv"), &out.runtimes)?;
    let lines = summarize(&out.records);
    for (noise, svg) in plots(cfg, &lines) {
        output::write_text(&dir.join(format!("figure3_{noise}.svg")), &svg)?;
    }
    let summary = Summary {
        experiment: "figure3",
        configs: vec![cfg],
        aggregate: Aggregate {
            records: out.records.len(),
            valid_runs: out.records.iter().filter(|r| r.valid).count(),
            bound_holds_on_valid: out.records.iter().filter(|r| r.valid && r.misrate <= r.mis_bound).count(),
            lowrank_violations: out.records.iter().filter(|r| !r.lowrank_holds).count(),
            lines,
        },
        seed: cfg.base_seed,
    };
    output::write_json(&dir.join("figure3_summary.json"), &summary)
}
