use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ksc::bound::{self, BoundConfig};
use ksc::concentration::{self, ConcentrationConfig};
use ksc::config::{parse_list, ConfigFile};
use ksc::figure3::{self, Figure3Config};
use ksc::meancheck::{self, MeanCheckConfig};
use ksc::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ksc", version, about = "Kernel spectral clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replicates per grid point (trials for `concentration`).
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit with code 2 when the run's acceptance check fails.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// NMI against dimension on nested spheres.
    Figure3 {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        dims: Option<String>,
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        kernels: Option<String>,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        pairdist_mc: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Kernel matrix deviation from its expectation.
    Concentration {
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        d: Option<String>,
        #[arg(long)]
        t: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form mean kernels against Monte Carlo.
    Meankernel {
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        kt_points: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Misclassification bound on one configuration.
    Bound {
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn list<T>(key: &str, flag: Option<String>) -> CliResult<Option<Vec<T>>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    flag.map(|s| parse_list(&s).map_err(|e| CliError::Config(format!("--{key}: {e}")))).transpose()
}

fn scalar<T>(key: &str, flag: Option<String>) -> CliResult<Option<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    flag.map(|s| s.parse().map_err(|e| CliError::Config(format!("--{key}: {e}")))).transpose()
}

struct Shared {
    out: PathBuf,
    seed: u64,
    check: bool,
}

fn open(common: &Common) -> CliResult<ConfigFile> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &common.config {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn shared(file: &mut ConfigFile, common: &Common, default_seed: u64) -> CliResult<Shared> {
    Ok(Shared {
        out: file.take("out", common.out.clone(), PathBuf::from("out"))?,
        seed: file.take("seed", common.seed, default_seed)?,
        check: file.take("check", common.check.then_some(true), false)?,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Figure3 { n, sigma, radii, dims, alphas, kernels, noise, restarts, pairdist_mc, common } => {
            let mut f = open(&common)?;
            let d = Figure3Config::default();
            let s = shared(&mut f, &common, d.base_seed)?;
            let cfg = Figure3Config {
                n: f.take("n", n, d.n)?,
                sigma: f.take("sigma", sigma, d.sigma)?,
                radii: f.take_list("radii", list("radii", radii)?, d.radii.clone())?,
                dims: f.take_list("dims", list("dims", dims)?, d.dims.clone())?,
                alphas: f.take_list("alphas", list("alphas", alphas)?, d.alphas.clone())?,
                kernels: f.take_list("kernels", list("kernels", kernels)?, d.kernels.clone())?,
                noise: f.take_list("noise", list("noise", noise)?, d.noise.clone())?,
                reps: f.take("reps", common.reps, d.reps)?,
                restarts: f.take("restarts", restarts, d.restarts)?,
                pairdist_mc: f.take("pairdist_mc", pairdist_mc, d.pairdist_mc)?,
                base_seed: s.seed,
                ..d
            };
            f.finish()?;
            let out = figure3::run_figure3(&cfg)?;
            figure3::write_outputs(&cfg, &out, &s.out)?;
            for line in figure3::summarize(&out.records) {
                println!(
                    "{:<6} {:<8} alpha={:<4} d={:<6} nmi mean={:.4} min={:.4} max={:.4}",
                    line.noise, line.kernel, line.alpha, line.d, line.mean_nmi, line.min_nmi, line.max_nmi
                );
            }
            let broken = out.records.iter().filter(|r| r.valid && r.misrate > r.mis_bound).count();
            if s.check && broken > 0 {
                return Err(CliError::CheckFailed(format!("{broken} valid runs exceed the misclassification bound")));
            }
            Ok(())
        }
        Command::Concentration { kernel, n, d: dims, t, tau, sigma, lipschitz, trials, common } => {
            let mut f = open(&common)?;
            let d = ConcentrationConfig::default();
            let s = shared(&mut f, &common, d.base_seed)?;
            let kernel = f.take("kernel", scalar("kernel", kernel)?, d.kernel.to_string())?;
            let kernel = kernel.parse().map_err(CliError::Config)?;
            let trials = trials.or(common.reps);
            let cfg = ConcentrationConfig {
                kernel,
                ns: f.take_list("n", list("n", n)?, d.ns.clone())?,
                ds: f.take_list("d", list("d", dims)?, d.ds.clone())?,
                ts: f.take_list("t", list("t", t)?, d.ts.clone())?,
                tau: f.take("tau", tau, d.tau)?,
                sigma: f.take("sigma", sigma, d.sigma)?,
                lipschitz: f.take("lipschitz", lipschitz, d.lipschitz)?,
                trials: f.take("trials", trials, d.trials)?,
                base_seed: s.seed,
                ..d
            };
            f.finish()?;
            let (records, grid) = concentration::run_concentration(&cfg)?;
            concentration::write_outputs(&cfg, &records, &grid, &s.out)?;
            for g in &grid {
                println!(
                    "n={} d={} t={} rate={:.4} target={:.4} max_dev={:.4e} bound={:.4e} {}",
                    g.n, g.d, g.t, g.rate, g.target, g.max_deviation, g.bound, if g.passes { "PASS" } else { "FAIL" }
                );
            }
            if s.check && grid.iter().any(|g| !g.passes) {
                return Err(CliError::CheckFailed("violation rate outside its target".into()));
            }
            Ok(())
        }
        Command::Meankernel { pairs, samples, d: dim, sigma, tau, kt_points, common } => {
            let mut f = open(&common)?;
            let d = MeanCheckConfig::default();
            let s = shared(&mut f, &common, d.base_seed)?;
            let cfg = MeanCheckConfig {
                pairs: f.take("pairs", pairs, d.pairs)?,
                samples: f.take("samples", samples, d.samples)?,
                d: f.take("d", dim, d.d)?,
                sigma: f.take("sigma", sigma, d.sigma)?,
                tau: f.take("tau", tau, d.tau)?,
                kt_points: f.take("kt_points", kt_points, d.kt_points)?,
                base_seed: s.seed,
                ..d
            };
            f.finish()?;
            let rows = meancheck::run_meankernel_check(&cfg)?;
            for r in &rows {
                println!(
                    "{:<7} {:>3} closed={:.8e} mc={:.8e} se={:.2e} z={:.2} {}",
                    r.formula,
                    r.index,
                    r.closed_form,
                    r.monte_carlo,
                    r.stderr,
                    r.z_score,
                    if r.fallback { "fallback" } else if r.agrees { "ok" } else { "DISAGREE" }
                );
            }
            meancheck::write_and_check(&cfg, &rows, &s.out)
        }
        Command::Bound { kernel, alpha, noise, d: dim, n, sigma, radii, t, kappa, common } => {
            let mut f = open(&common)?;
            let d = BoundConfig::default();
            let s = shared(&mut f, &common, d.base_seed)?;
            let kernel = f.take("kernel", scalar("kernel", kernel)?, d.kernel.to_string())?;
            let noise = f.take("noise", scalar("noise", noise)?, d.noise.to_string())?;
            let cfg = BoundConfig {
                kernel: kernel.parse().map_err(CliError::Config)?,
                noise: noise.parse().map_err(CliError::Config)?,
                alpha: f.take("alpha", alpha, d.alpha)?,
                d: f.take("d", dim, d.d)?,
                n: f.take("n", n, d.n)?,
                sigma: f.take("sigma", sigma, d.sigma)?,
                radii: f.take_list("radii", list("radii", radii)?, d.radii.clone())?,
                reps: f.take("reps", common.reps, d.reps)?,
                t: f.take("t", t, d.t)?,
                kappa: f.take("kappa", kappa, d.kappa)?,
                base_seed: s.seed,
                ..d
            };
            f.finish()?;
            let records = bound::run_bound(&cfg)?;
            print!("{}", bound::report(&records));
            bound::write_and_check(&records, &s.out, s.check)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
