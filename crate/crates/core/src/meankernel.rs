//! Mean kernels under Gaussian noise.
//!
//! For signals `u, v` with independent noise attached to each, the mean
//! kernel is `K~(u, v) = E K(u + (sigma/sqrt d) sqrt(Sigma(u)) w1,
//! v + (sigma/sqrt d) sqrt(Sigma(v)) w2)`. Closed forms exist for the
//! Gaussian kernel under isotropic and radial noise. Everything else goes
//! through Monte Carlo: either the full `d`-dimensional oracle
//! [`mc_mean_kernel`], or [`ReducedMcMean`], which draws only the handful of
//! scalars the kernel actually depends on.
//!
//! Closed forms are evaluated in log space so `s^{-d}` does not underflow at
//! large `d`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::kernels::{norm, DataMatrix, KernelSpec};
use crate::models::{sample_unit_sphere, NoiseModel};
use crate::{kernels, par, quad, rng};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        // Welford
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self { estimate: mean, stderr: (var / n.max(1) as f64).sqrt(), samples: n }
    }

    /// Sample variance (not of the mean).
    pub fn variance(&self) -> f64 {
        self.stderr * self.stderr * self.samples as f64
    }

    /// `|estimate - value| <= k * stderr`.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.stderr
    }
}

/// Bandwidth, noise level and dimension for the Gaussian closed forms.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanKernelParams {
    pub tau: f64,
    pub sigma: f64,
    pub d: usize,
    /// Per-point noise levels `sigma_i`; when present they override `sigma`.
    pub per_point_sigmas: Option<Vec<f64>>,
}

impl MeanKernelParams {
    pub fn new(tau: f64, sigma: f64, d: usize) -> Result<Self> {
        let p = Self { tau, sigma, d, per_point_sigmas: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", "bandwidth must be positive and finite"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be nonnegative and finite"));
        }
        if self.d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if let Some(s) = &self.per_point_sigmas {
            if s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(invalid("per_point_sigmas", "must be nonnegative and finite"));
            }
        }
        Ok(())
    }

    /// Noise level of point `i`.
    pub fn sigma_of(&self, i: usize) -> f64 {
        self.per_point_sigmas.as_ref().and_then(|s| s.get(i).copied()).unwrap_or(self.sigma)
    }
}

/// `E exp(-(m + t w)^2 / 2)` for `w ~ N(0, 1)`, equal to
/// `exp(-m^2 / (2 s^2)) / s` with `s^2 = 1 + t^2`.
pub fn kt_1d(m: f64, t: f64) -> f64 {
    let s2 = 1.0 + t * t;
    (-m * m / (2.0 * s2)).exp() / s2.sqrt()
}

/// Isotropic closed form from the squared signal distance.
pub fn gauss_isotropic_from_sq(sq_dist: f64, sigma_i: f64, sigma_j: f64, tau: f64, d: usize) -> f64 {
    let df = d as f64;
    let r = (sigma_i * sigma_i + sigma_j * sigma_j) / (df * tau * tau);
    let s2 = 1.0 + r;
    (-0.5 * df * r.ln_1p() - sq_dist / (2.0 * s2 * tau * tau)).exp()
}

/// Mean Gaussian kernel under per-point isotropic noise:
/// `s^{-d} exp(-|u - v|^2 / (2 s^2 tau^2))`, `s^2 = 1 + (sigma_i^2 + sigma_j^2)/(d tau^2)`.
pub fn mean_gauss_isotropic(
    u: &[f64],
    v: &[f64],
    sigma_i: f64,
    sigma_j: f64,
    params: &MeanKernelParams,
) -> Result<f64> {
    params.validate()?;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if u.len() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: u.len() });
    }
    Ok(gauss_isotropic_from_sq(kernels::sq_dist(u, v), sigma_i, sigma_j, params.tau, params.d))
}

/// Radial closed form in terms of the norms and the cosine `alpha` of the
/// angle between the signals. Valid for `alpha != 0`.
pub fn gauss_radial_from_geometry(norm_u: f64, norm_v: f64, alpha: f64, tau: f64, sigma: f64, d: usize) -> f64 {
    let df = d as f64;
    let a = alpha.abs();
    let sgn = if alpha < 0.0 { -1.0 } else { 1.0 };
    let (l1, l2) = (1.0 + a, 1.0 - a);
    let r1 = sigma * sigma * l1 / (tau * tau * df);
    let r2 = sigma * sigma * l2 / (tau * tau * df);
    let (s1sq, s2sq) = (1.0 + r1, 1.0 + r2);
    let t1 = l1 / (2.0 * s1sq) * (norm_u - sgn * norm_v).powi(2);
    let t2 = l2 / (2.0 * s2sq) * (norm_u + sgn * norm_v).powi(2);
    (-0.5 * (r1.ln_1p() + r2.ln_1p()) - (t1 + t2) / (2.0 * tau * tau)).exp()
}

/// Mean Gaussian kernel under radial noise.
///
/// Returns [`Error::OutsideDomain`] for zero signals, orthogonal signals
/// (`alpha = 0`) and `u = v`; use [`mean_gauss_radial_or_mc`] there.
pub fn mean_gauss_radial(u: &[f64], v: &[f64], params: &MeanKernelParams) -> Result<f64> {
    params.validate()?;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::OutsideDomain("radial noise needs nonzero signals"));
    }
    if u == v {
        return Err(Error::OutsideDomain("closed form excludes u = v"));
    }
    let alpha = kernels::dot(u, v) / (nu * nv);
    if alpha == 0.0 {
        return Err(Error::OutsideDomain("closed form excludes orthogonal signals"));
    }
    Ok(gauss_radial_from_geometry(nu, nv, alpha.clamp(-1.0, 1.0), params.tau, params.sigma, params.d))
}

/// Draws used for the Monte Carlo fallback of the radial closed form.
pub const RADIAL_FALLBACK_SAMPLES: usize = 100_000;

/// [`mean_gauss_radial`], falling back to a Monte Carlo value (seeded from
/// the inputs) outside the closed-form domain. The flag reports the fallback.
pub fn mean_gauss_radial_or_mc(u: &[f64], v: &[f64], params: &MeanKernelParams) -> Result<(f64, bool)> {
    match mean_gauss_radial(u, v, params) {
        Ok(val) => Ok((val, false)),
        Err(Error::OutsideDomain(_)) => {
            let g = PairGeometry::new(u, v);
            Ok((radial_fallback(&g, params.tau, params.sigma, params.d), true))
        }
        Err(e) => Err(e),
    }
}

fn radial_fallback(g: &PairGeometry, tau: f64, sigma: f64, d: usize) -> f64 {
    let seed = rng::seed_from_values(&[g.norm_u, g.norm_v, g.sq_dist, tau, sigma, d as f64]);
    let mut r = rng::stream(seed);
    let spec = KernelSpec::Gaussian { tau };
    let c = sigma / (d as f64).sqrt();
    let alpha = g.cos_angle();
    McEstimate::from_values((0..RADIAL_FALLBACK_SAMPLES).map(|_| {
        let x1: f64 = r.sample(StandardNormal);
        let x2: f64 = r.sample(StandardNormal);
        radial_sq(g, alpha, c, x1, x2)
    }).map(|sq| spec.from_sq_dist(sq).unwrap_or(f64::NAN)))
    .estimate
}

/// Squared distance between the noisy radial points in the plane of the
/// two signals.
fn radial_sq(g: &PairGeometry, alpha: f64, c: f64, xi1: f64, xi2: f64) -> f64 {
    let a = if g.norm_u > 0.0 { g.norm_u + c * xi1 } else { 0.0 };
    let b = if g.norm_v > 0.0 { g.norm_v + c * xi2 } else { 0.0 };
    (a * a + b * b - 2.0 * a * b * alpha).max(0.0)
}

/// Full-dimensional Monte Carlo estimate of the mean kernel `K~(u, v)`.
pub fn mc_mean_kernel<R: Rng + ?Sized>(
    spec: &KernelSpec,
    noise: &NoiseModel,
    u: &[f64],
    v: &[f64],
    sigma: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    spec.validate()?;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if n_samples < 1000 {
        return Err(invalid("n_samples", "need at least 1000 draws"));
    }
    // the kernel's own checks (e.g. dimension constraints)
    spec.eval(u, v)?;
    if sigma == 0.0 {
        let k = spec.eval_unchecked(u, v);
        return Ok(McEstimate { estimate: k, stderr: 0.0, samples: n_samples });
    }
    let mut x = u.to_vec();
    let mut y = v.to_vec();
    Ok(McEstimate::from_values((0..n_samples).map(|_| {
        noise.perturb_into(sigma, u, rng, &mut x);
        noise.perturb_into(sigma, v, rng, &mut y);
        spec.eval_unchecked(&x, &y)
    })))
}

/// Norms and squared distance of a signal pair. Rotation-invariant mean
/// kernels depend on nothing else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGeometry {
    pub norm_u: f64,
    pub norm_v: f64,
    pub sq_dist: f64,
}

impl PairGeometry {
    pub fn new(u: &[f64], v: &[f64]) -> Self {
        Self { norm_u: norm(u), norm_v: norm(v), sq_dist: kernels::sq_dist(u, v) }
    }

    pub fn dot(&self) -> f64 {
        0.5 * (self.norm_u * self.norm_u + self.norm_v * self.norm_v - self.sq_dist)
    }

    /// Cosine of the angle between the signals; 0 if either is zero.
    pub fn cos_angle(&self) -> f64 {
        let p = self.norm_u * self.norm_v;
        if p > 0.0 {
            (self.dot() / p).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}

/// A mean kernel that depends on a signal pair only through its geometry.
pub trait MeanKernelFn: Sync + Send {
    /// `K~(u, v)`: independent noise on each argument.
    fn pair(&self, g: &PairGeometry) -> f64;
    /// `E K(X, X)` for a single noisy point with signal norm `norm_u`.
    fn same_point(&self, norm_u: f64) -> f64;
    /// A uniform bound on `|K~|`, when one is known a priori.
    fn sup_bound(&self) -> Option<f64> {
        None
    }
}

/// Gaussian kernel, isotropic noise, common noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianIsotropicMean {
    pub tau: f64,
    pub sigma: f64,
    pub d: usize,
}

impl MeanKernelFn for GaussianIsotropicMean {
    fn pair(&self, g: &PairGeometry) -> f64 {
        gauss_isotropic_from_sq(g.sq_dist, self.sigma, self.sigma, self.tau, self.d)
    }
    fn same_point(&self, _: f64) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Gaussian kernel, radial noise; Monte Carlo at `alpha = 0` and `u = v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianRadialMean {
    pub tau: f64,
    pub sigma: f64,
    pub d: usize,
}

impl GaussianRadialMean {
    pub fn in_closed_form_domain(g: &PairGeometry) -> bool {
        g.norm_u > 0.0 && g.norm_v > 0.0 && g.sq_dist > 0.0 && g.dot() != 0.0
    }
}

impl MeanKernelFn for GaussianRadialMean {
    fn pair(&self, g: &PairGeometry) -> f64 {
        if Self::in_closed_form_domain(g) {
            gauss_radial_from_geometry(g.norm_u, g.norm_v, g.cos_angle(), self.tau, self.sigma, self.d)
        } else {
            radial_fallback(g, self.tau, self.sigma, self.d)
        }
    }
    fn same_point(&self, _: f64) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Euclidean kernel: `E<X, Y> = <u, v>` and `E|X|^2 = |u|^2 + sigma^2 tr(Sigma)/d`.
#[derive(Clone, Debug)]
pub struct EuclideanMean {
    pub noise: NoiseModel,
    pub sigma: f64,
    pub d: usize,
}

impl MeanKernelFn for EuclideanMean {
    fn pair(&self, g: &PairGeometry) -> f64 {
        g.dot()
    }
    fn same_point(&self, norm_u: f64) -> f64 {
        let trace = match &self.noise {
            NoiseModel::Isotropic => self.d as f64,
            NoiseModel::Radial => {
                if norm_u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseModel::ConstantDiag(v) => v.iter().sum(),
            NoiseModel::General(_) => f64::NAN,
        };
        norm_u * norm_u + self.sigma * self.sigma * trace / self.d as f64
    }
}

/// Monte Carlo mean of a distance kernel under isotropic or radial noise,
/// drawing only the scalars the squared distance depends on.
///
/// Isotropic: `|u - v + n|^2 = (|u - v| + s z)^2 + s^2 q` with
/// `s^2 = 2 sigma^2 / d`, `z ~ N(0,1)`, `q ~ chi^2_{d-1}`.
/// Radial: the noisy points stay in the plane of `u, v`, with norms
/// `|u| + c xi1` and `|v| + c xi2`, `c = sigma / sqrt(d)`.
///
/// The same draws are reused for every pair (common random numbers).
#[derive(Clone, Debug)]
pub struct ReducedMcMean {
    kernel: KernelSpec,
    radial: bool,
    scale: f64,
    draws: Vec<(f64, f64)>,
}

impl ReducedMcMean {
    pub fn new(kernel: KernelSpec, noise: &NoiseModel, sigma: f64, d: usize, samples: usize, seed: u64) -> Result<Self> {
        kernel.validate()?;
        if !kernel.is_distance_kernel() {
            return Err(Error::NoClosedForm("reduced Monte Carlo needs a distance kernel"));
        }
        if d == 0 || samples == 0 {
            return Err(invalid("samples", "need d >= 1 and at least one draw"));
        }
        let mut r = rng::stream(seed);
        let df = d as f64;
        let (radial, scale, draws) = match noise {
            NoiseModel::Isotropic => {
                let chi = if d > 1 { ChiSquared::new(df - 1.0).ok() } else { None };
                let draws = (0..samples)
                    .map(|_| {
                        let z: f64 = r.sample(StandardNormal);
                        let q = chi.as_ref().map(|c| c.sample(&mut r)).unwrap_or(0.0);
                        (z, q)
                    })
                    .collect();
                (false, sigma * (2.0 / df).sqrt(), draws)
            }
            NoiseModel::Radial => {
                let draws = (0..samples)
                    .map(|_| (r.sample(StandardNormal), r.sample(StandardNormal)))
                    .collect();
                (true, sigma / df.sqrt(), draws)
            }
            _ => return Err(Error::NoClosedForm("reduced Monte Carlo supports isotropic and radial noise")),
        };
        Ok(Self { kernel, radial, scale, draws })
    }

    fn sq_dists<'a>(&'a self, g: &'a PairGeometry) -> impl Iterator<Item = f64> + 'a {
        let alpha = g.cos_angle();
        let dist = g.sq_dist.max(0.0).sqrt();
        self.draws.iter().map(move |&(a, b)| {
            if self.radial {
                radial_sq(g, alpha, self.scale, a, b)
            } else {
                let t = dist + self.scale * a;
                t * t + self.scale * self.scale * b
            }
        })
    }

    /// Estimate with its standard error for one pair.
    pub fn estimate(&self, g: &PairGeometry) -> McEstimate {
        McEstimate::from_values(self.sq_dists(g).map(|s| self.kernel.from_sq_dist(s).unwrap_or(f64::NAN)))
    }
}

impl MeanKernelFn for ReducedMcMean {
    fn pair(&self, g: &PairGeometry) -> f64 {
        let n = self.draws.len() as f64;
        self.sq_dists(g).map(|s| self.kernel.from_sq_dist(s).unwrap_or(f64::NAN)).sum::<f64>() / n
    }
    fn same_point(&self, _: f64) -> f64 {
        self.kernel.from_sq_dist(0.0).unwrap_or(f64::NAN)
    }
    fn sup_bound(&self) -> Option<f64> {
        match self.kernel {
            KernelSpec::Gaussian { .. } => Some(1.0),
            _ => None,
        }
    }
}

/// How [`mean_kernel_matrix`] evaluates entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeanKernelMethod {
    /// Gaussian kernel under isotropic or radial noise, Euclidean kernel.
    ClosedForm,
    /// [`ReducedMcMean`] with common draws.
    Reduced { samples: usize, seed: u64 },
    /// Full-dimensional [`mc_mean_kernel`] per entry, substream per pair.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Mean-kernel function for a kernel/noise pair.
pub fn mean_kernel_fn(
    spec: &KernelSpec,
    noise: &NoiseModel,
    sigma: f64,
    d: usize,
    method: MeanKernelMethod,
) -> Result<Box<dyn MeanKernelFn>> {
    spec.validate()?;
    match (method, spec, noise) {
        (MeanKernelMethod::ClosedForm, KernelSpec::Gaussian { tau }, NoiseModel::Isotropic) => {
            Ok(Box::new(GaussianIsotropicMean { tau: *tau, sigma, d }))
        }
        (MeanKernelMethod::ClosedForm, KernelSpec::Gaussian { tau }, NoiseModel::Radial) => {
            Ok(Box::new(GaussianRadialMean { tau: *tau, sigma, d }))
        }
        (MeanKernelMethod::ClosedForm, KernelSpec::Euclidean, NoiseModel::Isotropic | NoiseModel::Radial) => {
            Ok(Box::new(EuclideanMean { noise: noise.clone(), sigma, d }))
        }
        (MeanKernelMethod::ClosedForm, _, _) => {
            Err(Error::NoClosedForm("no closed form for this kernel and noise model"))
        }
        (MeanKernelMethod::Reduced { samples, seed }, _, _) => {
            Ok(Box::new(ReducedMcMean::new(*spec, noise, sigma, d, samples, seed)?))
        }
        (MeanKernelMethod::MonteCarlo { .. }, _, _) => {
            Err(Error::NoClosedForm("full Monte Carlo is not a geometry function; use mean_kernel_matrix"))
        }
    }
}

/// Norms of every signal and squared distances of every pair.
pub fn pair_geometries(mu: &DataMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let norms = mu.columns().map(norm).collect();
    (norms, kernels::sq_dist_matrix(mu))
}

/// Matrix of `K~(mu_i, mu_j)` for all pairs, including `i = j` with
/// independent noise on the two copies.
pub fn mean_function_matrix(f: &dyn MeanKernelFn, mu: &DataMatrix) -> DMatrix<f64> {
    let (norms, sq) = pair_geometries(mu);
    mean_function_matrix_from_geometry(f, &norms, &sq)
}

/// [`mean_function_matrix`] from precomputed [`pair_geometries`].
pub fn mean_function_matrix_from_geometry(f: &dyn MeanKernelFn, norms: &[f64], sq: &DMatrix<f64>) -> DMatrix<f64> {
    kernels::symmetric_from_pairs(norms.len(), |i, j| {
        f.pair(&PairGeometry { norm_u: norms[i], norm_v: norms[j], sq_dist: sq[(i, j)] })
    })
}

/// The mean kernel matrix `E K(X)`: off-diagonal `K~(mu_i, mu_j)`, diagonal
/// `E K(X_i, X_i)`.
pub fn mean_kernel_matrix(
    spec: &KernelSpec,
    noise: &NoiseModel,
    mu: &DataMatrix,
    sigma: f64,
    method: MeanKernelMethod,
) -> Result<DMatrix<f64>> {
    if let MeanKernelMethod::MonteCarlo { samples, seed } = method {
        return mc_mean_kernel_matrix(spec, noise, mu, sigma, samples, seed);
    }
    let f = mean_kernel_fn(spec, noise, sigma, mu.dim(), method)?;
    let mut m = mean_function_matrix(f.as_ref(), mu);
    for i in 0..mu.len() {
        m[(i, i)] = f.same_point(norm(mu.column(i)));
    }
    Ok(m)
}

fn mc_mean_kernel_matrix(
    spec: &KernelSpec,
    noise: &NoiseModel,
    mu: &DataMatrix,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = mu.len();
    let entries = par::map_range(n * n, |idx| {
        let (i, j) = (idx / n, idx % n);
        if j < i {
            return Ok(0.0);
        }
        let mut r = rng::substream(seed, idx as u64);
        if i == j {
            // both arguments share one noise draw
            if samples < 1000 {
                return Err(invalid("n_samples", "need at least 1000 draws"));
            }
            let u = mu.column(i);
            let mut x = u.to_vec();
            Ok(McEstimate::from_values((0..samples).map(|_| {
                noise.perturb_into(sigma, u, &mut r, &mut x);
                spec.eval_unchecked(&x, &x)
            }))
            .estimate)
        } else {
            mc_mean_kernel(spec, noise, mu.column(i), mu.column(j), sigma, samples, &mut r).map(|e| e.estimate)
        }
    });
    let mut m = DMatrix::zeros(n, n);
    for (idx, e) in entries.into_iter().enumerate() {
        let (i, j) = (idx / n, idx % n);
        if j >= i {
            let v = e?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// How [`psi_d`] is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PsiMethod {
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `psi_d(u) = E exp(u <theta, theta'>)` for independent uniform unit vectors.
pub fn psi_d(u: f64, d: usize, method: PsiMethod) -> Result<f64> {
    match method {
        PsiMethod::Quadrature => psi_d_quadrature(u, d),
        PsiMethod::MonteCarlo { samples, seed } => {
            psi_d_mc(u, d, samples, &mut rng::stream(seed)).map(|e| e.estimate)
        }
    }
}

/// Quadrature route. `<theta, theta'> = 2U - 1` with
/// `U ~ Beta((d-1)/2, (d-1)/2)`; substituting `U = sin^2(w/2)` turns the
/// Beta integral into `int_0^pi exp(u cos w) sin^{d-2} w dw`, normalized,
/// which is smooth at the endpoints for every `d >= 2`.
pub fn psi_d_quadrature(u: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(invalid("d", "psi_d needs d >= 2"));
    }
    if u == 0.0 {
        return Ok(1.0);
    }
    let p = (d - 2) as f64;
    let log_weight = move |w: f64| if p == 0.0 { 0.0 } else { p * w.sin().ln() };
    // mode of u cos w + p ln sin w
    let c = if p == 0.0 {
        u.signum()
    } else {
        (-p + (p * p + 4.0 * u * u).sqrt()) / (2.0 * u)
    };
    let mode = c.clamp(-1.0, 1.0).acos();
    let peak = u * c + log_weight(mode);
    let width = 1.0 / (p + u.abs()).max(1.0).sqrt();
    let breaks = |centre: f64| -> Vec<f64> {
        let mut b: Vec<f64> = (-12..=12).map(|k| centre + k as f64 * width).collect();
        b.retain(|x| *x > 0.0 && *x < core::f64::consts::PI);
        b
    };
    let pi = core::f64::consts::PI;
    let num = quad::integrate(|w| (u * w.cos() + log_weight(w) - peak).exp(), 0.0, pi, &breaks(mode), 1e-10);
    let den = quad::integrate(|w| log_weight(w).exp(), 0.0, pi, &breaks(0.5 * pi), 1e-10);
    Ok(peak.exp() * num / den)
}

/// Monte Carlo route through explicit sphere draws.
pub fn psi_d_mc<R: Rng + ?Sized>(u: f64, d: usize, samples: usize, rng: &mut R) -> Result<McEstimate> {
    if d < 2 {
        return Err(invalid("d", "psi_d needs d >= 2"));
    }
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = sample_unit_sphere(d, rng)?;
        let b = sample_unit_sphere(d, rng)?;
        values.push((u * kernels::dot(&a, &b)).exp());
    }
    Ok(McEstimate::from_values(values))
}

/// The normal approximation `exp(u^2 / (4d))` stated for `u << d`.
pub fn psi_d_approx(u: f64, d: usize) -> f64 {
    (u * u / (4.0 * d as f64)).exp()
}

/// `exp(u^2 / (2d))`: the Gaussian approximation that matches the exact
/// variance `1/d` of `<theta, theta'>`.
pub fn psi_d_variance_matched(u: f64, d: usize) -> f64 {
    (u * u / (2.0 * d as f64)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;

    #[test]
    fn kt_1d_values() {
        assert!((kt_1d(0.0, 1.0) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((kt_1d(2.0, 0.0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kt_1d_against_monte_carlo() {
        let (m, t) = (1.0, 0.5);
        let mut r = stream(1);
        let est = McEstimate::from_values((0..1_000_000).map(|_| {
            let w: f64 = r.sample(StandardNormal);
            (-(m + t * w) * (m + t * w) / 2.0).exp()
        }));
        assert!(est.agrees_with(kt_1d(m, t), 4.0));
    }

    #[test]
    fn isotropic_noiseless_is_plain_gaussian() {
        let p = MeanKernelParams::new(1.3, 0.0, 3).unwrap();
        let (u, v) = ([1.0, 0.0, 2.0], [0.5, -1.0, 0.0]);
        let k = KernelSpec::gaussian(1.3).unwrap().eval(&u, &v).unwrap();
        let m = mean_gauss_isotropic(&u, &v, 0.0, 0.0, &p).unwrap();
        assert!((k - m).abs() < 1e-15);
    }

    #[test]
    fn isotropic_zero_separation_prefactor() {
        let (tau, sigma, d) = (1.0, 1.5, 20usize);
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        let u = vec![0.3; d];
        let s2 = 1.0 + 2.0 * sigma * sigma / (d as f64 * tau * tau);
        let expect = s2.powf(-(d as f64) / 2.0);
        assert!((mean_gauss_isotropic(&u, &u, sigma, sigma, &p).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn isotropic_errors() {
        let bad = MeanKernelParams { tau: 0.0, sigma: 1.0, d: 2, per_point_sigmas: None };
        assert!(mean_gauss_isotropic(&[0.0, 0.0], &[1.0, 0.0], 1.0, 1.0, &bad).is_err());
        let p = MeanKernelParams::new(1.0, 1.0, 2).unwrap();
        assert!(mean_gauss_isotropic(&[0.0, 0.0], &[1.0], 1.0, 1.0, &p).is_err());
    }

    #[test]
    fn per_point_sigma_lookup() {
        let mut p = MeanKernelParams::new(1.0, 0.5, 4).unwrap();
        assert_eq!(p.sigma_of(3), 0.5);
        p.per_point_sigmas = Some(vec![0.1, 0.2]);
        assert_eq!(p.sigma_of(1), 0.2);
    }

    #[test]
    fn isotropic_factorizes_into_one_dimensional_terms() {
        let mut r = stream(2);
        for _ in 0..20 {
            let d = r.random_range(1..12usize);
            let tau = r.random_range(0.3..3.0);
            let (si, sj) = (r.random_range(0.0..2.0), r.random_range(0.0..2.0));
            let u: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let p = MeanKernelParams::new(tau, 0.0, d).unwrap();
            let closed = mean_gauss_isotropic(&u, &v, si, sj, &p).unwrap();
            // per coordinate: m_k = (u_k - v_k)/tau, t = sigma_ij / (tau sqrt d)
            let t = ((si * si + sj * sj) / d as f64).sqrt() / tau;
            let prod: f64 = u.iter().zip(&v).map(|(a, b)| kt_1d((a - b) / tau, t)).product();
            assert!((closed - prod).abs() <= 1e-10 * prod.max(1e-300), "{closed} vs {prod}");
        }
    }

    #[test]
    fn isotropic_strictly_decreasing_in_sigma() {
        let p = MeanKernelParams::new(1.0, 0.0, 10).unwrap();
        let u = vec![0.2; 10];
        let v = vec![-0.1; 10];
        let vals: Vec<f64> = (0..40)
            .map(|k| mean_gauss_isotropic(&u, &v, k as f64 * 0.1, k as f64 * 0.1, &p).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn prefactor_limit() {
        for d in [100usize, 1000, 10_000, 100_000] {
            let s2 = 1.0 + 2.0 / d as f64;
            let pref = gauss_isotropic_from_sq(0.0, 1.0, 1.0, 1.0, d);
            assert!((pref - s2.powf(-(d as f64) / 2.0)).abs() < 1e-10);
            assert!((pref - (-1.0f64).exp()).abs() <= 10.0 / d as f64);
        }
    }

    #[test]
    fn isotropic_no_underflow_at_huge_d() {
        let v = gauss_isotropic_from_sq(0.0, 1.0, 1.0, 1.0, 1_000_000_000);
        assert!((v - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn radial_noiseless_reduces_to_gaussian() {
        let mut r = stream(3);
        let tau = 1.7;
        let spec = KernelSpec::gaussian(tau).unwrap();
        let p = MeanKernelParams::new(tau, 0.0, 5).unwrap();
        for _ in 0..50 {
            let u: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
            let closed = mean_gauss_radial(&u, &v, &p).unwrap();
            let direct = spec.eval(&u, &v).unwrap();
            assert!((closed - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn radial_domain_edges() {
        let p = MeanKernelParams::new(1.0, 1.0, 2).unwrap();
        assert!(matches!(mean_gauss_radial(&[1.0, 0.0], &[0.0, 2.0], &p), Err(Error::OutsideDomain(_))));
        assert!(matches!(mean_gauss_radial(&[1.0, 0.0], &[1.0, 0.0], &p), Err(Error::OutsideDomain(_))));
        assert!(matches!(mean_gauss_radial(&[0.0, 0.0], &[1.0, 0.0], &p), Err(Error::OutsideDomain(_))));
        let (v, fell_back) = mean_gauss_radial_or_mc(&[1.0, 0.0], &[0.0, 2.0], &p).unwrap();
        assert!(fell_back);
        assert!(v > 0.0 && v < 1.0);
        // deterministic fallback
        assert_eq!(v, mean_gauss_radial_or_mc(&[1.0, 0.0], &[0.0, 2.0], &p).unwrap().0);
    }

    #[test]
    fn radial_fallback_agrees_with_full_oracle_at_orthogonal_pair() {
        let (tau, sigma, d) = (1.0, 1.5, 4);
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        let u = [1.0, 0.0, 0.0, 0.0];
        let v = [0.0, 2.0, 0.0, 0.0];
        let (fb, _) = mean_gauss_radial_or_mc(&u, &v, &p).unwrap();
        let spec = KernelSpec::gaussian(tau).unwrap();
        let oracle = mc_mean_kernel(&spec, &NoiseModel::Radial, &u, &v, sigma, 200_000, &mut stream(4)).unwrap();
        // fallback has its own MC error of comparable size
        assert!((fb - oracle.estimate).abs() <= 4.0 * oracle.stderr * 2f64.sqrt());
    }

    #[test]
    fn radial_large_d_limit() {
        let (tau, sigma, d) = (1.2, 1.5, 1_000_000);
        let mut r = stream(5);
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        for _ in 0..10 {
            let (nu, nv) = (r.random_range(0.5..5.0), r.random_range(0.5..5.0));
            let alpha: f64 = r.random_range(0.05..0.95);
            let closed = gauss_radial_from_geometry(nu, nv, alpha, p.tau, p.sigma, p.d);
            let (l1, l2) = (1.0 + alpha, 1.0 - alpha);
            let limit = (-(nu - nv).powi(2) * l1 / (4.0 * tau * tau) - (nu + nv).powi(2) * l2 / (4.0 * tau * tau)).exp();
            assert!((closed - limit).abs() < 1e-3);
        }
    }

    #[test]
    fn mc_oracle_noiseless_is_exact() {
        let spec = KernelSpec::PairDist;
        let e = mc_mean_kernel(&spec, &NoiseModel::Isotropic, &[0.0, 0.0], &[3.0, 4.0], 0.0, 1000, &mut stream(6)).unwrap();
        assert_eq!(e.estimate, 5.0);
        assert_eq!(e.stderr, 0.0);
        assert!(mc_mean_kernel(&spec, &NoiseModel::Isotropic, &[0.0], &[1.0], 1.0, 10, &mut stream(6)).is_err());
    }

    #[test]
    fn mc_oracle_matches_isotropic_closed_form() {
        let (tau, sigma, d) = (1.0, 1.5, 20);
        let mut r = stream(7);
        let u: Vec<f64> = (0..d).map(|_| r.random_range(-0.5..0.5)).collect();
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-0.5..0.5)).collect();
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        let closed = mean_gauss_isotropic(&u, &v, sigma, sigma, &p).unwrap();
        let spec = KernelSpec::gaussian(tau).unwrap();
        let mc = mc_mean_kernel(&spec, &NoiseModel::Isotropic, &u, &v, sigma, 100_000, &mut r).unwrap();
        assert!(mc.agrees_with(closed, 4.0), "{closed} vs {mc:?}");
    }

    #[test]
    fn mc_oracle_matches_radial_closed_form_on_spheres() {
        let (tau, sigma, d) = (2.0, 1.5, 100);
        let mut r = stream(8);
        let spec = KernelSpec::gaussian(tau).unwrap();
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        for (rk, rl) in [(1.0, 5.0), (5.0, 5.0), (1.0, 1.0)] {
            let u: Vec<f64> = sample_unit_sphere(d, &mut r).unwrap().iter().map(|x| x * rk).collect();
            let v: Vec<f64> = sample_unit_sphere(d, &mut r).unwrap().iter().map(|x| x * rl).collect();
            let closed = mean_gauss_radial(&u, &v, &p).unwrap();
            let mc = mc_mean_kernel(&spec, &NoiseModel::Radial, &u, &v, sigma, 100_000, &mut r).unwrap();
            assert!(mc.agrees_with(closed, 4.0), "{closed} vs {mc:?}");
        }
    }

    #[test]
    fn pair_dist_two_seed_self_consistency() {
        let d = 400;
        let u = vec![0.05; d];
        let sigma = 1.5;
        let a = mc_mean_kernel(&KernelSpec::PairDist, &NoiseModel::Isotropic, &u, &u, sigma, 5000, &mut stream(9)).unwrap();
        let b = mc_mean_kernel(&KernelSpec::PairDist, &NoiseModel::Isotropic, &u, &u, sigma, 5000, &mut stream(10)).unwrap();
        let joint = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!((a.estimate - b.estimate).abs() <= 4.0 * joint);
        // |n| with n ~ N(0, 2 sigma^2 / d I_d) concentrates at sqrt(2) sigma
        assert!((a.estimate - 2f64.sqrt() * sigma).abs() < 0.05);
    }

    #[test]
    fn reduced_mc_matches_full_oracle() {
        let mut r = stream(11);
        let d = 30;
        let sigma = 1.5;
        for noise in [NoiseModel::Isotropic, NoiseModel::Radial] {
            for spec in [KernelSpec::PairDist, KernelSpec::gaussian(1.5).unwrap()] {
                let u: Vec<f64> = sample_unit_sphere(d, &mut r).unwrap().iter().map(|x| x * 2.0).collect();
                let v: Vec<f64> = sample_unit_sphere(d, &mut r).unwrap().iter().map(|x| x * 3.0).collect();
                let reduced = ReducedMcMean::new(spec, &noise, sigma, d, 50_000, 12).unwrap();
                let red = reduced.estimate(&PairGeometry::new(&u, &v));
                let full = mc_mean_kernel(&spec, &noise, &u, &v, sigma, 50_000, &mut r).unwrap();
                let joint = (red.stderr.powi(2) + full.stderr.powi(2)).sqrt();
                assert!((red.estimate - full.estimate).abs() <= 4.0 * joint, "{noise:?} {spec:?}: {red:?} {full:?}");
            }
        }
    }

    #[test]
    fn reduced_mc_gaussian_matches_closed_forms() {
        let (tau, sigma, d) = (1.8, 1.5, 50);
        let g = PairGeometry { norm_u: 1.0, norm_v: 5.0, sq_dist: 24.0 };
        let spec = KernelSpec::gaussian(tau).unwrap();
        let iso = ReducedMcMean::new(spec, &NoiseModel::Isotropic, sigma, d, 200_000, 1).unwrap().estimate(&g);
        assert!(iso.agrees_with(GaussianIsotropicMean { tau, sigma, d }.pair(&g), 4.0));
        let rad = ReducedMcMean::new(spec, &NoiseModel::Radial, sigma, d, 200_000, 2).unwrap().estimate(&g);
        assert!(rad.agrees_with(GaussianRadialMean { tau, sigma, d }.pair(&g), 4.0));
    }

    #[test]
    fn psi_d_zero_and_errors() {
        for d in [2, 3, 50, 10_000] {
            assert_eq!(psi_d_quadrature(0.0, d).unwrap(), 1.0);
        }
        assert!(psi_d_quadrature(1.0, 1).is_err());
    }

    #[test]
    fn psi_d_closed_forms_small_d() {
        // d = 3: <theta, theta'> is uniform on [-1, 1], psi = sinh(u)/u
        for u in [0.5, 1.0, 4.0, -2.0] {
            let v = psi_d_quadrature(u, 3).unwrap();
            assert!((v - u.sinh() / u).abs() < 1e-9 * v);
        }
        // d = 2: psi = I_0(u); series check at u = 1
        let i0: f64 = (0..30)
            .map(|k| {
                let f: f64 = (1..=k).map(|j| j as f64).product();
                0.25f64.powi(k) / (f * f)
            })
            .sum();
        assert!((psi_d_quadrature(1.0, 2).unwrap() - i0).abs() < 1e-9);
    }

    #[test]
    fn psi_d_quadrature_vs_monte_carlo() {
        let q = psi_d_quadrature(1.0, 2).unwrap();
        let mc = psi_d_mc(1.0, 2, 1_000_000, &mut stream(13)).unwrap();
        assert!(mc.agrees_with(q, 4.0));
        assert_eq!(psi_d(1.0, 2, PsiMethod::Quadrature).unwrap(), q);
    }

    #[test]
    fn psi_d_large_d_matches_variance_matched_gaussian() {
        for u in [1.0, 2.0, 3.0, 5.0] {
            let v = psi_d_quadrature(u, 200).unwrap();
            assert!((v - psi_d_variance_matched(u, 200)).abs() <= 0.01 * v);
        }
    }

    #[test]
    fn mean_kernel_matrix_noiseless_equals_kernel_matrix() {
        let mut r = stream(14);
        let cols: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mu = DataMatrix::from_columns(&cols).unwrap();
        let spec = KernelSpec::gaussian(0.8).unwrap();
        let k = kernels::kernel_matrix(&spec, &mu).unwrap();
        for noise in [NoiseModel::Isotropic, NoiseModel::Radial] {
            let m = mean_kernel_matrix(&spec, &noise, &mu, 0.0, MeanKernelMethod::ClosedForm).unwrap();
            assert!((m - &k).abs().max() < 1e-12);
        }
    }

    #[test]
    fn mean_kernel_matrix_isotropic_entries() {
        let mut r = stream(15);
        let (tau, sigma, d) = (1.1, 0.9, 6);
        let cols: Vec<Vec<f64>> = (0..10).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mu = DataMatrix::from_columns(&cols).unwrap();
        let spec = KernelSpec::gaussian(tau).unwrap();
        let m = mean_kernel_matrix(&spec, &NoiseModel::Isotropic, &mu, sigma, MeanKernelMethod::ClosedForm).unwrap();
        let p = MeanKernelParams::new(tau, sigma, d).unwrap();
        for i in 0..10 {
            assert_eq!(m[(i, i)], 1.0);
            for j in 0..10 {
                assert_eq!(m[(i, j)].to_bits(), m[(j, i)].to_bits());
                if i != j {
                    let e = mean_gauss_isotropic(&cols[i], &cols[j], sigma, sigma, &p).unwrap();
                    assert!((m[(i, j)] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unsupported_closed_form_is_an_error() {
        let mu = DataMatrix::from_columns(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            mean_kernel_matrix(&KernelSpec::PairDist, &NoiseModel::Isotropic, &mu, 1.0, MeanKernelMethod::ClosedForm),
            Err(Error::NoClosedForm(_))
        ));
    }

    #[test]
    fn full_mc_matrix_spot_check() {
        let mut r = stream(16);
        let d = 5;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mu = DataMatrix::from_columns(&cols).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let mc = mean_kernel_matrix(&spec, &NoiseModel::Isotropic, &mu, 1.0, MeanKernelMethod::MonteCarlo { samples: 20_000, seed: 3 }).unwrap();
        let cf = mean_kernel_matrix(&spec, &NoiseModel::Isotropic, &mu, 1.0, MeanKernelMethod::ClosedForm).unwrap();
        assert!((mc - cf).abs().max() < 0.01);
    }

    #[test]
    fn euclidean_mean_diagonal() {
        let mu = DataMatrix::from_columns(&[vec![3.0, 4.0], vec![1.0, 0.0]]).unwrap();
        let m = mean_kernel_matrix(&KernelSpec::Euclidean, &NoiseModel::Isotropic, &mu, 2.0, MeanKernelMethod::ClosedForm).unwrap();
        assert!((m[(0, 0)] - 29.0).abs() < 1e-12);
        assert!((m[(0, 1)] - 3.0).abs() < 1e-12);
    }
}
