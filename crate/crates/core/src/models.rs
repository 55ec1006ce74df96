//! Samplers for the noisy nonparametric mixture model
//! `X_i = mu_i + (sigma / sqrt(d)) sqrt(Sigma(mu_i)) w_i`
//! with nested-sphere signals, and for the simpler per-point Gaussian and
//! uniform-coordinate ensembles used in concentration experiments.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::kernels::{norm, DataMatrix};
use crate::rng;

/// The noise covariance map `mu -> Sigma(mu)`.
#[derive(Clone, Debug)]
pub enum NoiseModel {
    /// `Sigma(mu) = I_d`.
    Isotropic,
    /// `Sigma(mu) = mu mu^T / |mu|^2`: a scalar Gaussian along `mu / |mu|`.
    Radial,
    /// `Sigma(mu) = diag(values)`, the same for every point.
    ConstantDiag(Vec<f64>),
    /// Arbitrary square-root map `mu -> sqrt(Sigma(mu))` (a `d x d` matrix).
    General(fn(&[f64]) -> DMatrix<f64>),
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Isotropic => "iso",
            NoiseModel::Radial => "radial",
            NoiseModel::ConstantDiag(_) => "diag",
            NoiseModel::General(_) => "general",
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if let NoiseModel::ConstantDiag(values) = self {
            if values.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: values.len() });
            }
            if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid("diag_values", "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// `|Sigma(mu)|_op`.
    pub fn covariance_op_norm(&self, mu: &[f64]) -> f64 {
        match self {
            NoiseModel::Isotropic => 1.0,
            NoiseModel::Radial => {
                if norm(mu) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseModel::ConstantDiag(values) => values.iter().copied().fold(0.0, f64::max),
            NoiseModel::General(map) => {
                let s = map(mu);
                let sigma = &s * s.transpose();
                sigma
                    .symmetric_eigenvalues()
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// One draw of `mu + (sigma / sqrt(d)) sqrt(Sigma(mu)) w`.
    ///
    /// Radial noise at `mu = 0` has no direction and leaves `mu` unchanged.
    pub fn perturb<R: Rng + ?Sized>(&self, sigma: f64, mu: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = mu.to_vec();
        self.perturb_into(sigma, mu, rng, &mut out);
        out
    }

    pub(crate) fn perturb_into<R: Rng + ?Sized>(
        &self,
        sigma: f64,
        mu: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) {
        let d = mu.len();
        let scale = sigma / (d as f64).sqrt();
        match self {
            NoiseModel::Isotropic => {
                for (o, m) in out.iter_mut().zip(mu) {
                    let w: f64 = rng.sample(StandardNormal);
                    *o = m + scale * w;
                }
            }
            NoiseModel::Radial => {
                let xi: f64 = rng.sample(StandardNormal);
                let r = norm(mu);
                if r > 0.0 {
                    let f = scale * xi / r;
                    for (o, m) in out.iter_mut().zip(mu) {
                        *o = m + f * m;
                    }
                } else {
                    out.copy_from_slice(mu);
                }
            }
            NoiseModel::ConstantDiag(values) => {
                for ((o, m), v) in out.iter_mut().zip(mu).zip(values) {
                    let w: f64 = rng.sample(StandardNormal);
                    *o = m + scale * v.sqrt() * w;
                }
            }
            NoiseModel::General(map) => {
                let s = map(mu);
                let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (c, wc) in w.iter().enumerate() {
                        acc += s[(r, c)] * wc;
                    }
                    *o = mu[r] + scale * acc;
                }
            }
        }
    }
}

/// Nested-spheres mixture with a chosen noise model.
#[derive(Clone, Debug)]
pub struct MixtureConfig {
    pub radii: Vec<f64>,
    pub priors: Vec<f64>,
    pub noise: NoiseModel,
    pub sigma: f64,
    pub d: usize,
    pub n: usize,
}

impl MixtureConfig {
    /// Balanced priors `1/R` over the given radii.
    pub fn nested_spheres(radii: &[f64], noise: NoiseModel, sigma: f64, d: usize, n: usize) -> Result<Self> {
        let r = radii.len().max(1);
        let cfg = Self {
            radii: radii.to_vec(),
            priors: vec![1.0 / r as f64; radii.len()],
            noise,
            sigma,
            d,
            n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_priors(mut self, priors: &[f64]) -> Result<Self> {
        self.priors = priors.to_vec();
        self.validate()?;
        Ok(self)
    }

    pub fn components(&self) -> usize {
        self.radii.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() {
            return Err(Error::Empty("mixture needs at least one radius"));
        }
        if self.d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if self.n == 0 {
            return Err(invalid("n", "sample size must be at least 1"));
        }
        if self.priors.len() != self.radii.len() {
            return Err(Error::DimensionMismatch { expected: self.radii.len(), got: self.priors.len() });
        }
        if self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(invalid("radii", "must be positive and finite"));
        }
        for (i, a) in self.radii.iter().enumerate() {
            if self.radii[i + 1..].contains(a) {
                return Err(invalid("radii", "must be distinct"));
            }
        }
        if self.priors.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(invalid("priors", "must be nonnegative"));
        }
        if (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid("priors", "must sum to one"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be nonnegative and finite"));
        }
        self.noise.validate(self.d)
    }
}

/// Observed points, latent signals and component labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSample {
    pub x: DataMatrix,
    pub mu: DataMatrix,
    pub labels: Vec<usize>,
    /// Seed of the stream that produced the sample, when known.
    pub seed: Option<u64>,
}

/// Uniform draw from the unit sphere `S^{d-1}` (a normalized Gaussian).
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    let mut v = vec![0.0; d];
    fill_unit_sphere(rng, &mut v);
    Ok(v)
}

fn fill_unit_sphere<R: Rng + ?Sized>(rng: &mut R, v: &mut [f64]) {
    loop {
        for x in v.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let r = norm(v);
        // a zero Gaussian vector has probability zero; redraw if it happens
        if r > 0.0 {
            for x in v.iter_mut() {
                *x /= r;
            }
            return;
        }
    }
}

/// Index drawn from a discrete distribution given by `priors`.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(priors: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // round-off: fall back to the last component with positive mass
    priors.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws `n` points from the mixture.
pub fn sample_mixture<R: Rng + ?Sized>(cfg: &MixtureConfig, rng: &mut R) -> Result<MixtureSample> {
    cfg.validate()?;
    let (d, n) = (cfg.d, cfg.n);
    let mut mu = vec![0.0; d * n];
    let mut x = vec![0.0; d * n];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = sample_categorical(&cfg.priors, rng);
        labels.push(k);
        let m = &mut mu[i * d..(i + 1) * d];
        fill_unit_sphere(rng, m);
        for v in m.iter_mut() {
            *v *= cfg.radii[k];
        }
        cfg.noise.perturb_into(cfg.sigma, m, rng, &mut x[i * d..(i + 1) * d]);
    }
    Ok(MixtureSample {
        x: DataMatrix::new(DMatrix::from_vec(d, n, x))?,
        mu: DataMatrix::new(DMatrix::from_vec(d, n, mu))?,
        labels,
        seed: None,
    })
}

/// [`sample_mixture`] on a fresh stream seeded with `seed`.
pub fn sample_mixture_seeded(cfg: &MixtureConfig, seed: u64) -> Result<MixtureSample> {
    let mut s = sample_mixture(cfg, &mut rng::stream(seed))?;
    s.seed = Some(seed);
    Ok(s)
}

/// `mu + sqrt_sigma W` with `W_j` i.i.d. uniform on `[-half_width, half_width]`,
/// so `E W_j^2 = half_width^2 / 3`.
pub fn sample_lc_uniform<R: Rng + ?Sized>(
    mu: &[f64],
    sqrt_sigma: &DMatrix<f64>,
    half_width: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = mu.len();
    if sqrt_sigma.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sqrt_sigma.nrows() });
    }
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(invalid("half_width", "must be positive and finite"));
    }
    let w: Vec<f64> = (0..sqrt_sigma.ncols())
        .map(|_| rng.random_range(-half_width..=half_width))
        .collect();
    let mut out = mu.to_vec();
    for (r, o) in out.iter_mut().enumerate() {
        for (c, wc) in w.iter().enumerate() {
            *o += sqrt_sigma[(r, c)] * wc;
        }
    }
    Ok(out)
}

/// Per-point Gaussian model `X_i = mu_i + (sigma_i / sqrt(d)) w_i`.
pub fn sample_gaussian_model<R: Rng + ?Sized>(
    mu: &DataMatrix,
    sigmas: &[f64],
    rng: &mut R,
) -> Result<DataMatrix> {
    if sigmas.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: sigmas.len() });
    }
    let d = mu.dim();
    let mut x = mu.as_matrix().clone();
    let sd = (d as f64).sqrt();
    for (i, s) in sigmas.iter().enumerate() {
        let scale = s / sd;
        for r in 0..d {
            let w: f64 = rng.sample(StandardNormal);
            x[(r, i)] += scale * w;
        }
    }
    DataMatrix::new(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn unit_sphere_d1_is_fair_coin() {
        let mut rng = stream(1);
        let n = 10_000;
        let plus = (0..n)
            .filter(|_| sample_unit_sphere(1, &mut rng).unwrap()[0] == 1.0)
            .count();
        let p = plus as f64 / n as f64;
        assert!((p - 0.5).abs() <= 3.0 * (0.25f64 / n as f64).sqrt());
    }

    #[test]
    fn unit_sphere_norm_and_zero_dim() {
        let mut rng = stream(2);
        for d in [1, 2, 7, 300] {
            let v = sample_unit_sphere(d, &mut rng).unwrap();
            assert!((norm(&v) - 1.0).abs() < 1e-12);
        }
        assert!(sample_unit_sphere(0, &mut rng).is_err());
    }

    #[test]
    fn unit_sphere_d3_coordinate_means() {
        let mut rng = stream(3);
        let mut sums = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            let v = sample_unit_sphere(3, &mut rng).unwrap();
            for k in 0..3 {
                sums[k] += v[k];
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn unit_sphere_d2_independent_inner_products() {
        let mut rng = stream(4);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let a = sample_unit_sphere(2, &mut rng).unwrap();
            let b = sample_unit_sphere(2, &mut rng).unwrap();
            acc += a[0] * b[0] + a[1] * b[1];
        }
        assert!((acc / n as f64).abs() < 0.02);
    }

    #[test]
    fn noiseless_mixture_observes_signal() {
        let cfg = MixtureConfig::nested_spheres(&[1.0, 5.0, 10.0], NoiseModel::Isotropic, 0.0, 6, 40).unwrap();
        let s = sample_mixture(&cfg, &mut stream(5)).unwrap();
        assert_eq!(s.x, s.mu);
    }

    #[test]
    fn signal_norms_match_radii() {
        let radii = [1.0, 5.0, 10.0];
        let cfg = MixtureConfig::nested_spheres(&radii, NoiseModel::Radial, 1.5, 9, 100).unwrap();
        let s = sample_mixture(&cfg, &mut stream(6)).unwrap();
        for (i, m) in s.mu.columns().enumerate() {
            let r = radii[s.labels[i]];
            assert!((norm(m) - r).abs() <= 1e-9 * r);
        }
    }

    #[test]
    fn radial_noise_is_parallel_to_signal() {
        let cfg = MixtureConfig::nested_spheres(&[1.0, 5.0, 10.0], NoiseModel::Radial, 1.5, 25, 200).unwrap();
        let s = sample_mixture(&cfg, &mut stream(7)).unwrap();
        for i in 0..cfg.n {
            let m = s.mu.column(i);
            let x = s.x.column(i);
            let r = norm(m);
            let e: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
            let along = crate::kernels::dot(&e, m) / r;
            let perp: f64 = e
                .iter()
                .zip(m)
                .map(|(ek, mk)| {
                    let t = ek - along * mk / r;
                    t * t
                })
                .sum::<f64>()
                .sqrt();
            assert!(perp <= 1e-9);
        }
    }

    #[test]
    fn radial_norm_reconstruction() {
        // |X_i| = |r + (sigma/sqrt d) xi| with xi recovered from the draw
        let sigma = 1.5;
        let d = 16;
        let cfg = MixtureConfig::nested_spheres(&[1.0, 5.0, 10.0], NoiseModel::Radial, sigma, d, 300).unwrap();
        let s = sample_mixture(&cfg, &mut stream(8)).unwrap();
        for i in 0..cfg.n {
            let m = s.mu.column(i);
            let r = norm(m);
            let e: Vec<f64> = s.x.column(i).iter().zip(m).map(|(a, b)| a - b).collect();
            let xi = crate::kernels::dot(&e, m) / r / (sigma / (d as f64).sqrt());
            let expect = (r + sigma / (d as f64).sqrt() * xi).abs();
            assert!((norm(s.x.column(i)) - expect).abs() <= 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn isotropic_noise_energy() {
        let (d, sigma, n) = (10_000, 1.5, 1000);
        let cfg = MixtureConfig::nested_spheres(&[1.0], NoiseModel::Isotropic, sigma, d, n).unwrap();
        let s = sample_mixture(&cfg, &mut stream(9)).unwrap();
        let e: Vec<f64> = (0..n)
            .map(|i| crate::kernels::sq_dist(s.x.column(i), s.mu.column(i)))
            .collect();
        let mean = e.iter().sum::<f64>() / n as f64;
        let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - sigma * sigma).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn label_frequencies_follow_priors() {
        let priors = [0.2, 0.5, 0.3];
        let n = 10_000;
        let cfg = MixtureConfig::nested_spheres(&[1.0, 2.0, 3.0], NoiseModel::Isotropic, 1.0, 2, n)
            .unwrap()
            .with_priors(&priors)
            .unwrap();
        let s = sample_mixture(&cfg, &mut stream(10)).unwrap();
        for (k, p) in priors.iter().enumerate() {
            let f = s.labels.iter().filter(|l| **l == k).count() as f64 / n as f64;
            assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let cfg = MixtureConfig::nested_spheres(&[1.0, 5.0], NoiseModel::Isotropic, 1.5, 30, 50).unwrap();
        let a = sample_mixture_seeded(&cfg, 42).unwrap();
        let b = sample_mixture_seeded(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, Some(42));
        assert_ne!(a, sample_mixture_seeded(&cfg, 43).unwrap());
    }

    #[test]
    fn config_validation() {
        let iso = NoiseModel::Isotropic;
        assert!(MixtureConfig::nested_spheres(&[1.0, 1.0], iso.clone(), 1.0, 2, 5).is_err());
        assert!(MixtureConfig::nested_spheres(&[0.0, 1.0], iso.clone(), 1.0, 2, 5).is_err());
        assert!(MixtureConfig::nested_spheres(&[1.0], iso.clone(), -1.0, 2, 5).is_err());
        assert!(MixtureConfig::nested_spheres(&[1.0], iso.clone(), 1.0, 0, 5).is_err());
        let cfg = MixtureConfig::nested_spheres(&[1.0, 2.0], iso, 1.0, 2, 5).unwrap();
        assert!(cfg.clone().with_priors(&[0.5, 0.6]).is_err());
        let diag = NoiseModel::ConstantDiag(vec![1.0; 3]);
        assert!(MixtureConfig::nested_spheres(&[1.0], diag, 1.0, 2, 5).is_err());
    }

    #[test]
    fn constant_diag_scales_coordinates() {
        let d = 2;
        let noise = NoiseModel::ConstantDiag(vec![4.0, 0.25]);
        let mut rng = stream(11);
        let n = 50_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let x = noise.perturb(1.0, &[0.0, 0.0], &mut rng);
            acc[0] += x[0] * x[0];
            acc[1] += x[1] * x[1];
        }
        // Var = diag / d
        assert!((acc[0] / n as f64 - 4.0 / d as f64).abs() < 0.05);
        assert!((acc[1] / n as f64 - 0.25 / d as f64).abs() < 0.01);
        assert_eq!(noise.covariance_op_norm(&[1.0, 0.0]), 4.0);
    }

    #[test]
    fn uniform_lc_variance() {
        let mut rng = stream(12);
        let eye = DMatrix::identity(1, 1);
        let n = 100_000;
        let h = 3f64.sqrt();
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_lc_uniform(&[0.0], &eye, h, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.02);
        assert!(mean.abs() <= 3.0 * (1.0 / n as f64).sqrt());
    }

    #[test]
    fn uniform_lc_degenerate_and_errors() {
        let mut rng = stream(13);
        let mu = [1.0, -2.0];
        assert_eq!(sample_lc_uniform(&mu, &DMatrix::zeros(2, 2), 1.0, &mut rng).unwrap(), mu.to_vec());
        assert!(sample_lc_uniform(&mu, &DMatrix::zeros(3, 3), 1.0, &mut rng).is_err());
    }
}
