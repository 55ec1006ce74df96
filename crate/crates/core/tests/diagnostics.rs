use ksc_core::diagnostics::trials::{
    euclidean_deviation, frobenius_check, hw_chaos_trial, lower_bound_trials, variance_check,
};
use ksc_core::diagnostics::{euclidean_bound, operator_norm};
use ksc_core::kernels::{DataMatrix, KernelSpec};
use ksc_core::meankernel::{mc_mean_kernel, mean_kernel_matrix, MeanKernelMethod};
use ksc_core::models::{sample_mixture, MixtureConfig, NoiseModel};
use ksc_core::rng::stream;
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn radial_mean_matrix_spot_check_against_oracle() {
    let (tau, sigma, d) = (2.0, 1.5, 100);
    let cfg = MixtureConfig::nested_spheres(&[1.0, 5.0, 10.0], NoiseModel::Radial, sigma, d, 40).unwrap();
    let mut r = stream(1);
    let s = sample_mixture(&cfg, &mut r).unwrap();
    let spec = KernelSpec::gaussian(tau).unwrap();
    let m = mean_kernel_matrix(&spec, &NoiseModel::Radial, &s.mu, sigma, MeanKernelMethod::ClosedForm).unwrap();
    let mut checked = 0;
    while checked < 20 {
        let (i, j) = (r.random_range(0..40), r.random_range(0..40));
        if i == j {
            continue;
        }
        let est = mc_mean_kernel(&spec, &NoiseModel::Radial, s.mu.column(i), s.mu.column(j), sigma, 100_000, &mut r).unwrap();
        assert!(est.agrees_with(m[(i, j)], 4.0), "({i},{j}) closed {} vs {est:?}", m[(i, j)]);
        checked += 1;
    }
}

#[test]
fn variance_bound_examples() {
    let mut r = stream(2);
    let d = 20;
    let mu1: Vec<f64> = (0..d).map(|_| r.random_range(-0.3..0.3)).collect();
    let mu2: Vec<f64> = (0..d).map(|_| r.random_range(-0.3..0.3)).collect();
    let g = variance_check(&KernelSpec::gaussian(1.0).unwrap(), &mu1, &mu2, 0.5, 50_000, &mut r).unwrap();
    assert!(g.passes, "{g:?}");
    let l = 2f64.sqrt() / std::f64::consts::E;
    assert!((g.bound - 8.0 * l * l * 0.25).abs() < 1e-15);
    let p = variance_check(&KernelSpec::PairDist, &mu1, &mu2, 1.0, 50_000, &mut r).unwrap();
    assert_eq!(p.bound, 8.0);
    assert!(p.passes, "{p:?}");
}

#[test]
fn frobenius_deviation_bound() {
    let mut r = stream(3);
    let (n, d, sigma_inf, tau) = (30, 10, 0.4, 1.0);
    let mu = DataMatrix::new(DMatrix::from_fn(d, n, |_, _| r.random_range(-0.5..0.5))).unwrap();
    let spec = KernelSpec::gaussian(tau).unwrap();
    let sigma = sigma_inf * (d as f64).sqrt();
    let mean = mean_kernel_matrix(&spec, &NoiseModel::Isotropic, &mu, sigma, MeanKernelMethod::ClosedForm).unwrap();
    let (est, bound) = frobenius_check(&spec, &mu, sigma_inf, &mean, 2000, 4).unwrap();
    assert!(est.estimate <= bound + 4.0 * est.stderr, "{est:?} vs {bound}");
}

#[test]
fn euclidean_scaling_law() {
    let grid = [(50, 50), (100, 400), (400, 100)];
    let ratios: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, &(n, d))| {
            let est = euclidean_deviation(n, d, 20, 10 + k as u64).unwrap();
            est.estimate / euclidean_bound(1.0, 1.0, n, d, 0.0)
        })
        .collect();
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min <= 5.0, "{ratios:?}");
}

#[test]
fn euclidean_bound_small_noise_is_signal_dominated() {
    let m = 7.0;
    let b = euclidean_bound(1.0, 1e-8, 64, 64, m);
    assert!((b - 1e-8 * 8.0 * m).abs() <= 1e-3 * b);
}

#[test]
fn chaos_chi_square_variance() {
    let n = 30;
    let a = DMatrix::identity(n, n);
    let mu = DMatrix::zeros(1, n);
    let rep = hw_chaos_trial(&a, &mu, 1.0, 40_000, &mut stream(5)).unwrap();
    assert_eq!(rep.mean, n as f64);
    assert!((rep.variance - 2.0 * n as f64).abs() <= 4.0 * rep.variance_stderr, "{rep:?}");
}

#[test]
fn chaos_tail_is_sub_exponential() {
    let mut r = stream(6);
    let (n, d) = (20, 5);
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let mu = DMatrix::from_fn(d, n, |_, _| r.random_range(-1.0..1.0));
    let rep = hw_chaos_trial(&a, &mu, 1.0, 20_000, &mut r).unwrap();
    assert!(rep.c_fit > 0.0 && rep.c_fit.is_finite(), "{rep:?}");
    assert!(rep.frobenius_term > 0.0 && rep.signal_term > 0.0);
    assert!((rep.op_norm - operator_norm(&a).unwrap()).abs() < 1e-12);
}

#[test]
fn lower_bound_rate() {
    let reps = lower_bound_trials(1.0, 1.0, 64, 200, 7).unwrap();
    let rate = reps.iter().filter(|r| r.violated).count() as f64 / 200.0;
    assert!(rate >= 0.95, "{rate}");
}

#[test]
fn pair_dist_mean_matrix_by_full_monte_carlo() {
    let mu = DataMatrix::from_columns(&[vec![0.0, 0.0, 0.0], vec![3.0, 4.0, 0.0]]).unwrap();
    let m = mean_kernel_matrix(&KernelSpec::PairDist, &NoiseModel::Isotropic, &mu, 0.0, MeanKernelMethod::MonteCarlo { samples: 1000, seed: 1 }).unwrap();
    assert_eq!(m[(0, 1)], 5.0);
    assert_eq!(m[(0, 0)], 0.0);
}
