//! Kernel functions and kernel-matrix assembly.
//!
//! A kernel is any map `K: R^d x R^d -> R`; no positive semidefiniteness is
//! assumed. The built-in kernels are the Gaussian kernel, the pairwise
//! distance kernel, the Euclidean (inner product) kernel and a one-dimensional
//! clamped product kernel used for lower-bound experiments.

use core::fmt;

use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::par;

/// A `d x n` data matrix whose columns are the points `X_1, ..., X_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 {
            return Err(Error::Empty("data matrix has no rows"));
        }
        if entries.ncols() == 0 {
            return Err(Error::Empty("data matrix has no columns"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(entries))
    }

    /// Builds a matrix from `n` points of equal length `d`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let d = columns.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(d * columns.len());
        for c in columns {
            if c.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.len() });
            }
            flat.extend_from_slice(c);
        }
        Self::new(DMatrix::from_vec(d, columns.len(), flat))
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Number of points `n`.
    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    /// Point `i` as a contiguous slice.
    pub fn column(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.0.as_slice()[i * d..(i + 1) * d]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.0.as_slice().chunks_exact(self.dim())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Same points with columns reordered: column `j` of the result is column
    /// `order[j]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let d = self.dim();
        let mut flat = Vec::with_capacity(d * order.len());
        for &j in order {
            flat.extend_from_slice(self.column(j));
        }
        Self(DMatrix::from_vec(d, order.len(), flat))
    }
}

/// A caller-supplied kernel. Its Lipschitz constant is taken on trust.
#[derive(Clone, Copy)]
pub struct CustomKernel {
    pub name: &'static str,
    pub eval: fn(&[f64], &[f64]) -> f64,
    pub lipschitz: Option<f64>,
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Description of a kernel function and its parameters.
#[derive(Clone, Copy, Debug)]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 tau^2))`.
    Gaussian { tau: f64 },
    /// `|x - y|`.
    PairDist,
    /// `<x, y>`.
    Euclidean,
    /// `phi(x) phi(y)` on the real line, `phi` the clamp of slope
    /// `sqrt(L / sigma)` saturating at `+-sqrt(L sigma)`.
    ProductThreshold { lipschitz: f64, sigma: f64 },
    Custom(CustomKernel),
}

impl KernelSpec {
    pub fn gaussian(tau: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { tau };
        spec.validate()?;
        Ok(spec)
    }

    pub fn product_threshold(lipschitz: f64, sigma: f64) -> Result<Self> {
        let spec = KernelSpec::ProductThreshold { lipschitz, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(invalid("tau", "bandwidth must be positive and finite"))
            }
            KernelSpec::ProductThreshold { lipschitz, sigma } => {
                if !(lipschitz > 0.0 && lipschitz.is_finite()) {
                    Err(invalid("lipschitz", "must be positive and finite"))
                } else if !(sigma > 0.0 && sigma.is_finite()) {
                    Err(invalid("sigma", "must be positive and finite"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short identifier used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gauss",
            KernelSpec::PairDist => "pairdist",
            KernelSpec::Euclidean => "euclidean",
            KernelSpec::ProductThreshold { .. } => "prodthresh",
            KernelSpec::Custom(c) => c.name,
        }
    }

    /// Lipschitz constant `L` in `|K(x1,x2) - K(y1,y2)| <= L(|x1-y1| + |x2-y2|)`.
    ///
    /// `None` for the Euclidean kernel, which is not Lipschitz on `R^d`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match *self {
            // sup |f'| for f(t) = exp(-t^2 / 2 tau^2), attained at t = tau
            KernelSpec::Gaussian { tau } => Some(core::f64::consts::SQRT_2 / (core::f64::consts::E * tau)),
            KernelSpec::PairDist => Some(1.0),
            KernelSpec::Euclidean => None,
            KernelSpec::ProductThreshold { lipschitz, .. } => Some(lipschitz),
            KernelSpec::Custom(c) => c.lipschitz,
        }
    }

    /// True for kernels of the form `f(|x - y|)`.
    pub fn is_distance_kernel(&self) -> bool {
        matches!(self, KernelSpec::Gaussian { .. } | KernelSpec::PairDist)
    }

    /// `f(sqrt(sq))` for distance kernels, given the squared distance.
    pub fn from_sq_dist(&self, sq: f64) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { tau } => Some((-sq / (2.0 * tau * tau)).exp()),
            KernelSpec::PairDist => Some(sq.sqrt()),
            _ => None,
        }
    }

    /// Evaluates `K(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if matches!(self, KernelSpec::ProductThreshold { .. }) && x.len() != 1 {
            return Err(invalid("d", "product_threshold kernel is one-dimensional"));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { .. } | KernelSpec::PairDist => {
                self.from_sq_dist(sq_dist(x, y)).unwrap_or(f64::NAN)
            }
            KernelSpec::Euclidean => dot(x, y),
            KernelSpec::ProductThreshold { lipschitz, sigma } => {
                clamp_feature(x[0], lipschitz, sigma) * clamp_feature(y[0], lipschitz, sigma)
            }
            KernelSpec::Custom(c) => (c.eval)(x, y),
        }
    }
}

/// The clamp `phi` behind [`KernelSpec::ProductThreshold`].
pub fn clamp_feature(t: f64, lipschitz: f64, sigma: f64) -> f64 {
    let cap = (lipschitz * sigma).sqrt();
    if t <= -sigma {
        -cap
    } else if t >= sigma {
        cap
    } else {
        t * (lipschitz / sigma).sqrt()
    }
}

/// `|x - y|^2`, accumulated in four lanes.
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            let t = a[k] - b[k];
            acc[k] += t * t;
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        let t = a - b;
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `<x, y>`, accumulated in four lanes.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Fills a symmetric `n x n` matrix from `entry(i, j)` evaluated once per
/// unordered pair `i <= j`. Rows are computed in parallel when `std` is on.
pub(crate) fn symmetric_from_pairs<F>(n: usize, entry: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let rows = par::map_range(n, |i| (i..n).map(|j| entry(i, j)).collect::<Vec<_>>());
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// The kernel matrix `K(X)` with entries `K(X_i, X_j)`.
pub fn kernel_matrix(spec: &KernelSpec, x: &DataMatrix) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if matches!(spec, KernelSpec::ProductThreshold { .. }) && x.dim() != 1 {
        return Err(invalid("d", "product_threshold kernel is one-dimensional"));
    }
    Ok(symmetric_from_pairs(x.len(), |i, j| {
        spec.eval_unchecked(x.column(i), x.column(j))
    }))
}

/// Matrix of squared distances `|X_i - X_j|^2`, exactly symmetric.
pub fn sq_dist_matrix(x: &DataMatrix) -> DMatrix<f64> {
    symmetric_from_pairs(x.len(), |i, j| {
        if i == j {
            0.0
        } else {
            sq_dist(x.column(i), x.column(j))
        }
    })
}

/// Kernel matrix of a distance kernel from precomputed squared distances.
///
/// Produces the same bits as [`kernel_matrix`] when `sq` came from
/// [`sq_dist_matrix`] on the same data.
pub fn kernel_matrix_from_sq_dists(spec: &KernelSpec, sq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if !spec.is_distance_kernel() {
        return Err(invalid("kernel", "only distance kernels can be built from squared distances"));
    }
    Ok(sq.map(|v| spec.from_sq_dist(v).unwrap_or(f64::NAN)))
}
