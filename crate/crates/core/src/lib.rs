//! Kernel spectral clustering of noisy high-dimensional mixtures.
//!
//! The crate covers the full pipeline:
//!
//! * [`kernels`]: kernel functions and kernel matrices,
//! * [`models`]: the noisy nested-spheres mixture and related samplers,
//! * [`meankernel`]: closed-form and Monte Carlo mean kernels,
//! * [`spectral`]: truncated eigendecomposition, k-means and the clustering driver,
//! * [`metrics`]: misclassification rate and normalized mutual information,
//! * [`diagnostics`]: concentration bounds, cluster statistics and the
//!   misclassification guarantee.
//!
//! The crate is `no_std` with `alloc`. The default `std` feature parallelizes
//! kernel-matrix construction and k-means restarts with rayon; results are
//! identical either way.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod meankernel;
pub mod metrics;
pub mod models;
mod par;
mod quad;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use kernels::{kernel_matrix, DataMatrix, KernelSpec};
pub use models::{sample_mixture, MixtureConfig, MixtureSample, NoiseModel};
pub use spectral::{ksc, ClusterResult, KscParams};
