//! Elastic-net multiple kernel learning on additive models, with synthetic
//! truths of controllable smoothness and sparsity, and tools for measuring
//! how the excess risk scales with the sample size.
//!
//! The estimator fits `f = sum_m f_m`, each `f_m` in the RKHS of kernel `k_m`,
//! by minimizing
//!
//! ```text
//! (1/n) ||y - sum_m K_m alpha_m||^2
//!   + lambda1 sum_m sqrt(alpha_m' (K_m K_m / n + lambda2 K_m) alpha_m)
//!   + lambda3 sum_m alpha_m' K_m alpha_m
//! ```
//!
//! with block coordinate descent.
//!
//! The modules build on each other:
//!
//! - [`kernel`]: finite-rank spectral kernels, sample points and Gram
//!   matrices, stored as low-rank factors.
//! - [`synthetic`]: sparse additive truths and noisy regression samples.
//! - [`solver`]: the estimator, its objective and its optimality certificate.
//! - [`diagnostics`]: incoherence estimates and the rate algebra.
//! - [`harness`]: sample-size sweeps, slope fits and profile comparisons.
//!
//! ```
//! use mklrate::kernel::{assemble_factored, SpectralKernel};
//! use mklrate::solver::{solve, theory_plan, SolverOptions};
//! use mklrate::synthetic::{build_truth, sample_data, NoiseKind, NormProfile};
//!
//! let kernel = SpectralKernel::power_law(0.5, 32)?;
//! let kernels = vec![kernel.clone(); 4];
//! let truth = build_truth(4, 2, 0.0, NormProfile::Homogeneous, 0.1, &kernel)?;
//! let sample = sample_data(&truth, &kernels, 200, NoiseKind::Uniform, 7)?;
//! let gram = assemble_factored(&kernels, &sample.points)?;
//! let plan = theory_plan(200, 4, 0.5, 0.05, 1.0, 1.0)?;
//! let y = nalgebra::DVector::from_vec(sample.labels);
//! let fit = solve(&y, &gram, &plan, &SolverOptions::default())?;
//! assert!(fit.converged);
//! # Ok::<(), mklrate::Error>(())
//! ```

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
pub use harness::{run_sweep, ExperimentConfig, RateReport};
pub use kernel::{GramSet, SamplePoints, SpectralKernel};
pub use solver::{solve, MklSolution, RegularizationPlan, SolverOptions};
pub use synthetic::{build_truth, sample_data, NormProfile, TruthModel};

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/truths.md")]
    mod truths {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
