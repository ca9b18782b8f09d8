//! Sparse additive ground truths and the product-design regression model.
//!
//! Component `m` of the truth is `f*_m = T^{q/2} g*_m` with `g*_m` written in
//! the kernel's cosine basis. Inputs are uniform on `[0, 1]^M` and component
//! `m` reads only coordinate `m`, so distinct components are independent and
//! centered: the `L2` norm of the sum is the sum of the component norms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernel::{SamplePoints, SpectralKernel};

/// How the RKHS norms of the active `g*_m` are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormProfile {
    /// `||g*_m||_H = 1` for every active `m`.
    Homogeneous,
    /// `||g*_m||_H = 1 / rank` where `rank` is the 1-based position in the
    /// active set.
    Inhomogeneous,
}

impl NormProfile {
    pub fn target_norm(self, rank: usize) -> f64 {
        match self {
            NormProfile::Homogeneous => 1.0,
            NormProfile::Inhomogeneous => 1.0 / rank as f64,
        }
    }

    pub fn other(self) -> Self {
        match self {
            NormProfile::Homogeneous => NormProfile::Inhomogeneous,
            NormProfile::Inhomogeneous => NormProfile::Homogeneous,
        }
    }
}

/// Bounded noise law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on `[-L, L]`.
    #[default]
    Uniform,
    /// `+L` or `-L` with equal probability.
    Rademacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    num_kernels: usize,
    /// Zero-based indices of the active components, `{0, .., d-1}`.
    active_set: Vec<usize>,
    g_coefficients: Vec<Vec<f64>>,
    f_coefficients: Vec<Vec<f64>>,
    q: f64,
    profile: NormProfile,
    noise_bound: f64,
}

/// Builds the truth for `num_kernels` kernels of which the first
/// `active_count` are active.
///
/// `g*_m` has basis coefficients proportional to `(-1)^(k+1) sqrt(mu_k) / k`,
/// rescaled to the profile's RKHS norm; `f*_m` applies `T^{q/2}`.
pub fn build_truth(
    num_kernels: usize,
    active_count: usize,
    q: f64,
    profile: NormProfile,
    noise_bound: f64,
    kernel: &SpectralKernel,
) -> Result<TruthModel> {
    if active_count == 0 {
        return Err(param("d", "at least one active component is required"));
    }
    if active_count > num_kernels {
        return Err(param(
            "d",
            format!("{active_count} active components exceed M = {num_kernels}"),
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(param("q", format!("{q} is outside [0, 1]")));
    }
    if !(noise_bound >= 0.0) || !noise_bound.is_finite() {
        return Err(param("noise_bound", format!("{noise_bound} must be finite and >= 0")));
    }

    let shape: Vec<f64> = kernel
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(i, mu)| {
            let k = (i + 1) as f64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * mu.sqrt() / k
        })
        .collect();
    let shape_norm = kernel.rkhs_norm_sq(&shape).sqrt();

    let mut g_coefficients = Vec::with_capacity(active_count);
    let mut f_coefficients = Vec::with_capacity(active_count);
    for rank in 1..=active_count {
        let target = profile.target_norm(rank);
        let g: Vec<f64> = shape.iter().map(|b| b * target / shape_norm).collect();
        let f = kernel.apply_operator_power(&g, q / 2.0)?;
        g_coefficients.push(g);
        f_coefficients.push(f);
    }
    Ok(TruthModel {
        num_kernels,
        active_set: (0..active_count).collect(),
        g_coefficients,
        f_coefficients,
        q,
        profile,
        noise_bound,
    })
}

impl TruthModel {
    pub fn num_kernels(&self) -> usize {
        self.num_kernels
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn active_count(&self) -> usize {
        self.active_set.len()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn profile(&self) -> NormProfile {
        self.profile
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    fn position(&self, m: usize) -> Option<usize> {
        self.active_set.iter().position(|&a| a == m)
    }

    /// Basis coefficients of `g*_m`; `None` for inactive components.
    pub fn g_coefficients(&self, m: usize) -> Option<&[f64]> {
        self.position(m).map(|p| self.g_coefficients[p].as_slice())
    }

    /// Basis coefficients of `f*_m`; `None` for inactive components.
    pub fn f_coefficients(&self, m: usize) -> Option<&[f64]> {
        self.position(m).map(|p| self.f_coefficients[p].as_slice())
    }

    /// `||g*_m||_H` (zero when inactive).
    pub fn g_rkhs_norm(&self, m: usize, kernel: &SpectralKernel) -> f64 {
        self.g_coefficients(m)
            .map_or(0.0, |c| kernel.rkhs_norm_sq(c).sqrt())
    }

    /// `||f*_m||_H` (zero when inactive).
    pub fn f_rkhs_norm(&self, m: usize, kernel: &SpectralKernel) -> f64 {
        self.f_coefficients(m)
            .map_or(0.0, |c| kernel.rkhs_norm_sq(c).sqrt())
    }

    /// `||f*_m||_{L2}^2` (zero when inactive).
    pub fn f_l2_norm_sq(&self, m: usize) -> f64 {
        self.f_coefficients(m)
            .map_or(0.0, |c| c.iter().map(|b| b * b).sum())
    }

    /// `||f*||_{L2}^2`, the excess risk of the zero predictor.
    pub fn total_l2_norm_sq(&self) -> f64 {
        self.f_coefficients
            .iter()
            .map(|c| c.iter().map(|b| b * b).sum::<f64>())
            .sum()
    }

    /// Per-kernel `||g*_m||_H` for all `M` kernels.
    pub fn g_norms(&self, kernel: &SpectralKernel) -> Vec<f64> {
        (0..self.num_kernels)
            .map(|m| self.g_rkhs_norm(m, kernel))
            .collect()
    }

    /// `L2` mass the same coefficient law would place beyond the truncation
    /// level if the power-law spectrum continued, summed over active
    /// components. Bounds the error floor caused by truncating the kernels.
    pub fn truncation_tail(&self, kernel: &SpectralKernel) -> f64 {
        let k_max = kernel.truncation_level();
        let s = kernel.s_exponent();
        let first = match self.g_coefficients.first() {
            Some(g) => g,
            None => return 0.0,
        };
        // b_k = c * sqrt(mu_k) / k with mu_k = scale * k^(-1/s); recover c.
        let mu1 = kernel.eigenvalues()[0];
        let c_unit = first[0] / mu1.sqrt();
        let scale = kernel.scale();
        let tail_unit: f64 = ((k_max + 1)..(k_max + 1 + 200_000))
            .map(|k| {
                let k = k as f64;
                let mu = scale * k.powf(-1.0 / s);
                mu.powf(1.0 + self.q) / (k * k)
            })
            .sum();
        let profile_mass: f64 = (1..=self.active_count())
            .map(|r| {
                let t = self.profile.target_norm(r) / self.profile.target_norm(1);
                t * t
            })
            .sum();
        c_unit * c_unit * tail_unit * profile_mass
    }
}

/// Evaluates `f*(x) = sum_{m in I_0} f*_m(x^(m))`.
pub fn evaluate_truth(truth: &TruthModel, kernels: &[SpectralKernel], x: &[f64]) -> Result<f64> {
    if x.len() != truth.num_kernels {
        return Err(Error::DimensionMismatch {
            context: "evaluate_truth input arity",
            expected: truth.num_kernels,
            found: x.len(),
        });
    }
    check_kernels(truth, kernels)?;
    if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain { value: bad });
    }
    truth
        .active_set
        .iter()
        .zip(&truth.f_coefficients)
        .map(|(&m, c)| kernels[m].evaluate_expansion(c, x[m]))
        .sum()
}

fn check_kernels(truth: &TruthModel, kernels: &[SpectralKernel]) -> Result<()> {
    if kernels.len() != truth.num_kernels {
        return Err(Error::DimensionMismatch {
            context: "kernel count vs truth",
            expected: truth.num_kernels,
            found: kernels.len(),
        });
    }
    Ok(())
}

/// Labeled draw from the product-design regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub points: SamplePoints,
    pub labels: Vec<f64>,
    pub noise: Vec<f64>,
    pub seed: u64,
}

impl RegressionSample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `n` labeled points. Inputs are uniform on `[0,1]^M`, noise follows
/// `noise_kind` scaled to the truth's bound. Deterministic in `seed`.
pub fn sample_data(
    truth: &TruthModel,
    kernels: &[SpectralKernel],
    n: usize,
    noise_kind: NoiseKind,
    seed: u64,
) -> Result<RegressionSample> {
    if n == 0 {
        return Err(param("n", "at least one sample is required"));
    }
    check_kernels(truth, kernels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let big_m = truth.num_kernels;
    let mut columns = vec![Vec::with_capacity(n); big_m];
    for _ in 0..n {
        for col in columns.iter_mut() {
            col.push(rng.random::<f64>());
        }
    }
    let bound = truth.noise_bound;
    let noise: Vec<f64> = (0..n)
        .map(|_| match noise_kind {
            NoiseKind::Uniform => bound * (2.0 * rng.random::<f64>() - 1.0),
            NoiseKind::Rademacher => {
                if rng.random::<bool>() {
                    bound
                } else {
                    -bound
                }
            }
        })
        .collect();
    let points = SamplePoints::from_columns(columns)?;
    let signal = truth_at_points(truth, kernels, &points)?;
    let labels = signal.iter().zip(&noise).map(|(f, e)| f + e).collect();
    Ok(RegressionSample {
        points,
        labels,
        noise,
        seed,
    })
}

/// `f*(x_i)` for every sample point.
pub fn truth_at_points(
    truth: &TruthModel,
    kernels: &[SpectralKernel],
    points: &SamplePoints,
) -> Result<Vec<f64>> {
    check_kernels(truth, kernels)?;
    let mut out = vec![0.0; points.len()];
    for (&m, coeffs) in truth.active_set.iter().zip(&truth.f_coefficients) {
        for (slot, &x) in out.iter_mut().zip(points.column(m)) {
            *slot += kernels[m].evaluate_expansion(coeffs, x)?;
        }
    }
    Ok(out)
}
