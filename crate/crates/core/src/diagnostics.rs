//! Incoherence estimates, mixed norms, and the closed-form exponents and
//! tuning formulas of the rate theory.
//!
//! `kappa_min(I)` and `rho(I)` are defined over whole RKHSs under the
//! population `L2` norm. The estimates here replace that norm with the
//! empirical one and each RKHS with the range of its Gram matrix, which turns
//! both into eigenvalue problems on orthonormal range bases:
//!
//! * `kappa_min(I)` is the smallest eigenvalue of `U_I^T U_I`, where `U_I`
//!   stacks orthonormal bases of `range(K_m)` for `m in I`;
//! * `rho(I)` is the largest singular value of `Q_I^T Q_J`, where `Q_I`, `Q_J`
//!   are orthonormal bases of the joint ranges of `I` and its complement.
//!
//! Both estimates degenerate once the summed ranks approach `n` (ranges of
//! dimension `r` in `R^n` overlap like random subspaces, at roughly
//! `sqrt(r / n)`), so they are informative only for `sum_m rank(K_m) << n`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernel::{GramSet, SpectralKernel};
use crate::linalg::{orthonormal_range, sorted_symmetric_eigen, spectral_norm};
use crate::solver::{xi_n, RegularizationPlan};
use crate::synthetic::TruthModel;

fn check_index_set(gram: &GramSet, index_set: &[usize]) -> Result<()> {
    if index_set.is_empty() {
        return Err(param("index_set", "must be nonempty"));
    }
    if let Some(&bad) = index_set.iter().find(|&&m| m >= gram.len()) {
        return Err(param(
            "index_set",
            format!("index {bad} out of range for {} kernels", gram.len()),
        ));
    }
    let mut sorted = index_set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != index_set.len() {
        return Err(param("index_set", "indices must be distinct"));
    }
    Ok(())
}

fn complement(gram: &GramSet, index_set: &[usize]) -> Vec<usize> {
    (0..gram.len()).filter(|m| !index_set.contains(m)).collect()
}

fn stacked_factors(gram: &GramSet, indices: &[usize]) -> DMatrix<f64> {
    let n = gram.n();
    let total: usize = indices.iter().map(|&m| gram.block(m).rank()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut col = 0;
    for &m in indices {
        let z = gram.block(m).z();
        out.columns_mut(col, z.ncols()).copy_from(z);
        col += z.ncols();
    }
    out
}

/// Empirical `kappa_min(I)`; exactly `1.0` when `|I| = 1`.
pub fn empirical_kappa_min(gram: &GramSet, index_set: &[usize]) -> Result<f64> {
    check_index_set(gram, index_set)?;
    if index_set.len() == 1 {
        return Ok(1.0);
    }
    let bases: Vec<DMatrix<f64>> = index_set
        .iter()
        .map(|&m| orthonormal_range(gram.block(m).z()))
        .collect();
    let total: usize = bases.iter().map(|b| b.ncols()).sum();
    if total == 0 {
        return Ok(1.0);
    }
    let mut stacked = DMatrix::zeros(gram.n(), total);
    let mut col = 0;
    for b in &bases {
        stacked.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    let (values, _) = sorted_symmetric_eigen(stacked.transpose() * &stacked);
    Ok(values[total - 1].clamp(0.0, 1.0))
}

/// Empirical `rho(I)`: largest canonical correlation between the joint
/// ranges of `I` and its complement, clipped to `[0, 1]`.
pub fn empirical_rho(gram: &GramSet, index_set: &[usize]) -> Result<f64> {
    check_index_set(gram, index_set)?;
    let rest = complement(gram, index_set);
    if rest.is_empty() {
        return Err(param("index_set", "complement of the index set is empty"));
    }
    let q_in = orthonormal_range(&stacked_factors(gram, index_set));
    let q_out = orthonormal_range(&stacked_factors(gram, &rest));
    if q_in.ncols() == 0 || q_out.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(spectral_norm(&(q_in.transpose() * q_out)).clamp(0.0, 1.0))
}

/// Outcome of [`check_incoherence_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncoherenceCheck {
    /// Smallest `||sum_m f_m||_n^2 - (1 - rho^2) kappa sum_{m in I} ||f_m||_n^2`.
    pub min_slack: f64,
    /// Smallest slack divided by `sum_m ||f_m||_n^2` of the same draw.
    pub min_relative_slack: f64,
    pub kappa_min: f64,
    pub rho: f64,
    pub trials: usize,
}

/// Evaluates the incoherence inequality on random functions
/// `f_m = K_m beta_m`, `beta_m` standard Gaussian.
///
/// When `I` is every kernel, `rho` is taken as zero.
pub fn check_incoherence_bound(
    gram: &GramSet,
    index_set: &[usize],
    trials: usize,
    seed: u64,
) -> Result<IncoherenceCheck> {
    if trials == 0 {
        return Err(param("trials", "must be >= 1"));
    }
    check_index_set(gram, index_set)?;
    let kappa = empirical_kappa_min(gram, index_set)?;
    let rho = if complement(gram, index_set).is_empty() {
        0.0
    } else {
        empirical_rho(gram, index_set)?
    };
    let factor = (1.0 - rho * rho) * kappa;
    let n = gram.n();
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut min_relative = f64::INFINITY;
    for _ in 0..trials {
        let mut total = DVector::zeros(n);
        let mut in_set = 0.0;
        let mut all = 0.0;
        for (m, block) in gram.blocks().iter().enumerate() {
            let beta = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let f = block.values_of(&block.coords_of(&beta));
            let sq = f.norm_squared() / nf;
            all += sq;
            if index_set.contains(&m) {
                in_set += sq;
            }
            total += f;
        }
        let slack = total.norm_squared() / nf - factor * in_set;
        min_slack = min_slack.min(slack);
        let relative = if all > 0.0 { slack / all } else { 0.0 };
        min_relative = min_relative.min(relative);
    }
    Ok(IncoherenceCheck {
        min_slack,
        min_relative_slack: min_relative,
        kappa_min: kappa,
        rho,
        trials,
    })
}

/// `R_{p,g*} = (sum_m ||g*_m||_H^p)^{1/p}` for `p` in `{1, 2, inf}`.
pub fn mixed_norm(truth: &TruthModel, kernel: &SpectralKernel, p: f64) -> Result<f64> {
    let norms = truth.g_norms(kernel);
    if p == f64::INFINITY {
        Ok(norms.iter().cloned().fold(0.0, f64::max))
    } else if p == 1.0 {
        Ok(norms.iter().sum())
    } else if p == 2.0 {
        Ok(norms.iter().map(|v| v * v).sum::<f64>().sqrt())
    } else {
        Err(param("p", format!("{p} is not one of 1, 2, inf")))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(param(name, format!("{v} must be positive and finite")))
    }
}

fn check_s_q(s: f64, q: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(param("s", format!("{s} is outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(param("q", format!("{q} is outside [0, 1]")));
    }
    Ok(())
}

/// Tuning level that balances the two terms of the risk bound:
/// `d^{1/(1+q+s)} n^{-1/(1+q+s)} R_2^{-2/(1+q+s)}`.
pub fn lambda_star(d: f64, n: f64, s: f64, q: f64, r2: f64) -> Result<f64> {
    check_positive("d", d)?;
    check_positive("n", n)?;
    check_positive("s", s)?;
    check_positive("R2", r2)?;
    if !(q >= 0.0) {
        return Err(param("q", format!("{q} must be >= 0")));
    }
    let e = 1.0 / (1.0 + q + s);
    Ok(d.powf(e) * n.powf(-e) * r2.powf(-2.0 * e))
}

/// Exponent `(1+q)/(1+q+s)` of the sample size in the upper bound.
pub fn rate_exponent(s: f64, q: f64) -> Result<f64> {
    check_s_q(s, q)?;
    Ok((1.0 + q) / (1.0 + q + s))
}

/// Which mixed-norm ball a minimax reference refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedNormBall {
    L2,
    LInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxExponents {
    /// `s~ = s / (1 + q)`.
    pub s_tilde: f64,
    /// Exponent of `n^{-1}` in the leading term, `1 / (1 + s~)`.
    pub n_exponent: f64,
    /// Exponent of `d`: `1/(1+s~)` on the l2 ball, `1` on the l-infinity ball.
    pub d_exponent: f64,
    /// Exponent of the radius: `2 s~ / (1 + s~)`.
    pub radius_exponent: f64,
}

/// Leading-term exponents of the minimax lower bounds over the mixed-norm
/// balls.
pub fn minimax_reference(s: f64, q: f64, ball: MixedNormBall) -> Result<MinimaxExponents> {
    check_s_q(s, q)?;
    let s_tilde = s / (1.0 + q);
    let n_exponent = 1.0 / (1.0 + s_tilde);
    Ok(MinimaxExponents {
        s_tilde,
        n_exponent,
        d_exponent: match ball {
            MixedNormBall::L2 => n_exponent,
            MixedNormBall::LInfinity => 1.0,
        },
        radius_exponent: 2.0 * s_tilde / (1.0 + s_tilde),
    })
}

/// Covering-number exponent `2s/(1+q)` of the smoothness class
/// `{T^{q/2} g : ||g||_H <= 1}`.
pub fn entropy_exponent(s: f64, q: f64) -> Result<f64> {
    check_s_q(s, q)?;
    Ok(2.0 * s / (1.0 + q))
}

/// All reference exponents for one `(s, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentRecord {
    pub s: f64,
    pub q: f64,
    pub rate_exponent: f64,
    pub minimax_l2: MinimaxExponents,
    pub minimax_linf: MinimaxExponents,
    pub entropy_exponent: f64,
    /// `2s`, the covering exponent of the plain RKHS ball.
    pub base_entropy_exponent: f64,
}

pub fn exponent_record(s: f64, q: f64) -> Result<ExponentRecord> {
    Ok(ExponentRecord {
        s,
        q,
        rate_exponent: rate_exponent(s, q)?,
        minimax_l2: minimax_reference(s, q, MixedNormBall::L2)?,
        minimax_linf: minimax_reference(s, q, MixedNormBall::LInfinity)?,
        entropy_exponent: entropy_exponent(s, q)?,
        base_entropy_exponent: 2.0 * s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    /// `sqrt(n) xi_n^2 (d + lambda3^{1+q} R_2^2 / lambda1^2)`, with every
    /// unknown constant dropped.
    pub value: f64,
    /// Whether `log(M) / sqrt(n) <= 1`.
    pub log_m_condition: bool,
}

/// Constant-free core of the sample-size condition of the rate theorem.
/// `xi_n` is evaluated at `lambda_bar = plan.lambda2`.
pub fn rate_condition_profile(
    d: usize,
    n: usize,
    num_kernels: f64,
    s: f64,
    q: f64,
    plan: &RegularizationPlan,
    r2: f64,
) -> Result<ConditionProfile> {
    plan.validate()?;
    if !(plan.lambda1 > 0.0) {
        return Err(param("lambda1", "must be > 0 for the condition profile"));
    }
    let nf = n as f64;
    let xi = xi_n(plan.lambda2, n, s, num_kernels);
    let value = nf.sqrt()
        * xi
        * xi
        * (d as f64 + plan.lambda3.powf(1.0 + q) * r2 * r2 / (plan.lambda1 * plan.lambda1));
    Ok(ConditionProfile {
        value,
        log_m_condition: num_kernels.ln() / nf.sqrt() <= 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNorms {
    pub r1: f64,
    pub r2: f64,
    pub r_inf: f64,
}

pub fn mixed_norms(truth: &TruthModel, kernel: &SpectralKernel) -> Result<MixedNorms> {
    Ok(MixedNorms {
        r1: mixed_norm(truth, kernel, 1.0)?,
        r2: mixed_norm(truth, kernel, 2.0)?,
        r_inf: mixed_norm(truth, kernel, f64::INFINITY)?,
    })
}

/// Structural summary of one design and truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub index_set: Vec<usize>,
    /// Estimate of `kappa_min(I)` under the empirical norm.
    pub kappa_min: f64,
    /// Estimate of `rho(I)` under the empirical norm (`0` when `I` is
    /// every kernel).
    pub rho: f64,
    /// `(1 - rho^2) kappa_min`.
    pub incoherence_product: f64,
    pub mixed_norms: MixedNorms,
    pub exponents: ExponentRecord,
}

impl DiagnosticsReport {
    /// Positivity of the incoherence product for the diagnosed set.
    pub fn incoherence_holds(&self) -> bool {
        self.incoherence_product > 0.0
    }
}

/// Diagnoses the truth's active set on the given design.
pub fn diagnose(
    gram: &GramSet,
    truth: &TruthModel,
    kernel: &SpectralKernel,
) -> Result<DiagnosticsReport> {
    if gram.len() != truth.num_kernels() {
        return Err(Error::DimensionMismatch {
            context: "diagnose kernel count",
            expected: truth.num_kernels(),
            found: gram.len(),
        });
    }
    let index_set = truth.active_set().to_vec();
    let kappa_min = empirical_kappa_min(gram, &index_set)?;
    let rho = if index_set.len() == gram.len() {
        0.0
    } else {
        empirical_rho(gram, &index_set)?
    };
    Ok(DiagnosticsReport {
        incoherence_product: (1.0 - rho * rho) * kappa_min,
        index_set,
        kappa_min,
        rho,
        mixed_norms: mixed_norms(truth, kernel)?,
        exponents: exponent_record(kernel.s_exponent(), truth.q())?,
    })
}
