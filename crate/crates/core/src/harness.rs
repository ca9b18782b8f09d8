//! Sample-size sweeps: exact excess risk per cell, log-log slope fits, and
//! paired profile comparisons.
//!
//! Each cell `(n, replication)` draws its own sample from a seed derived from
//! `(base seed, n, replication)` and is independent of every other cell, so
//! cells run in parallel and the report does not depend on scheduling. The
//! truth is built once per configuration.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{lambda_star, mixed_norm, rate_exponent};
use crate::error::{param, Error, Result};
use crate::kernel::{assemble_factored, SamplePoints, SpectralKernel, DEFAULT_TRUNCATION};
use crate::solver::{solve, theory_plan, MklSolution, SolverOptions};
use crate::synthetic::{build_truth, sample_data, NoiseKind, NormProfile, TruthModel};

/// How `lambda1` is scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// `lambda1 = scale * eta(t) * xi_n(lambda*)` with `lambda*` computed from
    /// the known truth.
    Theory {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        t: f64,
    },
    /// The scale is chosen once on a pilot sample at the smallest `n`, by
    /// validation error over `candidates`, then held fixed.
    PilotTuned {
        #[serde(default = "one")]
        t: f64,
        #[serde(default = "default_candidates")]
        candidates: Vec<f64>,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Theory { scale: 1.0, t: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

fn default_candidates() -> Vec<f64> {
    (-4..=2).map(|e| 2f64.powi(e)).collect()
}

fn default_validation_fraction() -> f64 {
    0.25
}

/// How the excess risk of a fitted model is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestPolicy {
    /// Closed form in basis-coefficient space.
    #[default]
    Exact,
    /// Average squared error over `n_test` fresh inputs.
    MonteCarlo { n_test: usize },
}

fn default_profile() -> NormProfile {
    NormProfile::Homogeneous
}

fn default_noise_bound() -> f64 {
    0.1
}

fn default_replications() -> usize {
    1
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

/// One experiment. `s`, `q`, `d`, `M` and `n_grid` have no defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub s: f64,
    pub q: f64,
    pub d: usize,
    #[serde(rename = "M")]
    pub num_kernels: usize,
    #[serde(default = "default_profile")]
    pub profile: NormProfile,
    #[serde(default = "default_noise_bound")]
    pub noise_bound: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub lambda_policy: LambdaPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub test_policy: TestPolicy,
    #[serde(default = "default_truncation")]
    pub truncation_level: usize,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(param("s", format!("{} is outside (0, 1)", self.s)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(param("q", format!("{} is outside [0, 1]", self.q)));
        }
        if self.num_kernels < 2 {
            return Err(param("M", format!("{} must be >= 2", self.num_kernels)));
        }
        if self.d == 0 || self.d > self.num_kernels {
            return Err(param(
                "d",
                format!("{} must lie in 1..=M (M = {})", self.d, self.num_kernels),
            ));
        }
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return Err(param("noise_bound", format!("{} must be >= 0", self.noise_bound)));
        }
        if self.n_grid.is_empty() {
            return Err(param("n_grid", "must be nonempty"));
        }
        if self.n_grid[0] < 2 {
            return Err(param("n_grid", "sample sizes must be >= 2"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("n_grid", "must be strictly increasing"));
        }
        if self.replications == 0 {
            return Err(param("replications", "must be >= 1"));
        }
        if self.truncation_level == 0 {
            return Err(param("truncation_level", "must be >= 1"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(param("solver", format!("tol {} must be > 0", self.solver.tol)));
        }
        if self.solver.max_sweeps == 0 {
            return Err(param("solver", "max_sweeps must be >= 1"));
        }
        match &self.lambda_policy {
            LambdaPolicy::Theory { scale, t } => {
                if !(*scale >= 0.0) || !scale.is_finite() {
                    return Err(param("lambda_policy", format!("scale {scale} must be >= 0")));
                }
                if !(*t >= 1.0) {
                    return Err(param("lambda_policy", format!("t {t} must be >= 1")));
                }
            }
            LambdaPolicy::PilotTuned {
                t,
                candidates,
                validation_fraction,
            } => {
                if !(*t >= 1.0) {
                    return Err(param("lambda_policy", format!("t {t} must be >= 1")));
                }
                if candidates.is_empty() || candidates.iter().any(|c| !(*c >= 0.0)) {
                    return Err(param("lambda_policy", "candidates must be nonempty and >= 0"));
                }
                if !(*validation_fraction > 0.0 && *validation_fraction < 1.0) {
                    return Err(param(
                        "lambda_policy",
                        format!("validation_fraction {validation_fraction} is outside (0, 1)"),
                    ));
                }
                let n0 = self.n_grid[0];
                let n_val = (n0 as f64 * validation_fraction).round() as usize;
                if n_val == 0 || n0 - n_val < 2 {
                    return Err(param("lambda_policy", "pilot split leaves an empty side"));
                }
            }
        }
        if let TestPolicy::MonteCarlo { n_test } = self.test_policy {
            if n_test < 2 {
                return Err(param("test_policy", "n_test must be >= 2"));
            }
        }
        Ok(())
    }

    /// The shared kernel of every coordinate.
    pub fn kernel(&self) -> Result<SpectralKernel> {
        SpectralKernel::power_law(self.s, self.truncation_level)
    }

    pub fn truth(&self, kernel: &SpectralKernel) -> Result<TruthModel> {
        build_truth(
            self.num_kernels,
            self.d,
            self.q,
            self.profile,
            self.noise_bound,
            kernel,
        )
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of cell `(n, replication)`; independent of every other setting so
/// runs that differ only in `q` or the profile see the same samples.
pub fn cell_seed(base: u64, n: usize, replication: usize) -> u64 {
    mix(mix(base) ^ mix(n as u64).rotate_left(17) ^ mix(replication as u64 ^ 0xA5A5_A5A5))
}

/// Basis coefficients `c_{k,m} = mu_k sum_i alpha_{m,i} phi_k(x_i^(m))` of
/// every fitted component.
pub fn fitted_coefficients(
    solution: &MklSolution,
    kernels: &[SpectralKernel],
    points: &SamplePoints,
) -> Result<Vec<Vec<f64>>> {
    if kernels.len() != solution.alpha_blocks.len() || kernels.len() != points.dim() {
        return Err(Error::DimensionMismatch {
            context: "fitted_coefficients kernel count",
            expected: solution.alpha_blocks.len(),
            found: kernels.len(),
        });
    }
    kernels
        .iter()
        .zip(&solution.alpha_blocks)
        .enumerate()
        .map(|(m, (kernel, alpha))| {
            if alpha.len() != points.len() {
                return Err(Error::DimensionMismatch {
                    context: "fitted_coefficients sample count",
                    expected: points.len(),
                    found: alpha.len(),
                });
            }
            if alpha.iter().all(|a| *a == 0.0) {
                return Ok(vec![0.0; kernel.truncation_level()]);
            }
            let phi = kernel.basis_matrix(points.column(m))?;
            let proj = phi.tr_mul(alpha);
            Ok(proj
                .iter()
                .zip(kernel.eigenvalues())
                .map(|(p, mu)| mu * p)
                .collect())
        })
        .collect()
}

/// `||f_hat - f*||^2_{L2}` computed exactly in coefficient space. Cross terms
/// between components vanish because coordinates are independent and the
/// basis is centered.
pub fn exact_l2_error(
    solution: &MklSolution,
    truth: &TruthModel,
    kernels: &[SpectralKernel],
    points: &SamplePoints,
) -> Result<f64> {
    if kernels.len() != truth.num_kernels() {
        return Err(Error::DimensionMismatch {
            context: "exact_l2_error kernel count",
            expected: truth.num_kernels(),
            found: kernels.len(),
        });
    }
    let fitted = fitted_coefficients(solution, kernels, points)?;
    Ok(fitted
        .iter()
        .enumerate()
        .map(|(m, c_hat)| {
            let c_star = truth.f_coefficients(m);
            c_hat
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let t = c_star.and_then(|s| s.get(k)).copied().unwrap_or(0.0);
                    (c - t).powi(2)
                })
                .sum::<f64>()
        })
        .sum())
}

/// Predictions of a fitted model at new inputs.
pub fn predict(
    solution: &MklSolution,
    kernels: &[SpectralKernel],
    train_points: &SamplePoints,
    new_points: &SamplePoints,
) -> Result<Vec<f64>> {
    let fitted = fitted_coefficients(solution, kernels, train_points)?;
    let mut out = vec![0.0; new_points.len()];
    for (m, (kernel, coeffs)) in kernels.iter().zip(&fitted).enumerate() {
        if coeffs.iter().all(|c| *c == 0.0) {
            continue;
        }
        let phi = kernel.basis_matrix(new_points.column(m))?;
        let values = phi * DVector::from_column_slice(coeffs);
        for (o, v) in out.iter_mut().zip(values.iter()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of the excess risk over `n_test` fresh uniform
/// inputs; returns `(mean, standard error)`.
pub fn monte_carlo_l2_error(
    solution: &MklSolution,
    truth: &TruthModel,
    kernels: &[SpectralKernel],
    points: &SamplePoints,
    n_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    if n_test < 2 {
        return Err(param("n_test", "must be >= 2"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let columns = (0..kernels.len())
        .map(|_| (0..n_test).map(|_| rng.random::<f64>()).collect())
        .collect();
    let fresh = SamplePoints::from_columns(columns)?;
    let pred = predict(solution, kernels, points, &fresh)?;
    let target = crate::synthetic::truth_at_points(truth, kernels, &fresh)?;
    let sq: Vec<f64> = pred
        .iter()
        .zip(&target)
        .map(|(p, t)| (p - t).powi(2))
        .collect();
    let nf = n_test as f64;
    let mean = sq.iter().sum::<f64>() / nf;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}

/// One `(n, replication)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub lambda_bar: f64,
    pub lambda1: f64,
    pub err_l2sq: f64,
    pub support_ok: bool,
    pub sweeps: usize,
    pub runtime_ms: f64,
    /// Whether the fit beat the zero predictor (informational).
    pub beats_zero: bool,
    /// Error message when the cell failed.
    pub failure: Option<String>,
}

impl CellRow {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSummary {
    pub n: usize,
    pub mean_error: f64,
    pub standard_error: f64,
    pub successful_cells: usize,
    /// `d log(M) / n`, the second term of the bound.
    pub secondary_term: f64,
}

/// Least-squares fit of `log(mean error)` on `log(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub exponent: f64,
    pub standard_error: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Minimum number of grid points for a slope fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Fraction of failed cells above which a sweep is an error.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

/// Ordinary least squares slope with its standard error. Needs at least
/// three points for a standard error; returns `None` below two.
pub fn fit_log_log(ns: &[f64], errors: &[f64]) -> Option<SlopeFit> {
    let k = ns.len();
    if k < 2 || errors.len() != k || errors.iter().any(|e| !(*e > 0.0)) {
        return None;
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let kf = k as f64;
    let mx = x.iter().sum::<f64>() / kf;
    let my = y.iter().sum::<f64>() / kf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let standard_error = if k > 2 {
        let ssr: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (ssr / (kf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(SlopeFit {
        exponent: slope,
        standard_error,
        intercept,
        points: k,
    })
}

/// Output of [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub config: ExperimentConfig,
    pub rows: Vec<CellRow>,
    pub per_n: Vec<SampleSizeSummary>,
    /// Present when the grid has at least [`MIN_FIT_POINTS`] sizes.
    pub fit: Option<SlopeFit>,
    /// `-(1+q)/(1+q+s)`.
    pub reference_exponent: f64,
    /// `R_{2,g*}` of the truth.
    pub r2: f64,
    /// `||f*||^2_{L2}`, the error of the zero predictor.
    pub zero_predictor_error: f64,
    /// Tail mass the truncated kernels cannot represent.
    pub truncation_floor: f64,
    /// Scale used for `lambda1`.
    pub lambda_scale: f64,
    pub warnings: Vec<String>,
}

impl RateReport {
    pub fn mean_errors(&self) -> Vec<f64> {
        self.per_n.iter().map(|p| p.mean_error).collect()
    }
}

struct SweepContext<'a> {
    config: &'a ExperimentConfig,
    kernels: Vec<SpectralKernel>,
    truth: TruthModel,
    r2: f64,
}

impl SweepContext<'_> {
    fn t(&self) -> f64 {
        match &self.config.lambda_policy {
            LambdaPolicy::Theory { t, .. } | LambdaPolicy::PilotTuned { t, .. } => *t,
        }
    }

    fn plan_for(&self, n: usize, scale: f64) -> Result<crate::solver::RegularizationPlan> {
        let c = self.config;
        let lambda_bar = lambda_star(c.d as f64, n as f64, c.s, c.q, self.r2)?;
        theory_plan(n, c.num_kernels, c.s, lambda_bar, self.t(), scale)
    }

    fn run_cell(&self, n: usize, rep: usize, scale: f64) -> CellRow {
        let seed = cell_seed(self.config.seed, n, rep);
        let start = Instant::now();
        let mut row = CellRow {
            n,
            rep,
            seed,
            lambda_bar: f64::NAN,
            lambda1: f64::NAN,
            err_l2sq: f64::NAN,
            support_ok: false,
            sweeps: 0,
            runtime_ms: 0.0,
            beats_zero: false,
            failure: None,
        };
        if let Err(e) = self.fill_cell(&mut row, scale) {
            row.failure = Some(e.to_string());
        }
        row.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        row
    }

    fn fill_cell(&self, row: &mut CellRow, scale: f64) -> Result<()> {
        let c = self.config;
        let sample = sample_data(&self.truth, &self.kernels, row.n, c.noise_kind, row.seed)?;
        let gram = assemble_factored(&self.kernels, &sample.points)?;
        let plan = self.plan_for(row.n, scale)?;
        row.lambda_bar = plan.lambda2;
        row.lambda1 = plan.lambda1;
        let y = DVector::from_vec(sample.labels.clone());
        let solution = solve(&y, &gram, &plan, &c.solver)?;
        row.sweeps = solution.sweeps_used;
        row.err_l2sq = match c.test_policy {
            TestPolicy::Exact => exact_l2_error(&solution, &self.truth, &self.kernels, &sample.points)?,
            TestPolicy::MonteCarlo { n_test } => {
                monte_carlo_l2_error(
                    &solution,
                    &self.truth,
                    &self.kernels,
                    &sample.points,
                    n_test,
                    mix(row.seed),
                )?
                .0
            }
        };
        let active = self.truth.active_set();
        row.support_ok = active.iter().all(|m| solution.active_estimate.contains(m))
            && solution.active_estimate.iter().all(|m| active.contains(m));
        row.beats_zero = row.err_l2sq <= self.truth.total_l2_norm_sq();
        Ok(())
    }

    /// Picks the `lambda1` scale with the smallest validation error on a
    /// pilot sample at the smallest grid size.
    fn tune_scale(&self, candidates: &[f64], validation_fraction: f64) -> Result<f64> {
        let c = self.config;
        let n0 = c.n_grid[0];
        let seed = mix(cell_seed(c.seed, n0, usize::MAX));
        let sample = sample_data(&self.truth, &self.kernels, n0, c.noise_kind, seed)?;
        let n_val = (n0 as f64 * validation_fraction).round() as usize;
        let n_train = n0 - n_val;
        let split = |range: std::ops::Range<usize>| -> Result<SamplePoints> {
            SamplePoints::from_columns(
                (0..c.num_kernels)
                    .map(|m| sample.points.column(m)[range.clone()].to_vec())
                    .collect(),
            )
        };
        let train = split(0..n_train)?;
        let valid = split(n_train..n0)?;
        let gram = assemble_factored(&self.kernels, &train)?;
        let y = DVector::from_column_slice(&sample.labels[..n_train]);
        let mut best = (f64::INFINITY, candidates[0]);
        for &scale in candidates {
            let plan = self.plan_for(n_train, scale)?;
            let solution = match solve(&y, &gram, &plan, &c.solver) {
                Ok(s) => s,
                Err(Error::NotConverged { solution, .. }) => *solution,
                Err(e) => return Err(e),
            };
            let pred = predict(&solution, &self.kernels, &train, &valid)?;
            let mse = pred
                .iter()
                .zip(&sample.labels[n_train..])
                .map(|(p, y)| (p - y).powi(2))
                .sum::<f64>()
                / n_val as f64;
            if mse < best.0 {
                best = (mse, scale);
            }
        }
        Ok(best.1)
    }
}

/// Runs every `(n, replication)` cell of `config` and fits the rate.
pub fn run_sweep(config: &ExperimentConfig) -> Result<RateReport> {
    config.validate()?;
    let kernel = config.kernel()?;
    let truth = config.truth(&kernel)?;
    let r2 = mixed_norm(&truth, &kernel, 2.0)?;
    let ctx = SweepContext {
        config,
        kernels: vec![kernel.clone(); config.num_kernels],
        truth,
        r2,
    };
    let scale = match &config.lambda_policy {
        LambdaPolicy::Theory { scale, .. } => *scale,
        LambdaPolicy::PilotTuned {
            candidates,
            validation_fraction,
            ..
        } => ctx.tune_scale(candidates, *validation_fraction)?,
    };

    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let rows: Vec<CellRow> = cells
        .par_iter()
        .map(|&(n, rep)| ctx.run_cell(n, rep, scale))
        .collect();

    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed as f64 > MAX_FAILED_FRACTION * rows.len() as f64 {
        let first = rows
            .iter()
            .find_map(|r| r.failure.clone())
            .unwrap_or_default();
        return Err(Error::Experiment(format!(
            "{failed} of {} cells failed (first: {first})",
            rows.len()
        )));
    }

    let big_m = config.num_kernels as f64;
    let per_n: Vec<SampleSizeSummary> = config
        .n_grid
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && !r.failed())
                .map(|r| r.err_l2sq)
                .collect();
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let se = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                f64::NAN
            };
            SampleSizeSummary {
                n,
                mean_error: mean,
                standard_error: se,
                successful_cells: errs.len(),
                secondary_term: config.d as f64 * big_m.ln() / n as f64,
            }
        })
        .collect();

    let fit = if per_n.len() >= MIN_FIT_POINTS {
        let ns: Vec<f64> = per_n.iter().map(|p| p.n as f64).collect();
        let errs: Vec<f64> = per_n.iter().map(|p| p.mean_error).collect();
        fit_log_log(&ns, &errs)
    } else {
        None
    };

    let mut warnings = Vec::new();
    if failed > 0 {
        warnings.push(format!("{failed} cells failed"));
    }
    let losing = rows.iter().filter(|r| !r.failed() && !r.beats_zero).count();
    if losing > 0 {
        warnings.push(format!("{losing} cells did not beat the zero predictor"));
    }
    let truncation_floor = ctx.truth.truncation_tail(&kernel);
    if let Some(last) = per_n.last() {
        if truncation_floor > 0.1 * last.mean_error {
            warnings.push(format!(
                "truncation floor {truncation_floor:.3e} is within 10x of the smallest mean error"
            ));
        }
    }

    Ok(RateReport {
        config: config.clone(),
        rows,
        per_n,
        fit,
        reference_exponent: -rate_exponent(config.s, config.q)?,
        r2,
        zero_predictor_error: ctx.truth.total_l2_norm_sq(),
        truncation_floor,
        lambda_scale: scale,
        warnings,
    })
}

/// Everything produced by fitting one sample.
#[derive(Debug, Clone)]
pub struct SingleFit {
    pub truth: TruthModel,
    pub kernels: Vec<SpectralKernel>,
    pub sample: crate::synthetic::RegressionSample,
    pub gram: crate::kernel::GramSet,
    pub solution: MklSolution,
    pub err_l2sq: f64,
    pub support_ok: bool,
}

/// Fits the sample of cell `(n, replication)` exactly as [`run_sweep`]
/// would, and returns the intermediate objects as well.
pub fn single_fit(config: &ExperimentConfig, n: usize, replication: usize) -> Result<SingleFit> {
    config.validate()?;
    if n < 2 {
        return Err(param("n", format!("{n} must be >= 2")));
    }
    let kernel = config.kernel()?;
    let truth = config.truth(&kernel)?;
    let r2 = mixed_norm(&truth, &kernel, 2.0)?;
    let ctx = SweepContext {
        config,
        kernels: vec![kernel; config.num_kernels],
        truth,
        r2,
    };
    let scale = match &config.lambda_policy {
        LambdaPolicy::Theory { scale, .. } => *scale,
        LambdaPolicy::PilotTuned {
            candidates,
            validation_fraction,
            ..
        } => ctx.tune_scale(candidates, *validation_fraction)?,
    };
    let seed = cell_seed(config.seed, n, replication);
    let sample = sample_data(&ctx.truth, &ctx.kernels, n, config.noise_kind, seed)?;
    let gram = assemble_factored(&ctx.kernels, &sample.points)?;
    let plan = ctx.plan_for(n, scale)?;
    let y = DVector::from_vec(sample.labels.clone());
    let solution = solve(&y, &gram, &plan, &config.solver)?;
    let err_l2sq = exact_l2_error(&solution, &ctx.truth, &ctx.kernels, &sample.points)?;
    let active = ctx.truth.active_set();
    let support_ok = active.iter().all(|m| solution.active_estimate.contains(m))
        && solution.active_estimate.iter().all(|m| active.contains(m));
    Ok(SingleFit {
        truth: ctx.truth,
        kernels: ctx.kernels,
        sample,
        gram,
        solution,
        err_l2sq,
        support_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub n: usize,
    pub homogeneous_mean: f64,
    pub inhomogeneous_mean: f64,
    /// `inhomogeneous / homogeneous`.
    pub ratio: f64,
    pub inhomogeneous_not_worse: bool,
}

/// Paired homogeneous/inhomogeneous comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub points: Vec<ProfilePoint>,
    /// Leading term of the l2-ball bound divided by that of the
    /// l-infinity-ball bound, `d^{(1+q)/(1+q+s)} R_2^{2s/(1+q+s)} / (d R_inf^{2s/(1+q+s)})`,
    /// for the inhomogeneous truth. Equals one for the homogeneous truth.
    pub reference_bound_ratio: f64,
    pub homogeneous: RateReport,
    pub inhomogeneous: RateReport,
}

impl ProfileComparison {
    pub fn all_not_worse(&self) -> bool {
        self.points.iter().all(|p| p.inhomogeneous_not_worse)
    }
}

/// Runs both profiles with paired seeds. The configurations must agree on
/// every field except the profile.
pub fn compare_profiles(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<ProfileComparison> {
    if a.profile == b.profile {
        return Err(param("profile", "the two configurations use the same profile"));
    }
    let mut aligned = b.clone();
    aligned.profile = a.profile;
    if &aligned != a {
        return Err(param(
            "config",
            "configurations differ in fields other than the profile",
        ));
    }
    let (hom_cfg, inh_cfg) = if a.profile == NormProfile::Homogeneous {
        (a, b)
    } else {
        (b, a)
    };
    let homogeneous = run_sweep(hom_cfg)?;
    let inhomogeneous = run_sweep(inh_cfg)?;
    let points = homogeneous
        .per_n
        .iter()
        .zip(&inhomogeneous.per_n)
        .map(|(h, i)| ProfilePoint {
            n: h.n,
            homogeneous_mean: h.mean_error,
            inhomogeneous_mean: i.mean_error,
            ratio: i.mean_error / h.mean_error,
            inhomogeneous_not_worse: i.mean_error <= h.mean_error,
        })
        .collect();
    let kernel = inh_cfg.kernel()?;
    let truth = inh_cfg.truth(&kernel)?;
    let r_inf = mixed_norm(&truth, &kernel, f64::INFINITY)?;
    let (s, q, d) = (a.s, a.q, a.d as f64);
    let denom = 1.0 + q + s;
    let reference_bound_ratio = d.powf((1.0 + q) / denom) * inhomogeneous.r2.powf(2.0 * s / denom)
        / (d * r_inf.powf(2.0 * s / denom));
    Ok(ProfileComparison {
        points,
        reference_bound_ratio,
        homogeneous,
        inhomogeneous,
    })
}

/// Column names of the per-cell CSV.
pub const CSV_HEADER: [&str; 14] = [
    "n",
    "rep",
    "seed",
    "s",
    "q",
    "d",
    "M",
    "profile",
    "lambda_bar",
    "lambda1",
    "err_l2sq",
    "support_ok",
    "sweeps",
    "runtime_ms",
];

/// Round-trip float formatting with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV row per cell.
pub fn write_csv<W: Write>(report: &RateReport, writer: W) -> Result<()> {
    let c = &report.config;
    let mut out = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Experiment(format!("csv output failed: {e}"));
    out.write_record(CSV_HEADER).map_err(io)?;
    let profile = match c.profile {
        NormProfile::Homogeneous => "homogeneous",
        NormProfile::Inhomogeneous => "inhomogeneous",
    };
    for r in &report.rows {
        out.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            format_f64(c.s),
            format_f64(c.q),
            c.d.to_string(),
            c.num_kernels.to_string(),
            profile.to_string(),
            format_f64(r.lambda_bar),
            format_f64(r.lambda1),
            format_f64(r.err_l2sq),
            r.support_ok.to_string(),
            r.sweeps.to_string(),
            format_f64(r.runtime_ms),
        ])
        .map_err(io)?;
    }
    out.flush()
        .map_err(|e| Error::Experiment(format!("csv output failed: {e}")))?;
    Ok(())
}

/// Machine-readable digest of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub fitted_exponent: Option<f64>,
    pub exponent_se: Option<f64>,
    pub reference_exponent: f64,
    pub per_n: Vec<SampleSizeSummary>,
    pub r2: f64,
    pub lambda_scale: f64,
    pub truncation_floor: f64,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
    pub diagnostics: Option<crate::diagnostics::DiagnosticsReport>,
}

impl SweepSummary {
    pub fn new(
        report: &RateReport,
        diagnostics: Option<crate::diagnostics::DiagnosticsReport>,
    ) -> Self {
        SweepSummary {
            fitted_exponent: report.fit.map(|f| f.exponent),
            exponent_se: report.fit.map(|f| f.standard_error),
            reference_exponent: report.reference_exponent,
            per_n: report.per_n.clone(),
            r2: report.r2,
            lambda_scale: report.lambda_scale,
            truncation_floor: report.truncation_floor,
            warnings: report.warnings.clone(),
            config: report.config.clone(),
            diagnostics,
        }
    }
}

/// Dense `n_new x n` cross-kernel matrix `k_m(x_new, x_i)`; used to evaluate a
/// fitted component through its representer expansion.
pub fn cross_gram(
    kernel: &SpectralKernel,
    new_coords: &[f64],
    train_coords: &[f64],
) -> Result<DMatrix<f64>> {
    let a = kernel.feature_matrix(new_coords)?;
    let b = kernel.feature_matrix(train_coords)?;
    Ok(a * b.transpose())
}
