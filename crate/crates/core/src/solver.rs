//! Elastic-net MKL by block coordinate descent.
//!
//! The estimator minimizes, over representer coefficients `alpha_m`,
//!
//! ```text
//! (1/n) ||y - sum_m K_m alpha_m||^2
//!     + lambda1 sum_m sqrt(alpha_m^T (K_m K_m / n + lambda2 K_m) alpha_m)
//!     + lambda3 sum_m alpha_m^T K_m alpha_m .
//! ```
//!
//! Internally each block is solved in the reduced coordinates of its
//! [`BlockFactor`]: with `K_m = Z Z^T` and `Z^T Z = diag(s)`, the function
//! `K_m alpha_m` equals `Z w` for `w = Z^T alpha_m`, its RKHS norm is `||w||`
//! and its empirical norm is `sqrt(sum_j s_j w_j^2 / n)`. Both quadratic forms
//! of the block subproblem become diagonal, so the zero-block test and the
//! stationarity system are elementwise.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernel::{BlockFactor, GramSet};

/// Where a plan's `lambda` values came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanProvenance {
    Manual,
    Theory { lambda_bar: f64, t: f64, scale: f64 },
}

/// The three regularization weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPlan {
    /// Scale of the mixed l1 term.
    pub lambda1: f64,
    /// Weight of the RKHS norm inside the square root.
    pub lambda2: f64,
    /// Ridge weight.
    pub lambda3: f64,
    pub provenance: PlanProvenance,
}

impl RegularizationPlan {
    pub fn manual(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let plan = RegularizationPlan {
            lambda1,
            lambda2,
            lambda3,
            provenance: PlanProvenance::Manual,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(param("lambda1", format!("{} must be finite and >= 0", self.lambda1)));
        }
        if !(self.lambda2 > 0.0) || !self.lambda2.is_finite() {
            return Err(param("lambda2", format!("{} must be finite and > 0", self.lambda2)));
        }
        if !(self.lambda3 >= 0.0) || !self.lambda3.is_finite() {
            return Err(param("lambda3", format!("{} must be finite and >= 0", self.lambda3)));
        }
        Ok(())
    }

    pub fn with_lambda1(mut self, lambda1: f64) -> Self {
        self.lambda1 = lambda1;
        self.provenance = PlanProvenance::Manual;
        self
    }
}

/// `eta(t) = max(1, sqrt(t), t / sqrt(n))`.
pub fn eta(t: f64, n: usize) -> f64 {
    1f64.max(t.sqrt()).max(t / (n as f64).sqrt())
}

/// `xi_n(lambda) = max(lambda^{-s/2} / sqrt(n), lambda^{-1/2} / n^{1/(1+s)},
/// sqrt(log(M) / n))`. `num_kernels` is real-valued so that `M = e` can be
/// expressed.
pub fn xi_n(lambda_bar: f64, n: usize, s: f64, num_kernels: f64) -> f64 {
    let n = n as f64;
    let a = lambda_bar.powf(-s / 2.0) / n.sqrt();
    let b = lambda_bar.powf(-0.5) / n.powf(1.0 / (1.0 + s));
    let c = (num_kernels.ln() / n).sqrt();
    a.max(b).max(c)
}

/// Theory-driven plan: `lambda2 = lambda3 = lambda_bar`,
/// `lambda1 = scale * eta(t) * xi_n(lambda_bar)`. `scale` stands in for the
/// unknown constant of the rate theorem.
pub fn theory_plan(
    n: usize,
    num_kernels: usize,
    s: f64,
    lambda_bar: f64,
    t: f64,
    scale: f64,
) -> Result<RegularizationPlan> {
    if n < 2 {
        return Err(param("n", format!("{n} must be >= 2")));
    }
    if num_kernels < 2 {
        return Err(param("M", format!("{num_kernels} must be >= 2")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(param("s", format!("{s} is outside (0, 1)")));
    }
    if !(lambda_bar > 0.0) || !lambda_bar.is_finite() {
        return Err(param("lambda_bar", format!("{lambda_bar} must be > 0")));
    }
    if !(t >= 1.0) {
        return Err(param("t", format!("{t} must be >= 1")));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(param("scale", format!("{scale} must be finite and >= 0")));
    }
    let lambda1 = scale * eta(t, n) * xi_n(lambda_bar, n, s, num_kernels as f64);
    let plan = RegularizationPlan {
        lambda1,
        lambda2: lambda_bar,
        lambda3: lambda_bar,
        provenance: PlanProvenance::Theory {
            lambda_bar,
            t,
            scale,
        },
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockOrder {
    /// Blocks `0..M` every sweep.
    #[default]
    Cyclic,
    /// A fresh permutation every sweep, drawn from `seed`.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stopping threshold on the scaled maximum block KKT residual.
    pub tol: f64,
    pub max_sweeps: usize,
    pub order: BlockOrder,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_sweeps: 5_000,
            order: BlockOrder::Cyclic,
        }
    }
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct MklSolution {
    /// Representer coefficients `alpha_m`, one length-`n` vector per kernel.
    pub alpha_blocks: Vec<DVector<f64>>,
    /// Reduced coordinates `w_m` (see module docs).
    pub coords: Vec<DVector<f64>>,
    /// `K_m alpha_m` at the sample points.
    pub component_values: Vec<DVector<f64>>,
    /// Objective at the start (entry 0) and after every sweep.
    pub objective_history: Vec<f64>,
    /// Final maximum block KKT residual divided by `1 + ||y|| / sqrt(n)`.
    pub kkt_residual: f64,
    /// Kernels with a nonzero block.
    pub active_estimate: Vec<usize>,
    pub sweeps_used: usize,
    pub converged: bool,
    pub plan: RegularizationPlan,
}

impl MklSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }

    /// `sum_m K_m alpha_m` at the sample points.
    pub fn fitted_values(&self) -> DVector<f64> {
        let n = self.component_values.first().map_or(0, |v| v.len());
        self.component_values
            .iter()
            .fold(DVector::zeros(n), |acc, v| acc + v)
    }

    /// `||f_m||_n` for every block.
    pub fn empirical_norms(&self) -> Vec<f64> {
        self.component_values
            .iter()
            .map(|v| (v.norm_squared() / v.len() as f64).sqrt())
            .collect()
    }

    /// `||f_m||_H = ||w_m||` for every block.
    pub fn rkhs_norms(&self) -> Vec<f64> {
        self.coords.iter().map(|w| w.norm()).collect()
    }

    /// Serializable digest: plan, per-block norms, support, history.
    pub fn report(&self) -> SolutionReport {
        let empirical = self.empirical_norms();
        let rkhs = self.rkhs_norms();
        SolutionReport {
            plan: self.plan,
            blocks: empirical
                .iter()
                .zip(&rkhs)
                .enumerate()
                .map(|(index, (&empirical_norm, &rkhs_norm))| BlockNorms {
                    index,
                    empirical_norm,
                    rkhs_norm,
                })
                .collect(),
            active_set: self.active_estimate.clone(),
            objective_history: self.objective_history.clone(),
            kkt_residual: self.kkt_residual,
            sweeps_used: self.sweeps_used,
            converged: self.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNorms {
    pub index: usize,
    pub empirical_norm: f64,
    pub rkhs_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub plan: RegularizationPlan,
    pub blocks: Vec<BlockNorms>,
    pub active_set: Vec<usize>,
    pub objective_history: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps_used: usize,
    pub converged: bool,
}

/// Per-block diagonal data in reduced coordinates.
struct Diag {
    /// `s_j / n`, eigenvalues of `K_m / n`.
    sigma: Vec<f64>,
}

impl Diag {
    fn new(block: &BlockFactor) -> Self {
        let n = block.n() as f64;
        Diag {
            sigma: block.eigenvalues().iter().map(|s| s / n).collect(),
        }
    }
}

/// `sqrt(4 sum_j g_j^2 / (sigma_j + lambda2))`, the dual norm of the
/// block's smooth gradient at zero. Zero is optimal iff this is `<= lambda1`.
fn zero_gradient_norm(g: &[f64], sigma: &[f64], lambda2: f64) -> f64 {
    2.0 * g
        .iter()
        .zip(sigma)
        .map(|(gj, sj)| gj * gj / (sj + lambda2))
        .sum::<f64>()
        .sqrt()
}

/// Block objective without the constant `(1/n)||r||^2`:
/// `sum_j (sigma_j + lambda3) w_j^2 - 2 g_j w_j + lambda1 sqrt(sum_j (sigma_j + lambda2) w_j^2)`.
fn block_objective(w: &[f64], g: &[f64], sigma: &[f64], plan: &RegularizationPlan) -> f64 {
    let mut quad = 0.0;
    let mut lin = 0.0;
    let mut group = 0.0;
    for ((wj, gj), sj) in w.iter().zip(g).zip(sigma) {
        quad += (sj + plan.lambda3) * wj * wj;
        lin += gj * wj;
        group += (sj + plan.lambda2) * wj * wj;
    }
    quad - 2.0 * lin + plan.lambda1 * group.sqrt()
}

/// `block_objective(new) - block_objective(old)` in factored form, so the
/// rounding error scales with `new - old` rather than with the objective
/// itself. Comparing the two objectives directly stalls the iteration at a
/// gradient of order `sqrt(machine epsilon)`.
fn block_objective_change(
    new: &[f64],
    old: &[f64],
    g: &[f64],
    sigma: &[f64],
    plan: &RegularizationPlan,
) -> f64 {
    let mut smooth = 0.0;
    let mut group_sq = 0.0;
    for (((nj, oj), gj), sj) in new.iter().zip(old).zip(g).zip(sigma) {
        let diff = nj - oj;
        let sum = nj + oj;
        smooth += diff * ((sj + plan.lambda3) * sum - 2.0 * gj);
        group_sq += (sj + plan.lambda2) * diff * sum;
    }
    let norms = group_norm(new, sigma, plan.lambda2) + group_norm(old, sigma, plan.lambda2);
    let group = if norms > 0.0 { group_sq / norms } else { 0.0 };
    smooth + plan.lambda1 * group
}

fn group_norm(w: &[f64], sigma: &[f64], lambda2: f64) -> f64 {
    w.iter()
        .zip(sigma)
        .map(|(wj, sj)| (sj + lambda2) * wj * wj)
        .sum::<f64>()
        .sqrt()
}

const BISECTION_REL_TOL: f64 = 1e-10;
const BISECTION_MAX_ITER: usize = 200;

/// Minimizes the block objective for a nonzero block.
///
/// Stationarity reads `2 c_j w_j - 2 g_j + lambda1 a_j w_j / t = 0` with
/// `c = sigma + lambda3`, `a = sigma + lambda2` and `t = sqrt(sum a_j w_j^2)`,
/// so `w_j(t) = g_j t / (c_j t + lambda1 a_j / 2)` and `t` is the root of
/// `psi(t) = t - sqrt(sum a_j w_j(t)^2)`. `psi` is negative near zero when the
/// zero test fails and positive at the unpenalized norm, and `psi(t)/t` is
/// increasing, so the root is unique.
fn solve_block(
    g: &[f64],
    sigma: &[f64],
    plan: &RegularizationPlan,
    warm: &[f64],
) -> Result<Vec<f64>> {
    let c: Vec<f64> = sigma.iter().map(|s| s + plan.lambda3).collect();
    let a: Vec<f64> = sigma.iter().map(|s| s + plan.lambda2).collect();

    let candidate = if plan.lambda1 == 0.0 {
        g.iter().zip(&c).map(|(gj, cj)| gj / cj).collect::<Vec<_>>()
    } else {
        let half_l1 = 0.5 * plan.lambda1;
        let w_at = |t: f64| -> Vec<f64> {
            g.iter()
                .zip(&c)
                .zip(&a)
                .map(|((gj, cj), aj)| gj * t / (cj * t + half_l1 * aj))
                .collect()
        };
        let psi = |t: f64| t - group_norm(&w_at(t), sigma, plan.lambda2);

        let t_hi = g
            .iter()
            .zip(&c)
            .zip(&a)
            .map(|((gj, cj), aj)| aj * (gj / cj).powi(2))
            .sum::<f64>()
            .sqrt();
        let t_lo = 1e-12 * t_hi;
        if !t_hi.is_finite() || t_hi <= 0.0 {
            return Err(Error::BlockUpdate(format!(
                "degenerate bracket upper end {t_hi}"
            )));
        }

        let t = if psi(t_lo) < 0.0 && psi(t_hi) > 0.0 {
            let (mut lo, mut hi) = (t_lo, t_hi);
            for _ in 0..BISECTION_MAX_ITER {
                let mid = 0.5 * (lo + hi);
                if psi(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= BISECTION_REL_TOL * hi {
                    break;
                }
            }
            0.5 * (lo + hi)
        } else {
            let profile = |t: f64| block_objective(&w_at(t), g, sigma, plan);
            golden_section(profile, t_lo, t_hi).ok_or_else(|| {
                Error::BlockUpdate("bisection bracket and golden-section fallback failed".into())
            })?
        };
        w_at(t)
    };

    if candidate.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlockUpdate("non-finite block coefficients".into()));
    }
    if block_objective_change(&candidate, warm, g, sigma, plan) <= 0.0 {
        Ok(candidate)
    } else {
        Ok(warm.to_vec())
    }
}

fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..BISECTION_MAX_ITER {
        if !(f1.is_finite() && f2.is_finite()) {
            return None;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
        if b - a <= BISECTION_REL_TOL * b {
            break;
        }
    }
    let t = 0.5 * (a + b);
    f(t).is_finite().then_some(t)
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

fn partial_gradient(block: &BlockFactor, residual: &DVector<f64>) -> Result<Vec<f64>> {
    let n = block.n() as f64;
    let g: Vec<f64> = block.z().tr_mul(residual).iter().map(|v| v / n).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite block gradient (n = {}, rank = {})",
            block.n(),
            block.rank()
        )));
    }
    Ok(g)
}

/// Full objective at representer coefficients `alpha_blocks`.
pub fn objective(
    y: &DVector<f64>,
    gram: &GramSet,
    alpha_blocks: &[DVector<f64>],
    plan: &RegularizationPlan,
) -> Result<f64> {
    let n = gram.n();
    check_len("objective labels", n, y.len())?;
    check_len("objective block count", gram.len(), alpha_blocks.len())?;
    let mut residual = y.clone();
    let mut penalty = 0.0;
    for (block, alpha) in gram.blocks().iter().zip(alpha_blocks) {
        check_len("objective alpha length", n, alpha.len())?;
        let w = block.coords_of(alpha);
        residual -= block.values_of(&w);
        let sigma = Diag::new(block).sigma;
        penalty += plan.lambda1 * group_norm(w.as_slice(), &sigma, plan.lambda2)
            + plan.lambda3 * w.norm_squared();
    }
    Ok(residual.norm_squared() / n as f64 + penalty)
}

/// Whether `alpha_m = 0` minimizes the block subproblem for partial
/// residual `residual = y - sum_{m' != m} K_{m'} alpha_{m'}`.
pub fn zero_block_test(
    residual: &DVector<f64>,
    block: &BlockFactor,
    plan: &RegularizationPlan,
) -> Result<bool> {
    plan.validate()?;
    check_len("zero_block_test residual", block.n(), residual.len())?;
    let g = partial_gradient(block, residual)?;
    let sigma = Diag::new(block).sigma;
    Ok(zero_gradient_norm(&g, &sigma, plan.lambda2) <= plan.lambda1)
}

/// Exact minimizer of the block subproblem for partial residual `residual`,
/// returned as minimum-norm representer coefficients. Never returns a point
/// with a larger block objective than `warm_start`.
pub fn block_update(
    residual: &DVector<f64>,
    block: &BlockFactor,
    plan: &RegularizationPlan,
    warm_start: &DVector<f64>,
) -> Result<DVector<f64>> {
    plan.validate()?;
    check_len("block_update residual", block.n(), residual.len())?;
    check_len("block_update warm start", block.n(), warm_start.len())?;
    let g = partial_gradient(block, residual)?;
    let sigma = Diag::new(block).sigma;
    if zero_gradient_norm(&g, &sigma, plan.lambda2) <= plan.lambda1 {
        return Ok(DVector::zeros(block.n()));
    }
    let warm = block.coords_of(warm_start);
    let w = solve_block(&g, &sigma, plan, warm.as_slice())?;
    Ok(block.alpha_of(&DVector::from_vec(w)))
}

/// Smallest `lambda1` for which the all-zero solution is optimal.
pub fn compute_lambda_max(y: &DVector<f64>, gram: &GramSet, lambda2: f64) -> Result<f64> {
    if !(lambda2 > 0.0) {
        return Err(param("lambda2", format!("{lambda2} must be > 0")));
    }
    check_len("compute_lambda_max labels", gram.n(), y.len())?;
    gram.blocks().iter().try_fold(0.0_f64, |acc, block| {
        let g = partial_gradient(block, y)?;
        let sigma = Diag::new(block).sigma;
        Ok(acc.max(zero_gradient_norm(&g, &sigma, lambda2)))
    })
}

/// Solves the elastic-net MKL problem by cyclic (or shuffled) block
/// coordinate descent.
///
/// Stops when the maximum block KKT residual divided by
/// `1 + ||y|| / sqrt(n)` drops to `options.tol`. Running out of sweeps is
/// reported as [`Error::NotConverged`] carrying the last iterate.
pub fn solve(
    y: &DVector<f64>,
    gram: &GramSet,
    plan: &RegularizationPlan,
    options: &SolverOptions,
) -> Result<MklSolution> {
    plan.validate()?;
    if !(options.tol > 0.0) {
        return Err(param("tol", format!("{} must be > 0", options.tol)));
    }
    if options.max_sweeps == 0 {
        return Err(param("max_sweeps", "must be >= 1"));
    }
    let n = gram.n();
    check_len("solve labels", n, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(param("y", "labels must be finite"));
    }

    let big_m = gram.len();
    let nf = n as f64;
    let scale = 1.0 + y.norm() / nf.sqrt();
    let diags: Vec<Diag> = gram.blocks().iter().map(Diag::new).collect();
    let mut coords: Vec<DVector<f64>> = gram
        .blocks()
        .iter()
        .map(|b| DVector::zeros(b.rank()))
        .collect();
    let mut residual = y.clone();
    let mut order: Vec<usize> = (0..big_m).collect();
    let mut shuffler = match options.order {
        BlockOrder::Cyclic => None,
        BlockOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    let mut history = vec![full_objective(&residual, &coords, &diags, plan)];
    let mut kkt = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        if let Some(rng) = shuffler.as_mut() {
            order.shuffle(rng);
        }
        for &m in &order {
            let block = gram.block(m);
            if block.rank() == 0 {
                continue;
            }
            let sigma = &diags[m].sigma;
            let g = block_partial_gradient(block, &residual, &coords[m], sigma)?;
            let new_w = if zero_gradient_norm(&g, sigma, plan.lambda2) <= plan.lambda1 {
                vec![0.0; block.rank()]
            } else {
                solve_block(&g, sigma, plan, coords[m].as_slice())?
            };
            let new_w = DVector::from_vec(new_w);
            let delta = &new_w - &coords[m];
            if delta.iter().any(|v| *v != 0.0) {
                residual -= block.z() * delta;
                coords[m] = new_w;
            }
        }
        if sweeps % 10 == 0 {
            residual = recompute_residual(y, gram, &coords);
        }
        let obj = full_objective(&residual, &coords, &diags, plan);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                sweep: sweeps,
                objective: obj,
            });
        }
        history.push(obj);
        kkt = max_kkt_residual(gram, &residual, &coords, &diags, plan)? / scale;
        if kkt <= options.tol {
            break;
        }
    }

    let alpha_blocks: Vec<DVector<f64>> = gram
        .blocks()
        .iter()
        .zip(&coords)
        .map(|(b, w)| {
            if b.rank() == 0 {
                DVector::zeros(n)
            } else {
                b.alpha_of(w)
            }
        })
        .collect();
    let component_values = gram
        .blocks()
        .iter()
        .zip(&coords)
        .map(|(b, w)| {
            if b.rank() == 0 {
                DVector::zeros(n)
            } else {
                b.values_of(w)
            }
        })
        .collect();
    let active_estimate = coords
        .iter()
        .enumerate()
        .filter(|(_, w)| w.iter().any(|v| *v != 0.0))
        .map(|(m, _)| m)
        .collect();
    let solution = MklSolution {
        alpha_blocks,
        coords,
        component_values,
        objective_history: history,
        kkt_residual: kkt,
        active_estimate,
        sweeps_used: sweeps,
        converged: kkt <= options.tol,
        plan: *plan,
    };
    if solution.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged {
            sweeps,
            kkt_residual: kkt,
            solution: Box::new(solution),
        })
    }
}

/// `Z^T r / n + sigma * w`: the gradient data of block `m` against the
/// partial residual `r + Z w`, using `Z^T Z = diag(n sigma)`.
fn block_partial_gradient(
    block: &BlockFactor,
    residual: &DVector<f64>,
    w: &DVector<f64>,
    sigma: &[f64],
) -> Result<Vec<f64>> {
    let mut g = partial_gradient(block, residual)?;
    for ((gj, wj), sj) in g.iter_mut().zip(w.iter()).zip(sigma) {
        *gj += sj * wj;
    }
    Ok(g)
}

fn recompute_residual(y: &DVector<f64>, gram: &GramSet, coords: &[DVector<f64>]) -> DVector<f64> {
    let mut r = y.clone();
    for (block, w) in gram.blocks().iter().zip(coords) {
        if block.rank() > 0 {
            r -= block.values_of(w);
        }
    }
    r
}

fn full_objective(
    residual: &DVector<f64>,
    coords: &[DVector<f64>],
    diags: &[Diag],
    plan: &RegularizationPlan,
) -> f64 {
    let n = residual.len() as f64;
    let penalty: f64 = coords
        .iter()
        .zip(diags)
        .map(|(w, d)| {
            plan.lambda1 * group_norm(w.as_slice(), &d.sigma, plan.lambda2)
                + plan.lambda3 * w.norm_squared()
        })
        .sum();
    residual.norm_squared() / n + penalty
}

/// Largest block KKT violation at the current iterate (unscaled).
///
/// Zero blocks: `max(0, G - lambda1)` with `G` the zero-test statistic.
/// Nonzero blocks: Euclidean norm of the block gradient in reduced
/// coordinates.
fn max_kkt_residual(
    gram: &GramSet,
    residual: &DVector<f64>,
    coords: &[DVector<f64>],
    diags: &[Diag],
    plan: &RegularizationPlan,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (m, block) in gram.blocks().iter().enumerate() {
        if block.rank() == 0 {
            continue;
        }
        let sigma = &diags[m].sigma;
        let w = &coords[m];
        let g = block_partial_gradient(block, residual, w, sigma)?;
        let res = block_kkt(w.as_slice(), &g, sigma, plan);
        worst = worst.max(res);
    }
    Ok(worst)
}

fn block_kkt(w: &[f64], g: &[f64], sigma: &[f64], plan: &RegularizationPlan) -> f64 {
    if w.iter().all(|v| *v == 0.0) {
        return (zero_gradient_norm(g, sigma, plan.lambda2) - plan.lambda1).max(0.0);
    }
    let t = group_norm(w, sigma, plan.lambda2);
    w.iter()
        .zip(g)
        .zip(sigma)
        .map(|((wj, gj), sj)| {
            let v = 2.0 * (sj + plan.lambda3) * wj - 2.0 * gj
                + plan.lambda1 * (sj + plan.lambda2) * wj / t;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// KKT report of an arbitrary point, for certificates in tests and
/// diagnostics: `(per-block residuals, per-block zero-test statistics)`.
pub fn kkt_certificate(
    y: &DVector<f64>,
    gram: &GramSet,
    solution: &MklSolution,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let plan = &solution.plan;
    let residual = recompute_residual(y, gram, &solution.coords);
    let mut residuals = Vec::with_capacity(gram.len());
    let mut statistics = Vec::with_capacity(gram.len());
    for (m, block) in gram.blocks().iter().enumerate() {
        let sigma = Diag::new(block).sigma;
        let w = &solution.coords[m];
        let g = block_partial_gradient(block, &residual, w, &sigma)?;
        residuals.push(block_kkt(w.as_slice(), &g, &sigma, plan));
        statistics.push(zero_gradient_norm(&g, &sigma, plan.lambda2));
    }
    Ok((residuals, statistics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn identity_set(n: usize) -> GramSet {
        GramSet::from_gram_matrices(vec![DMatrix::identity(n, n)]).unwrap()
    }

    #[test]
    fn eta_branches() {
        assert_eq!(eta(1.0, 100), 1.0);
        assert_eq!(eta(1.0, 7), 1.0);
        assert_abs_diff_eq!(eta(1e4, 100), 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eta(4.0, 10_000), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn xi_n_example() {
        let xi = xi_n(1.0, 100, 0.5, std::f64::consts::E);
        assert_abs_diff_eq!(xi, 0.1, epsilon = 1e-15);
        // middle branch alone
        let b = 1.0 / 100f64.powf(1.0 / 1.5);
        assert_abs_diff_eq!(b, 0.046_415_888_336_127_78, epsilon = 1e-15);
    }

    #[test]
    fn theory_plan_settings() {
        let plan = theory_plan(100, 3, 0.5, 0.2, 1.0, 2.0).unwrap();
        assert_eq!(plan.lambda2, 0.2);
        assert_eq!(plan.lambda3, 0.2);
        assert_abs_diff_eq!(plan.lambda1, 2.0 * xi_n(0.2, 100, 0.5, 3.0), epsilon = 1e-15);
        assert!(theory_plan(1, 3, 0.5, 0.2, 1.0, 1.0).is_err());
        assert!(theory_plan(100, 1, 0.5, 0.2, 1.0, 1.0).is_err());
        assert!(theory_plan(100, 3, 0.5, 0.0, 1.0, 1.0).is_err());
        assert!(theory_plan(100, 3, 0.5, 0.2, 0.5, 1.0).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(RegularizationPlan::manual(-1.0, 1.0, 0.0).is_err());
        assert!(RegularizationPlan::manual(1.0, 0.0, 0.0).is_err());
        assert!(RegularizationPlan::manual(1.0, 1.0, -0.1).is_err());
        assert!(RegularizationPlan::manual(0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn objective_hand_example() {
        let set = identity_set(2);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let alpha = vec![DVector::from_vec(vec![1.0, 0.0])];
        let plan = RegularizationPlan::manual(1.0, 1.0, 1.0).unwrap();
        let value = objective(&y, &set, &alpha, &plan).unwrap();
        assert_abs_diff_eq!(value, 1.5f64.sqrt() + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_at_zero_is_mean_square() {
        let set = identity_set(3);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let plan = RegularizationPlan::manual(3.0, 0.5, 2.0).unwrap();
        let zero = vec![DVector::zeros(3)];
        assert_abs_diff_eq!(
            objective(&y, &set, &zero, &plan).unwrap(),
            y.norm_squared() / 3.0,
            epsilon = 1e-15
        );
        assert!(objective(&y, &set, &[DVector::zeros(2)], &plan).is_err());
    }

    #[test]
    fn zero_test_edge_cases() {
        let set = identity_set(3);
        let zero = DVector::zeros(3);
        let r = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        for l1 in [0.0, 0.5, 10.0] {
            let plan = RegularizationPlan::manual(l1, 1.0, 0.0).unwrap();
            assert!(zero_block_test(&zero, set.block(0), &plan).unwrap());
        }
        let plan = RegularizationPlan::manual(0.0, 1.0, 0.0).unwrap();
        assert!(!zero_block_test(&r, set.block(0), &plan).unwrap());
    }

    #[test]
    fn warm_start_at_optimum_is_kept() {
        let set = identity_set(2);
        let r = DVector::from_vec(vec![1.0, 1.0]);
        let plan = RegularizationPlan::manual(0.1, 0.5, 0.2).unwrap();
        let first = block_update(&r, set.block(0), &plan, &DVector::zeros(2)).unwrap();
        let second = block_update(&r, set.block(0), &plan, &first).unwrap();
        assert!((first - second).amax() < 1e-10);
    }

    #[test]
    fn lambda_max_of_zero_labels() {
        let set = identity_set(4);
        assert_eq!(compute_lambda_max(&DVector::zeros(4), &set, 1.0).unwrap(), 0.0);
        assert!(compute_lambda_max(&DVector::zeros(4), &set, 0.0).is_err());
    }

    #[test]
    fn objective_change_matches_difference() {
        let plan = RegularizationPlan::manual(0.3, 0.2, 0.05).unwrap();
        let g = [0.4, -0.2, 0.1];
        let sigma = [0.5, 0.1, 0.01];
        let old = [0.3, -0.1, 0.2];
        let new = [0.35, -0.15, 0.05];
        let direct = block_objective(&new, &g, &sigma, &plan) - block_objective(&old, &g, &sigma, &plan);
        let change = block_objective_change(&new, &old, &g, &sigma, &plan);
        assert!((direct - change).abs() < 1e-14, "{direct} vs {change}");
        assert_eq!(block_objective_change(&old, &old, &g, &sigma, &plan), 0.0);
        let zero = [0.0; 3];
        let from_zero = block_objective(&new, &g, &sigma, &plan) - block_objective(&zero, &g, &sigma, &plan);
        assert!((block_objective_change(&new, &zero, &g, &sigma, &plan) - from_zero).abs() < 1e-14);
    }

    #[test]
    fn not_converged_is_an_error() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.0, 0.9, 1.0, 0.2, 0.0, 0.2, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.4, 0.5, 1.0, 0.6, 0.4, 0.6, 1.0]);
        let set = GramSet::from_gram_matrices(vec![a, b]).unwrap();
        let y = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let plan = RegularizationPlan::manual(0.05, 0.1, 0.0).unwrap();
        let options = SolverOptions {
            tol: 1e-14,
            max_sweeps: 1,
            order: BlockOrder::Cyclic,
        };
        match solve(&y, &set, &plan, &options) {
            Err(Error::NotConverged { sweeps, solution, .. }) => {
                assert_eq!(sweeps, 1);
                assert!(!solution.converged);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn solve_rejects_bad_options() {
        let set = identity_set(2);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let plan = RegularizationPlan::manual(0.1, 1.0, 0.0).unwrap();
        let mut options = SolverOptions::default();
        options.tol = 0.0;
        assert!(solve(&y, &set, &plan, &options).is_err());
        options.tol = 1e-6;
        options.max_sweeps = 0;
        assert!(solve(&y, &set, &plan, &options).is_err());
        let short = DVector::from_vec(vec![1.0]);
        assert!(solve(&short, &set, &plan, &SolverOptions::default()).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let t = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(t, 0.3, epsilon = 1e-6);
    }
}
