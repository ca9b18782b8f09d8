//! Spectral kernels on the unit interval and the Gram matrices they induce.
//!
//! Every kernel here is a finite Mercer expansion
//!
//! ```text
//! k(x, y) = sum_{k=1..K} mu_k phi_k(x) phi_k(y),   phi_k(x) = sqrt(2) cos(pi k x)
//! ```
//!
//! over the uniform distribution on `[0, 1]`. The basis is orthonormal and
//! centered, so a function `f = sum_k b_k phi_k` has `||f||_{L2}^2 = sum b_k^2`
//! and `||f||_H^2 = sum b_k^2 / mu_k`. Because the rank is finite, each Gram
//! matrix factors as `K_m = Z_m Z_m^T` with at most `K` columns; [`GramSet`]
//! keeps only that factor and materializes dense matrices on request.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg::{asymmetry, sorted_symmetric_eigen, RANK_TOLERANCE};

/// Number of grid points used to enforce `sup_x k(x, x) <= 1`.
pub const NORMALIZATION_GRID: usize = 10_001;

/// Default number of basis terms.
pub const DEFAULT_TRUNCATION: usize = 128;

/// Orthonormal system the expansion is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `phi_k(x) = sqrt(2) cos(pi k x)` on `[0, 1]`, `k >= 1`.
    #[default]
    Cosine,
}

impl Basis {
    /// Writes `phi_1(x), ..., phi_K(x)` into `out`.
    pub fn evaluate_into(self, x: f64, out: &mut [f64]) -> Result<()> {
        check_domain(x)?;
        match self {
            Basis::Cosine => {
                // cos(k t) by the Chebyshev recurrence; one libm call per point.
                let c1 = (std::f64::consts::PI * x).cos();
                let (mut prev, mut cur) = (1.0, c1);
                for slot in out.iter_mut() {
                    *slot = std::f64::consts::SQRT_2 * cur;
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                }
            }
        }
        Ok(())
    }
}

fn check_domain(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain { value: x })
    }
}

/// A finite-rank kernel with prescribed Mercer eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralKernel {
    s_exponent: f64,
    eigenvalues: Vec<f64>,
    basis: Basis,
    /// Global factor applied to the raw spectrum by normalization.
    scale: f64,
}

impl SpectralKernel {
    /// `mu_k = k^(-1/s)` for `k = 1..truncation`, then normalized so that
    /// `sup_x k(x, x) <= 1`.
    pub fn power_law(s_exponent: f64, truncation: usize) -> Result<Self> {
        check_s(s_exponent)?;
        let raw = (1..=truncation)
            .map(|k| (k as f64).powf(-1.0 / s_exponent))
            .collect();
        Self::with_spectrum(s_exponent, raw, Basis::Cosine)
    }

    /// Builds a kernel from an explicit spectrum. The spectrum must be
    /// positive and nonincreasing; it is rescaled if the diagonal of the
    /// kernel exceeds one anywhere on the normalization grid.
    pub fn with_spectrum(s_exponent: f64, spectrum: Vec<f64>, basis: Basis) -> Result<Self> {
        check_s(s_exponent)?;
        if spectrum.is_empty() {
            return Err(param("truncation_level", "at least one basis term is required"));
        }
        if spectrum.iter().any(|&mu| !(mu > 0.0) || !mu.is_finite()) {
            return Err(param("eigenvalues", "eigenvalues must be positive and finite"));
        }
        if spectrum.windows(2).any(|w| w[1] > w[0]) {
            return Err(param("eigenvalues", "eigenvalues must be nonincreasing"));
        }
        let mut kernel = SpectralKernel {
            s_exponent,
            eigenvalues: spectrum,
            basis,
            scale: 1.0,
        };
        let sup = kernel.diagonal_sup();
        if sup > 1.0 {
            kernel.eigenvalues.iter_mut().for_each(|mu| *mu /= sup);
            kernel.scale = 1.0 / sup;
        }
        Ok(kernel)
    }

    pub fn s_exponent(&self) -> f64 {
        self.s_exponent
    }

    pub fn truncation_level(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Normalization factor applied to the configured spectrum.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Tightest `(c', c)` with `c' k^(-1/s) <= mu_k <= c k^(-1/s)`.
    pub fn decay_constants(&self) -> (f64, f64) {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, mu)| mu * ((i + 1) as f64).powf(1.0 / self.s_exponent))
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    /// Largest value of `k(x, x)` over the normalization grid.
    pub fn diagonal_sup(&self) -> f64 {
        let mut phi = vec![0.0; self.truncation_level()];
        (0..NORMALIZATION_GRID)
            .map(|i| {
                let x = i as f64 / (NORMALIZATION_GRID - 1) as f64;
                self.basis
                    .evaluate_into(x, &mut phi)
                    .expect("grid point lies in the domain");
                phi.iter()
                    .zip(&self.eigenvalues)
                    .map(|(p, mu)| mu * p * p)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `phi_1(x), ..., phi_K(x)`.
    pub fn basis_values(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.truncation_level()];
        self.basis.evaluate_into(x, &mut out)?;
        Ok(out)
    }

    /// `k(x, y) = sum_k mu_k phi_k(x) phi_k(y)`.
    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64> {
        let px = self.basis_values(x)?;
        let py = self.basis_values(y)?;
        Ok(px
            .iter()
            .zip(&py)
            .zip(&self.eigenvalues)
            .map(|((a, b), mu)| mu * (a * b))
            .sum())
    }

    /// Basis coefficients of `T^beta f` for `f = sum_k b_k phi_k`, i.e.
    /// `(mu_k^beta b_k)_k`.
    pub fn apply_operator_power(&self, coefficients: &[f64], beta: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(param("beta", format!("{beta} is outside [0, 1]")));
        }
        if coefficients.len() > self.truncation_level() {
            return Err(Error::DimensionMismatch {
                context: "apply_operator_power coefficients",
                expected: self.truncation_level(),
                found: coefficients.len(),
            });
        }
        Ok(coefficients
            .iter()
            .zip(&self.eigenvalues)
            .map(|(b, mu)| mu.powf(beta) * b)
            .collect())
    }

    /// `||f||_{L2}^2` for `f = sum_k b_k phi_k`.
    pub fn l2_norm_sq(&self, coefficients: &[f64]) -> f64 {
        coefficients.iter().map(|b| b * b).sum()
    }

    /// `||f||_H^2 = sum_k b_k^2 / mu_k`.
    pub fn rkhs_norm_sq(&self, coefficients: &[f64]) -> f64 {
        coefficients
            .iter()
            .zip(&self.eigenvalues)
            .map(|(b, mu)| b * b / mu)
            .sum()
    }

    /// Evaluates `sum_k b_k phi_k(x)`.
    pub fn evaluate_expansion(&self, coefficients: &[f64], x: f64) -> Result<f64> {
        let mut phi = vec![0.0; coefficients.len()];
        self.basis.evaluate_into(x, &mut phi)?;
        Ok(phi.iter().zip(coefficients).map(|(p, b)| p * b).sum())
    }

    /// `n x K` matrix with entries `phi_k(x_i)`.
    pub fn basis_matrix(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.truncation_level();
        let mut out = DMatrix::zeros(coords.len(), k);
        let mut phi = vec![0.0; k];
        for (i, &x) in coords.iter().enumerate() {
            self.basis.evaluate_into(x, &mut phi)?;
            for (j, p) in phi.iter().enumerate() {
                out[(i, j)] = *p;
            }
        }
        Ok(out)
    }

    /// `n x K` feature matrix `Z` with `Z Z^T` equal to the Gram matrix:
    /// entries `sqrt(mu_k) phi_k(x_i)`.
    pub fn feature_matrix(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        let mut z = self.basis_matrix(coords)?;
        for (j, mu) in self.eigenvalues.iter().enumerate() {
            z.column_mut(j).scale_mut(mu.sqrt());
        }
        Ok(z)
    }
}

fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(param("s", format!("{s} is outside (0, 1)")))
    }
}

/// `n` input points in `[0, 1]^M`, stored column-wise so that kernel `m`
/// reads coordinate `m` as a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoints {
    columns: Vec<Vec<f64>>,
}

impl SamplePoints {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(param("inputs", "at least one coordinate is required"));
        }
        let n = columns[0].len();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "input columns",
                expected: n,
                found: bad.len(),
            });
        }
        Ok(SamplePoints { columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "input tuple arity",
                    expected: dim,
                    found: row.len(),
                });
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::from_columns(columns)
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arity `M` of each point.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, m: usize) -> &[f64] {
        &self.columns[m]
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Reduced factor of one Gram matrix: `K = Z Z^T` where the columns of `Z`
/// are mutually orthogonal with squared norms equal to the nonzero
/// eigenvalues of `K` (nonincreasing). Directions below the rank tolerance
/// are dropped.
#[derive(Debug, Clone)]
pub struct BlockFactor {
    z: DMatrix<f64>,
    sq_norms: DVector<f64>,
    /// Maps reduced coordinates back to the raw feature coordinates of the
    /// spectral route (`K x r`); absent for factors built from dense Grams.
    feature_map: Option<DMatrix<f64>>,
}

impl BlockFactor {
    /// From raw features `F` (`n x p`) with `K = F F^T`.
    pub fn from_features(features: &DMatrix<f64>) -> Self {
        let n = features.nrows();
        let cross = features.transpose() * features;
        let (values, vectors) = sorted_symmetric_eigen(cross);
        let top = values.iter().cloned().fold(0.0, f64::max);
        let rank = if top > 0.0 {
            values.iter().filter(|&&v| v > RANK_TOLERANCE * top).count()
        } else {
            0
        };
        let map = vectors.columns(0, rank).into_owned();
        let z = if rank > 0 {
            features * &map
        } else {
            DMatrix::zeros(n, 0)
        };
        let sq_norms = DVector::from_iterator(rank, z.column_iter().map(|c| c.norm_squared()));
        BlockFactor {
            z,
            sq_norms,
            feature_map: Some(map),
        }
    }

    /// From a dense symmetric PSD Gram matrix.
    pub fn from_gram(gram: &DMatrix<f64>) -> Self {
        let n = gram.nrows();
        let (values, vectors) = sorted_symmetric_eigen(gram.clone());
        let top = if n > 0 { values[0].max(0.0) } else { 0.0 };
        let rank = if top > 0.0 {
            values.iter().filter(|&&v| v > RANK_TOLERANCE * top).count()
        } else {
            0
        };
        let mut z = DMatrix::zeros(n, rank);
        for j in 0..rank {
            z.set_column(j, &(vectors.column(j) * values[j].sqrt()));
        }
        let sq_norms = DVector::from_iterator(rank, values.iter().take(rank).cloned());
        BlockFactor {
            z,
            sq_norms,
            feature_map: None,
        }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    /// The `n x r` factor.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Nonzero eigenvalues of `K`, nonincreasing.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.sq_norms
    }

    pub fn feature_map(&self) -> Option<&DMatrix<f64>> {
        self.feature_map.as_ref()
    }

    /// Materializes `K = Z Z^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut k = &self.z * self.z.transpose();
        // symmetrize away rounding
        let n = k.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (k[(i, j)] + k[(j, i)]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Reduced coordinates `w = Z^T alpha` of the function `K alpha`.
    pub fn coords_of(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.z.tr_mul(alpha)
    }

    /// Minimum-norm representer coefficients `alpha` with `K alpha = Z w`.
    pub fn alpha_of(&self, w: &DVector<f64>) -> DVector<f64> {
        let scaled = w.component_div(&self.sq_norms);
        &self.z * scaled
    }

    /// Function values `Z w` at the sample points.
    pub fn values_of(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.z * w
    }
}

/// The `M` Gram matrices of a design, held as reduced factors.
#[derive(Debug, Clone)]
pub struct GramSet {
    blocks: Vec<BlockFactor>,
    points: Option<SamplePoints>,
    dense: Option<Vec<DMatrix<f64>>>,
}

impl GramSet {
    /// Wraps precomputed Gram matrices (black-box kernels). Each must be
    /// square, of a common size, and symmetric within `1e-10`.
    pub fn from_gram_matrices(grams: Vec<DMatrix<f64>>) -> Result<Self> {
        if grams.is_empty() {
            return Err(param("gram_matrices", "at least one kernel is required"));
        }
        let n = grams[0].nrows();
        for g in &grams {
            if g.nrows() != n || g.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "gram matrix size",
                    expected: n,
                    found: g.ncols().max(g.nrows()),
                });
            }
            let asym = asymmetry(g);
            if asym > 1e-10 {
                return Err(Error::Contract(format!(
                    "gram matrix is not symmetric (max asymmetry {asym:.3e})"
                )));
            }
        }
        let blocks = grams.iter().map(BlockFactor::from_gram).collect();
        Ok(GramSet {
            blocks,
            points: None,
            dense: Some(grams),
        })
    }

    pub fn from_factors(blocks: Vec<BlockFactor>) -> Result<Self> {
        let n = blocks.first().map(BlockFactor::n).ok_or_else(|| {
            param("blocks", "at least one kernel is required")
        })?;
        if let Some(b) = blocks.iter().find(|b| b.n() != n) {
            return Err(Error::DimensionMismatch {
                context: "factor row count",
                expected: n,
                found: b.n(),
            });
        }
        Ok(GramSet {
            blocks,
            points: None,
            dense: None,
        })
    }

    /// Number of kernels `M`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sample count `n`.
    pub fn n(&self) -> usize {
        self.blocks[0].n()
    }

    pub fn block(&self, m: usize) -> &BlockFactor {
        &self.blocks[m]
    }

    pub fn blocks(&self) -> &[BlockFactor] {
        &self.blocks
    }

    pub fn sample_points(&self) -> Option<&SamplePoints> {
        self.points.as_ref()
    }

    /// Dense `K_m`, either the stored matrix or `Z Z^T`.
    pub fn gram_matrix(&self, m: usize) -> DMatrix<f64> {
        match &self.dense {
            Some(d) => d[m].clone(),
            None => self.blocks[m].gram(),
        }
    }

    /// Nonzero eigenvalues of `K_m / n`, nonincreasing.
    pub fn empirical_spectrum(&self, m: usize) -> Vec<f64> {
        let n = self.n() as f64;
        self.blocks[m].eigenvalues().iter().map(|v| v / n).collect()
    }

    /// Returns a copy with kernels reordered: block `i` of the result is
    /// block `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> GramSet {
        GramSet {
            blocks: order.iter().map(|&m| self.blocks[m].clone()).collect(),
            points: None,
            dense: self
                .dense
                .as_ref()
                .map(|d| order.iter().map(|&m| d[m].clone()).collect()),
        }
    }

    /// Checks symmetry, positive semidefiniteness and the diagonal bound on
    /// every materialized `K_m`.
    pub fn check_invariants(&self) -> Result<()> {
        for m in 0..self.len() {
            let k = self.gram_matrix(m);
            let asym = asymmetry(&k);
            if asym > 1e-10 {
                return Err(Error::Contract(format!("K_{m} asymmetry {asym:.3e}")));
            }
            if let Some(d) = k.diagonal().iter().find(|&&d| d > 1.0 + 1e-10) {
                return Err(Error::Contract(format!("K_{m} has diagonal entry {d}")));
            }
            let (values, _) = sorted_symmetric_eigen(k);
            let (top, bottom) = (values[0], values[values.len() - 1]);
            if bottom < -1e-8 * top.max(0.0) {
                return Err(Error::Contract(format!(
                    "K_{m} has eigenvalue {bottom:.3e} against top {top:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Assembles dense Gram matrices `K_m[i][j] = k_m(x_i^(m), x_j^(m))` and
/// factors them. Cost is `O(M n^3)`; see [`assemble_factored`] for large `n`.
pub fn assemble_gram(kernels: &[SpectralKernel], points: &SamplePoints) -> Result<GramSet> {
    check_arity(kernels, points)?;
    let n = points.len();
    let mut grams = Vec::with_capacity(kernels.len());
    for (m, kernel) in kernels.iter().enumerate() {
        let coords = points.column(m);
        let phi = kernel.basis_matrix(coords)?;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        phi.row(i)
                            .iter()
                            .zip(phi.row(j).iter())
                            .zip(kernel.eigenvalues())
                            .map(|((a, b), mu)| mu * (a * b))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut k = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                k[(i, j)] = *v;
            }
        }
        grams.push(k);
    }
    let mut set = GramSet::from_gram_matrices(grams)?;
    set.points = Some(points.clone());
    Ok(set)
}

/// Builds the Gram set directly from the spectral feature map, never forming
/// an `n x n` matrix. Cost is `O(M n K^2)`.
pub fn assemble_factored(kernels: &[SpectralKernel], points: &SamplePoints) -> Result<GramSet> {
    check_arity(kernels, points)?;
    let blocks = kernels
        .iter()
        .enumerate()
        .map(|(m, kernel)| {
            kernel
                .feature_matrix(points.column(m))
                .map(|f| BlockFactor::from_features(&f))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = GramSet::from_factors(blocks)?;
    set.points = Some(points.clone());
    Ok(set)
}

fn check_arity(kernels: &[SpectralKernel], points: &SamplePoints) -> Result<()> {
    if kernels.is_empty() {
        return Err(param("kernels", "at least one kernel is required"));
    }
    if kernels.len() != points.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel count vs input arity",
            expected: kernels.len(),
            found: points.dim(),
        });
    }
    if points.is_empty() {
        return Err(param("n", "at least one sample is required"));
    }
    Ok(())
}

/// Eigenvalues of `K / n` for one dense Gram matrix, nonincreasing.
pub fn empirical_spectrum(gram: &DMatrix<f64>) -> Result<Vec<f64>> {
    if gram.nrows() != gram.ncols() {
        return Err(Error::Contract(format!(
            "gram matrix is {}x{}, not square",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let asym = asymmetry(gram);
    if asym > 1e-10 {
        return Err(Error::Contract(format!(
            "gram matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let n = gram.nrows() as f64;
    let (values, _) = sorted_symmetric_eigen(gram / n);
    Ok(values.iter().cloned().collect())
}
