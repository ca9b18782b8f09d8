//! Independent oracles shared by the integration tests. Nothing here goes
//! through the solver's reduced coordinates.
#![allow(dead_code)]

use mklrate::kernel::SpectralKernel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Gram matrix built entry by entry from pointwise kernel evaluations.
pub fn pointwise_gram(kernel: &SpectralKernel, coords: &[f64]) -> DMatrix<f64> {
    let n = coords.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.evaluate(coords[i], coords[j]).unwrap();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `num_kernels` Gram matrices on fresh uniform coordinates.
pub fn random_grams<R: Rng>(
    rng: &mut R,
    kernel: &SpectralKernel,
    n: usize,
    num_kernels: usize,
) -> Vec<DMatrix<f64>> {
    (0..num_kernels)
        .map(|_| {
            let coords: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            pointwise_gram(kernel, &coords)
        })
        .collect()
}

/// The estimator's objective written out with scalar loops.
pub fn scalar_objective(
    y: &[f64],
    grams: &[DMatrix<f64>],
    alphas: &[Vec<f64>],
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let mut fit = y.to_vec();
    let mut penalty = 0.0;
    for (k, a) in grams.iter().zip(alphas) {
        let mut ka = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                ka[i] += k[(i, j)] * a[j];
            }
        }
        let emp: f64 = ka.iter().map(|v| v * v).sum::<f64>() / nf;
        let rkhs: f64 = a.iter().zip(&ka).map(|(x, y)| x * y).sum();
        penalty += lambda1 * (emp + lambda2 * rkhs).max(0.0).sqrt() + lambda3 * rkhs;
        for i in 0..n {
            fit[i] -= ka[i];
        }
    }
    fit.iter().map(|r| r * r).sum::<f64>() / nf + penalty
}

/// Nelder–Mead simplex minimization.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|x| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..dim)
                .map(|j| centroid[j] + t * (simplex[dim][j] - centroid[j]))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
        } else {
            let contracted = if fr < values[dim] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[dim].min(fr) {
                simplex[dim] = contracted;
                values[dim] = fc;
            } else {
                for i in 1..=dim {
                    for j in 0..dim {
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best])
}

/// Fitted values of the joint ridge problem: kernel ridge regression with
/// the summed kernel, `K (K + n lambda3 I)^{-1} y`.
pub fn joint_ridge_predictions(grams: &[DMatrix<f64>], y: &DVector<f64>, lambda3: f64) -> DVector<f64> {
    let n = y.len();
    let mut total = DMatrix::zeros(n, n);
    for g in grams {
        total += g;
    }
    let system = &total + DMatrix::identity(n, n) * (n as f64 * lambda3);
    let coef = system.lu().solve(y).expect("ridge system is nonsingular");
    total * coef
}
