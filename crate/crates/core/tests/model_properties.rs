mod common;

use mklrate::kernel::{assemble_factored, assemble_gram, SamplePoints, SpectralKernel};
use mklrate::synthetic::{build_truth, evaluate_truth, sample_data, truth_at_points, NoiseKind, NormProfile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_power_contracts(
        s in 0.1f64..0.95,
        beta in 0.01f64..1.0,
        coeffs in proptest::collection::vec(-5.0f64..5.0, 1..32),
    ) {
        let kernel = SpectralKernel::power_law(s, 32).unwrap();
        let out = kernel.apply_operator_power(&coeffs, beta).unwrap();
        for (o, c) in out.iter().zip(&coeffs) {
            prop_assert!(o.abs() <= c.abs());
        }
    }

    #[test]
    fn assembled_grams_are_valid(
        seed in any::<u64>(),
        n in 2usize..40,
        m in 1usize..4,
        k in 1usize..24,
    ) {
        let kernels = vec![SpectralKernel::power_law(0.5, k).unwrap(); m];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let columns = (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let points = SamplePoints::from_columns(columns).unwrap();
        let dense = assemble_gram(&kernels, &points).unwrap();
        dense.check_invariants().unwrap();
        let factored = assemble_factored(&kernels, &points).unwrap();
        factored.check_invariants().unwrap();
        for b in 0..m {
            let direct = common::pointwise_gram(&kernels[b], points.column(b));
            // The factor drops eigenvalues below 1e-10 of the largest (<= n).
            let gap = (factored.gram_matrix(b) - &direct).amax();
            prop_assert!(gap < 1e-9 * n as f64, "factored gap {}", gap);
            prop_assert!((dense.gram_matrix(b) - &direct).amax() < 1e-12);
        }
    }
}

#[test]
fn parseval_matches_monte_carlo() {
    let kernel = SpectralKernel::power_law(0.5, 32).unwrap();
    let kernels = vec![kernel.clone(); 3];
    for q in [0.0, 0.5, 1.0] {
        let truth = build_truth(3, 2, q, NormProfile::Inhomogeneous, 0.0, &kernel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        for m in truth.active_set().to_vec() {
            let coeffs = truth.f_coefficients(m).unwrap();
            let exact: f64 = coeffs.iter().map(|c| c * c).sum();
            let vals: Vec<f64> = (0..n)
                .map(|_| {
                    let mut x = vec![0.5; 3];
                    x[m] = rng.random::<f64>();
                    // Centered components: only coordinate m contributes a
                    // varying term; subtract the other active component.
                    let full = evaluate_truth(&truth, &kernels, &x).unwrap();
                    let other: f64 = truth
                        .active_set()
                        .iter()
                        .filter(|&&j| j != m)
                        .map(|&j| kernel.evaluate_expansion(truth.f_coefficients(j).unwrap(), 0.5).unwrap())
                        .sum();
                    (full - other).powi(2)
                })
                .collect();
            let nf = n as f64;
            let mean = vals.iter().sum::<f64>() / nf;
            let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
            assert!((mean - exact).abs() <= 3.0 * se, "q {q} m {m}: {mean} vs {exact} (se {se})");
        }
    }
}

#[test]
fn components_are_empirically_orthogonal() {
    let kernel = SpectralKernel::power_law(0.5, 64).unwrap();
    let kernels = vec![kernel.clone(); 2];
    let truth = build_truth(2, 2, 0.0, NormProfile::Homogeneous, 0.1, &kernel).unwrap();
    let n = 10_000;
    let sample = sample_data(&truth, &kernels, n, NoiseKind::Uniform, 22).unwrap();
    let f0: Vec<f64> = sample
        .points
        .column(0)
        .iter()
        .map(|&x| kernel.evaluate_expansion(truth.f_coefficients(0).unwrap(), x).unwrap())
        .collect();
    let f1: Vec<f64> = sample
        .points
        .column(1)
        .iter()
        .map(|&x| kernel.evaluate_expansion(truth.f_coefficients(1).unwrap(), x).unwrap())
        .collect();
    let inner = f0.iter().zip(&f1).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let norm = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = 4.0 / (n as f64).sqrt()
        * norm(truth.f_coefficients(0).unwrap())
        * norm(truth.f_coefficients(1).unwrap());
    assert!(inner.abs() < bound, "{inner} vs {bound}");
    // Labels minus noise are the truth at the sampled points.
    let clean = truth_at_points(&truth, &kernels, &sample.points).unwrap();
    for i in 0..n {
        assert!((sample.labels[i] - sample.noise[i] - clean[i]).abs() < 1e-12);
    }
}

#[test]
fn smoother_truths_have_smaller_rkhs_norm() {
    let kernel = SpectralKernel::power_law(0.5, 64).unwrap();
    let mut previous = f64::INFINITY;
    for step in 0..=10 {
        let q = step as f64 / 10.0;
        let truth = build_truth(2, 1, q, NormProfile::Homogeneous, 0.1, &kernel).unwrap();
        let norm = truth.f_rkhs_norm(0, &kernel);
        assert!(norm <= previous + 1e-15, "q {q}: {norm} > {previous}");
        previous = norm;
    }
}
