mod common;

use common::{jacobi_eigenvalues, mat_pow, mat_vec, to_rows, PR_SWEEP};
use nalgebra::DVector;
use proptest::prelude::*;
use relu_dynamics::model::{reference_mean, SignalModel};
use relu_dynamics::rng::gaussian_substream;
use relu_dynamics::theory::{assemble_blocks, assemble_operator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_model(p: f64) -> SignalModel {
    SignalModel::with_activation(reference_mean(), 0.5, p).unwrap()
}

/// 50 random models: L ∈ {3, 5, 11}, μ ∈ [−2, 2], |a| ∈ [0.1, 2], p ∈ [0.02, 0.98].
fn random_sweep() -> Vec<SignalModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..50)
        .map(|i| {
            let l = [3, 5, 11][i % 3];
            let mu = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mag = rng.gen_range(0.1..2.0);
            let a = if rng.gen_bool(0.5) { mag } else { -mag };
            let p = rng.gen_range(0.02..0.98);
            SignalModel::with_activation(mu, a, p).unwrap()
        })
        .collect()
}

#[test]
fn blocks_match_monte_carlo() {
    let model = reference_model(0.3);
    let blocks = assemble_blocks(&model);
    let l = model.dim();
    let n = 10_000_000usize;

    // Running sums of each estimator and its square for standard errors.
    let mut r_sum = vec![0.0; l * l];
    let mut r_sq = vec![0.0; l * l];
    let mut rv_sum = vec![0.0; l];
    let mut rv_sq = vec![0.0; l];
    let mut p_sum = vec![0.0; l];
    let mut p_sq = vec![0.0; l];
    let mut gauss = gaussian_substream(77, 0);
    let mut x = vec![0.0; l];
    for _ in 0..n {
        let d = model.sample_into(&mut gauss, &mut x);
        if d <= 0.0 {
            continue;
        }
        for i in 0..l {
            rv_sum[i] += x[i];
            rv_sq[i] += x[i] * x[i];
            let pi = d * x[i];
            p_sum[i] += pi;
            p_sq[i] += pi * pi;
            for j in 0..l {
                let v = x[i] * x[j];
                r_sum[i * l + j] += v;
                r_sq[i * l + j] += v * v;
            }
        }
    }
    let nf = n as f64;
    let check = |name: &str, sum: f64, sq: f64, expect: f64| {
        let mean = sum / nf;
        let se = ((sq / nf - mean * mean) / nf).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * se + 1e-12,
            "{name}: mc {mean} theory {expect} se {se}"
        );
    };
    for i in 0..l {
        check(&format!("r[{i}]"), rv_sum[i], rv_sq[i], blocks.r[i]);
        check(&format!("p[{i}]"), p_sum[i], p_sq[i], blocks.p[i]);
        for j in 0..l {
            check(
                &format!("R[{i},{j}]"),
                r_sum[i * l + j],
                r_sq[i * l + j],
                blocks.r_matrix[(i, j)],
            );
        }
    }
    for i in 0..l {
        for j in 0..l {
            assert_eq!(blocks.r_matrix[(i, j)], blocks.r_matrix[(j, i)]);
        }
    }
}

#[test]
fn compact_and_block_forms_agree() {
    let mut models = random_sweep();
    models.extend(PR_SWEEP.iter().map(|&p| reference_model(p)));
    for m in &models {
        let op = assemble_operator(m);
        let blocks = assemble_blocks(m);
        let a_block = blocks.augmented_matrix();
        let b_block = blocks.augmented_forcing();
        let n = op.dim();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (op.a_matrix[(i, j)], a_block[(i, j)]);
                assert!((x - y).abs() <= 1e-12, "A[{i},{j}] {x} vs {y} for {m:?}");
            }
            let (x, y) = (op.forcing[i], b_block[i]);
            assert!((x - y).abs() <= 1e-12, "b[{i}] {x} vs {y}");
        }
        assert_eq!(op.a_matrix, op.a_matrix.transpose());
    }
}

#[test]
fn spectrum_matches_jacobi_and_has_degenerate_block() {
    let mut models: Vec<SignalModel> = PR_SWEEP.iter().map(|&p| reference_model(p)).collect();
    models.extend(random_sweep());
    for m in &models {
        let op = assemble_operator(m);
        let report = op.eigen_report().unwrap();
        let oracle = jacobi_eigenvalues(&to_rows(&op.a_matrix));
        for (x, y) in report.eigenvalues.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
        assert!(report.u0_multiplicity >= m.dim() - 2, "{report:?}");
        assert!((report.eta_max - 2.0 / report.lambda_max).abs() < 1e-15);

        let blocks = assemble_blocks(m);
        let r_eig = jacobi_eigenvalues(&to_rows(&blocks.r_matrix));
        assert!(r_eig[0] >= -1e-10, "R not PSD: {}", r_eig[0]);
    }
}

#[test]
fn reference_config_has_nine_fold_u0() {
    for &p in &PR_SWEEP {
        let report = assemble_operator(&reference_model(p)).eigen_report().unwrap();
        assert_eq!(report.u0_multiplicity, 9, "p={p}: {report:?}");
        assert!((report.u0 - p).abs() < 1e-10);
    }
}

#[test]
fn fixed_point_is_the_exact_model() {
    let mut models = random_sweep();
    models.extend(PR_SWEEP.iter().map(|&p| reference_model(p)));
    for m in &models {
        let op = assemble_operator(m);
        let target = DVector::from_vec(m.optimal_weights());
        let residual = (&op.a_matrix * &target - &op.forcing).amax();
        assert!(residual <= 1e-10, "{residual}");
        let solved = op.fixed_point().unwrap();
        assert!((&solved - &target).amax() <= 1e-9, "{solved} vs {target}");
        assert!((&op.a_matrix * &solved - &op.forcing).amax() < 1e-12);
    }
    let p5 = assemble_operator(&reference_model(0.5)).fixed_point().unwrap();
    let mut expect = vec![0.0; 12];
    expect[0] = 1.0;
    expect[11] = 0.5;
    for (x, e) in p5.iter().zip(expect) {
        assert!((x - e).abs() <= 1e-9);
    }
}

#[test]
fn trajectory_matches_matrix_power() {
    let m = reference_model(0.3);
    let op = assemble_operator(&m);
    let eta = 0.2 / op.eigen_report().unwrap().lambda_max;
    let target = m.optimal_weights();
    let w0: Vec<f64> = target.iter().enumerate().map(|(i, t)| t + 0.1 * ((i as f64) - 5.0)).collect();
    let traj = op.iterate_mean(&w0, eta, 1000).unwrap();

    let n = op.dim();
    let step: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (if i == j { 1.0 } else { 0.0 }) - eta * op.a_matrix[(i, j)])
                .collect()
        })
        .collect();
    let e0: Vec<f64> = w0.iter().zip(&target).map(|(w, t)| w - t).collect();
    let ek = mat_vec(&mat_pow(&step, 1000), &e0);
    for i in 0..n {
        let expect = ek[i] + target[i];
        assert!((traj.means[1000][i] - expect).abs() <= 1e-10);
    }
    let sq: f64 = ek.iter().map(|v| v * v).sum();
    assert!((traj.sq_error_norm[1000] - sq).abs() <= 1e-10);
}

#[test]
fn degenerate_mode_decays_geometrically() {
    let m = reference_model(0.2);
    let op = assemble_operator(&m);
    let eig = op.symmetric_eigen().unwrap();
    let idx = (0..op.dim())
        .find(|&i| (eig.eigenvalues[i] - op.u0).abs() < 1e-9)
        .unwrap();
    let v = eig.eigenvectors.column(idx);
    let w0: Vec<f64> = m.optimal_weights().iter().zip(v.iter()).map(|(t, vi)| t + 0.1 * vi).collect();
    let eta = 0.1 / op.eigen_report().unwrap().lambda_max;
    let traj = op.iterate_mean(&w0, eta, 200).unwrap();
    let factor = (1.0 - eta * op.u0).powi(2);
    for k in 0..200 {
        let ratio = traj.sq_error_norm[k + 1] / traj.sq_error_norm[k];
        assert!((ratio - factor).abs() <= 1e-10, "k={k} {ratio} vs {factor}");
    }
}

#[test]
fn averaged_curve_is_mean_of_trajectories() {
    let m = reference_model(0.4);
    let op = assemble_operator(&m);
    let eta = 0.005;
    let mut gauss = gaussian_substream(1, 0);
    let inits: Vec<Vec<f64>> = (0..5)
        .map(|_| m.optimal_weights().iter().map(|t| t + 0.1 * gauss.next_std()).collect())
        .collect();
    let curve = op.averaged_error_curve(&inits, eta, 100, 10).unwrap();
    assert_eq!(curve.len(), 11);
    for (slot, k) in (0..=100).step_by(10).enumerate() {
        let mean: f64 = inits
            .iter()
            .map(|w| op.iterate_mean(w, eta, 100).unwrap().sq_error_norm[k])
            .sum::<f64>()
            / 5.0;
        assert!((curve[slot] - mean).abs() <= 1e-14 * mean.max(1e-300), "k={k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smaller_activation_decays_slower(p_lo in 0.02f64..0.9, gap in 0.01f64..0.08, eta in 0.001f64..0.05) {
        let p_hi = (p_lo + gap).min(0.98);
        let lo = assemble_operator(&reference_model(p_lo));
        let hi = assemble_operator(&reference_model(p_hi));
        prop_assert!(1.0 - eta * lo.u0 > 1.0 - eta * hi.u0);
    }
}
