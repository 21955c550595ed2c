#[path = "common/oracle.rs"]
mod oracle;

use ols_attention::attention::{construct_ols_params, forward, OlsConfiguration, TransformerParams};
use ols_attention::experiment::{random_instance, Design};
use ols_attention::matrix::{empirical_covariance, Matrix};
use ols_attention::memory::{context_predict, distortion_matrix, matched_context, shift_experiment, ContextTask, ShiftSpec};
use ols_attention::ols::{hat_projection, ols_fit};
use ols_attention::rng::Rng;
use ols_attention::spectral::{symmetric_eigendecompose, whitening_factor, Cholesky, DEFAULT_RANK_TOL, JACOBI_TOL};
use ols_attention::trainer::{train, AdamConfig, AdamState, ScalarModel, TrainConfig};
use proptest::prelude::*;

fn design() -> impl Strategy<Value = Design> {
    prop_oneof![Just(Design::Gaussian), Just(Design::Uniform)]
}

/// `(seed, n, k)` with `n ∈ [k + 1, 120]`.
fn dims() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=8).prop_flat_map(|(seed, k)| (Just(seed), (k + 1)..=120usize, Just(k)))
}

fn random_symmetric(seed: u64, k: usize) -> Matrix {
    let a = Rng::new(seed).gaussian_matrix(k, k);
    a.add(&a.transpose()).unwrap().scale(0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_reconstructs(seed in any::<u64>(), k in 1usize..=10) {
        let m = random_symmetric(seed, k);
        let eig = symmetric_eigendecompose(&m, JACOBI_TOL).unwrap();
        let v = &eig.eigenvectors;
        let vl = v.matmul(&Matrix::from_diagonal(&eig.eigenvalues)).unwrap();
        let back = vl.matmul_t(v).unwrap();
        prop_assert!(back.max_abs_diff(&m).unwrap() <= 1e-10 * m.max_abs().max(1.0));
        prop_assert!(v.t_matmul(v).unwrap().max_abs_diff(&Matrix::identity(k)).unwrap() <= 1e-10);
        prop_assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn whitening_identity_and_inverse((seed, n, k) in dims(), d in design()) {
        let x = d.sample(&mut Rng::new(seed), n, k).unwrap();
        let cov = empirical_covariance(&x);
        let f = whitening_factor(&cov, DEFAULT_RANK_TOL).unwrap();
        let xl = x.matmul(&f.whitening).unwrap();
        prop_assert!(empirical_covariance(&xl).max_abs_diff(&Matrix::identity(k)).unwrap() <= 1e-8);
        let gj = oracle::gauss_jordan_inverse(cov.as_slice(), k).unwrap();
        prop_assert!(oracle::relative_frobenius(f.inverse().as_slice(), &gj) <= 1e-8);
    }

    #[test]
    fn attention_matches_ols((seed, n, k) in dims(), d in design(), noisy in any::<bool>()) {
        let inst = random_instance(&mut Rng::new(seed), n, k, d, noisy).unwrap();
        let config = construct_ols_params(&inst.x, &inst.y).unwrap();
        let out = forward(&config.params, &inst.x).unwrap();
        let fit = ols_fit(&inst.x, &inst.y).unwrap();
        prop_assert!(out.relative_frobenius_diff(&fit.fitted).unwrap() <= 1e-8);
        prop_assert!(config.coefficients().relative_frobenius_diff(&fit.beta).unwrap() <= 1e-8);
    }

    #[test]
    fn gauge_invariance((seed, n, k) in dims(), d in design()) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, n, k, d, true).unwrap();
        let base = construct_ols_params(&inst.x, &inst.y).unwrap();
        let q = rng.orthogonal_matrix(k);
        let rotated = OlsConfiguration::from_whitening(&inst.x, &inst.y, base.whitening.matmul(&q).unwrap()).unwrap();
        let a = forward(&base.params, &inst.x).unwrap();
        let b = forward(&rotated.params, &inst.x).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn duplicating_rows_changes_nothing((seed, n, k) in dims(), d in design()) {
        let inst = random_instance(&mut Rng::new(seed), n, k, d, true).unwrap();
        let x2 = inst.x.vstack(&inst.x).unwrap();
        let y2 = inst.y.vstack(&inst.y).unwrap();
        let once = forward(&construct_ols_params(&inst.x, &inst.y).unwrap().params, &inst.x).unwrap();
        let twice = forward(&construct_ols_params(&x2, &y2).unwrap().params, &x2).unwrap();
        let top = Matrix::from_fn(n, 1, |i, _| twice[(i, 0)]);
        prop_assert!(top.max_abs_diff(&once).unwrap() <= 1e-10);
    }

    #[test]
    fn forward_is_linear_in_projection(seed in any::<u64>(), n in 1usize..40, k in 1usize..6, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian_matrix(n, k);
        let w = |rng: &mut Rng| rng.gaussian_matrix(k, k);
        let (wq, wk, wv, wf) = (w(&mut rng), w(&mut rng), w(&mut rng), w(&mut rng));
        let p1 = rng.gaussian_matrix(k, 1);
        let p2 = rng.gaussian_matrix(k, 1);
        let with = |p: Matrix| TransformerParams::new(wq.clone(), wk.clone(), wv.clone(), wf.clone(), p).unwrap();
        let combo = forward(&with(p1.scale(a).add(&p2.scale(b)).unwrap()), &x).unwrap();
        let sum = forward(&with(p1), &x).unwrap().scale(a).add(&forward(&with(p2), &x).unwrap().scale(b)).unwrap();
        prop_assert!(combo.max_abs_diff(&sum).unwrap() <= 1e-9 * sum.max_abs().max(1.0));
    }

    #[test]
    fn forward_matches_naive_products(seed in any::<u64>(), n in 1usize..30, k in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian_matrix(n, k);
        let ws: Vec<Matrix> = (0..4).map(|_| rng.gaussian_matrix(k, k)).collect();
        let p = rng.gaussian_matrix(k, 1);
        let params = TransformerParams::new(ws[0].clone(), ws[1].clone(), ws[2].clone(), ws[3].clone(), p.clone()).unwrap();
        let out = forward(&params, &x).unwrap();
        let mm = |a: &Matrix, b: &Matrix| oracle::naive_matmul(a.as_slice(), a.rows(), a.cols(), b.as_slice(), b.cols());
        let q = Matrix::new(n, k, mm(&x, &ws[0])).unwrap();
        let kk = Matrix::new(n, k, mm(&x, &ws[1])).unwrap();
        let v = Matrix::new(n, k, mm(&x, &ws[2])).unwrap();
        let scores = Matrix::new(n, n, mm(&q, &kk.transpose())).unwrap().scale(1.0 / n as f64);
        let attended = Matrix::new(n, k, mm(&scores, &v)).unwrap();
        let ffn = Matrix::new(n, k, mm(&attended, &ws[3])).unwrap();
        let expected = oracle::naive_matmul(ffn.as_slice(), n, k, p.as_slice(), 1);
        prop_assert!(oracle::max_abs_diff(out.as_slice(), &expected) <= 1e-9 * out.max_abs().max(1.0));
    }

    #[test]
    fn projection_is_idempotent((seed, n, k) in dims(), d in design()) {
        let inst = random_instance(&mut Rng::new(seed), n, k, d, true).unwrap();
        let once = hat_projection(&inst.x, &inst.y).unwrap();
        let twice = hat_projection(&inst.x, &once).unwrap();
        prop_assert!(twice.max_abs_diff(&once).unwrap() <= 1e-9 * once.max_abs().max(1.0));
    }

    #[test]
    fn cholesky_solve_satisfies_system(seed in any::<u64>(), k in 1usize..=8) {
        let mut rng = Rng::new(seed);
        let a = rng.gaussian_matrix(k + 3, k);
        let spd = a.t_matmul(&a).unwrap().add(&Matrix::identity(k).scale(0.1)).unwrap().symmetrized().unwrap();
        let b = rng.gaussian_matrix(k, 2);
        let x = Cholesky::new(&spd).unwrap().solve(&b).unwrap();
        prop_assert!(spd.matmul(&x).unwrap().max_abs_diff(&b).unwrap() <= 1e-9 * b.max_abs().max(1.0));
    }

    #[test]
    fn loss_is_even_in_l(seed in any::<u64>(), l in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let x = rng.uniform_matrix(50, 1, -1.0, 1.0);
        let y = x.scale(2.0).add(&rng.gaussian_matrix(50, 1).scale(0.01)).unwrap();
        let model = ScalarModel::new(&x, &y, l).unwrap();
        prop_assert_eq!(model.mse_at(l), model.mse_at(-l));
        let (_, g) = model.loss_and_grad();
        let (_, g_neg) = ScalarModel::new(&x, &y, -l).unwrap().loss_and_grad();
        prop_assert_eq!(g, -g_neg);
    }

    #[test]
    fn gradient_matches_central_difference(seed in any::<u64>(), l in 0.05f64..3.0, n in 2usize..200) {
        let mut rng = Rng::new(seed);
        let x = rng.uniform_matrix(n, 1, -1.0, 1.0);
        let y = x.scale(rng.uniform_in(-3.0, 3.0)).add(&rng.gaussian_matrix(n, 1).scale(0.1)).unwrap();
        let model = ScalarModel::new(&x, &y, l).unwrap();
        let (_, g) = model.loss_and_grad();
        let fd = oracle::central_difference(|t| model.mse_at(t), l, 1e-5 * l.abs().max(1e-2));
        prop_assert!((g - fd).abs() <= 1e-6 * g.abs() || (g - fd).abs() <= 1e-9, "analytic {g}, fd {fd}");
    }

    #[test]
    fn adam_state_stays_sane(grads in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = 0.0;
        for (i, g) in grads.iter().enumerate() {
            let (next, np) = state.step(*g, p);
            prop_assert!(next.m.is_finite() && next.v.is_finite() && next.v >= 0.0 && np.is_finite());
            prop_assert_eq!(next.step, i as u64 + 1);
            state = next;
            p = np;
        }
    }

    #[test]
    fn distortion_law_under_orthogonal_shift((seed, n, k) in dims(), d in design()) {
        let mut rng = Rng::new(seed);
        let inst = random_instance(&mut rng, n.max(2 * k), k, d, false).unwrap();
        let q = rng.orthogonal_matrix(k);
        let report = shift_experiment(&inst.x, &inst.y, &ShiftSpec::Orthogonal(q.clone()), seed ^ 1).unwrap();
        let z = matched_context(&inst.x, inst.x.rows(), seed ^ 1).unwrap().matmul(&q).unwrap();
        let beta = ols_fit(&inst.x, &inst.y).unwrap().beta;
        let sx_inv = oracle::gauss_jordan_inverse(report.sigma_x.as_slice(), k).unwrap();
        let sz = oracle::covariance_by_summation(z.as_slice(), z.rows(), k);
        let dist = oracle::naive_matmul(&sx_inv, k, k, &sz, k);
        prop_assert!(oracle::relative_frobenius(report.distortion.as_slice(), &dist) <= 1e-8);
        let db = oracle::naive_matmul(&dist, k, k, beta.as_slice(), 1);
        let expected = oracle::naive_matmul(z.as_slice(), z.rows(), k, &db, 1);
        prop_assert!(oracle::relative_frobenius(report.predicted.as_slice(), &expected) <= 1e-8);
    }

    #[test]
    fn context_prediction_is_distorted_regression(seed in any::<u64>(), k in 1usize..=6, m in 10usize..80) {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian_matrix(3 * k + 20, k);
        let z = rng.uniform_matrix(m.max(k + 1), k, -2.0, 2.0);
        let beta = rng.gaussian_matrix(k, 1);
        let l = whitening_factor(&empirical_covariance(&x), DEFAULT_RANK_TOL).unwrap().whitening;
        let task = ContextTask::noise_free(z.clone(), beta.clone()).unwrap();
        let predicted = context_predict(&l, &task).unwrap();
        let d = distortion_matrix(&x, &z).unwrap();
        let expected = z.matmul(&d.matmul(&beta).unwrap()).unwrap();
        prop_assert!(predicted.relative_frobenius_diff(&expected).unwrap() <= 1e-8);
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>(), epochs in 1usize..50) {
        let config = TrainConfig { seed, epochs, n: 64, ..TrainConfig::default() };
        prop_assert_eq!(train(&config).unwrap(), train(&config).unwrap());
    }
}
