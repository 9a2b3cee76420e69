use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomoprior::phantom::{head_slice, synthetic_dataset};
use tomoprior::solver::fbp_initial_theta;
use tomoprior::{
    build_prior, objective_value, relative_mse, solve_plain_cs, solve_with_prior, AngleSet, CoefVector, DctBasis,
    EigenPrior, Error, Image, RadonOperator, Sinogram, SolveConfig, TemplateSet, ThetaProblem,
};

fn setup(n: usize, angles: usize) -> (RadonOperator, DctBasis) {
    (RadonOperator::new(n, n, AngleSet::uniform(angles).unwrap()).unwrap(), DctBasis::new(n, n).unwrap())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn in_span_problem(n: usize) -> (Image, EigenPrior) {
    let templates: Vec<Image> = (0..5).map(|k| head_slice(n, -0.4 + 0.08 * k as f64).unwrap()).collect();
    let prior = build_prior(&TemplateSet::new(templates).unwrap(), None).unwrap();
    let alpha: Vec<f64> = (0..prior.component_count()).map(|i| 0.5 / (i + 1) as f64).collect();
    let x = prior.reconstruct_from_alpha(&CoefVector::new(alpha).unwrap()).unwrap();
    (x, prior)
}

#[test]
fn recovers_one_sparse_dct_image() {
    let (op, basis) = setup(16, 36);
    let mut theta_true = vec![0.0; 256];
    theta_true[3 * 16 + 5] = 2.5;
    let x = basis.synthesize(&CoefVector::new(theta_true.clone()).unwrap()).unwrap();
    let y = op.forward(&x).unwrap();
    let cfg = SolveConfig { lambda1: 1e-9, inner_budget: 20_000, tol: 1e-15, ..Default::default() };
    let out = solve_plain_cs(&y, &op, &basis, &cfg).unwrap();
    let err = out.theta.data().iter().zip(&theta_true).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err <= 1e-4, "linf error {err}");
}

#[test]
fn large_lambda_zeroes_theta() {
    let (op, basis) = setup(16, 8);
    let y = op.forward(&head_slice(16, -0.2).unwrap()).unwrap();
    let atb = basis.analyze(&op.adjoint(&y).unwrap()).unwrap();
    let bound = 2.0 * atb.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cfg = SolveConfig { lambda1: bound * 1.001, ..Default::default() };
    let out = solve_plain_cs(&y, &op, &basis, &cfg).unwrap();
    assert!(out.theta.data().iter().all(|&v| v == 0.0));
}

#[test]
fn beats_fbp_objective_and_long_run_reference() {
    let (op, basis) = setup(24, 10);
    let y = op.forward(&head_slice(24, -0.25).unwrap()).unwrap();
    let cfg = SolveConfig { lambda1: 0.05, inner_budget: 400, ..Default::default() };
    let out = solve_plain_cs(&y, &op, &basis, &cfg).unwrap();
    let (_, theta_fbp) = fbp_initial_theta(&y, &op, &basis).unwrap();
    let e_fbp = objective_value(&CoefVector::new(theta_fbp).unwrap(), None, &y, &op, &basis, None, &cfg).unwrap();
    let e = objective_value(&out.theta, None, &y, &op, &basis, None, &cfg).unwrap();
    assert!(e <= e_fbp);

    let long = SolveConfig { inner_budget: 50 * cfg.inner_budget, tol: 0.0, ..cfg.clone() };
    let reference = solve_plain_cs(&y, &op, &basis, &long).unwrap();
    let e_ref = *reference.objective_trace.last().unwrap();
    assert!(e <= e_ref * 1.001, "objective {e} vs reference {e_ref}");
}

#[test]
fn in_span_image_recovered_from_few_angles() {
    let (x, prior) = in_span_problem(32);
    let (op, basis) = setup(32, 8);
    let y = op.forward(&x).unwrap();
    let cfg = SolveConfig { lambda1: 1e-6, lambda2: 10.0, ..Default::default() };
    let out = solve_with_prior(&y, &op, &basis, &prior, &cfg).unwrap();
    let rmse = relative_mse(&out.image, &x).unwrap();
    assert!(rmse <= 1e-3, "relative mse {rmse}");
    // Also without the pixel-count factor.
    assert!(rmse * 1024.0 <= 1e-2, "normalised squared error {}", rmse * 1024.0);
}

#[test]
fn zero_lambda2_matches_plain_cs_exactly() {
    let (x, prior) = in_span_problem(16);
    let (op, basis) = setup(16, 6);
    let y = op.forward(&x).unwrap();
    let cfg = SolveConfig { lambda1: 0.01, lambda2: 0.0, inner_budget: 300, ..Default::default() };
    let a = solve_plain_cs(&y, &op, &basis, &cfg).unwrap();
    let b = solve_with_prior(&y, &op, &basis, &prior, &cfg).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.image, b.image);
    assert_eq!(a.objective_trace, b.objective_trace);
}

/// Dense matrices of Phi and Psi built column by column from unit vectors.
fn dense(op: &RadonOperator, basis: &DctBasis, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut phi_cols = Vec::new();
    let mut psi_cols = Vec::new();
    for k in 0..n * n {
        let mut e = vec![0.0; n * n];
        e[k] = 1.0;
        phi_cols.push(op.forward(&Image::new(n, n, e.clone()).unwrap()).unwrap().into_data());
        psi_cols.push(basis.synthesize(&CoefVector::new(e).unwrap()).unwrap().into_data());
    }
    (phi_cols, psi_cols)
}

#[test]
fn objective_examples_and_dense_oracle() {
    let n = 8;
    let (op, basis) = setup(n, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = Sinogram::new(op.angles().clone(), op.bins(), random_vec(&mut rng, op.bins() * 5)).unwrap();
    let zero_mean = Image::zeros(n, n).unwrap();
    let mut v = vec![0.0; n * n];
    v[0] = 1.0;
    let prior0 = EigenPrior::from_parts(zero_mean, vec![v], vec![1.0]).unwrap();
    let cfg = SolveConfig { lambda1: 0.3, lambda2: 2.0, ..Default::default() };
    let ynorm: f64 = y.data().iter().map(|v| v * v).sum();
    let e = objective_value(&CoefVector::zeros(n * n), Some(&CoefVector::zeros(1)), &y, &op, &basis, Some(&prior0), &cfg)
        .unwrap();
    assert!((e - ynorm).abs() <= 1e-12 * ynorm);

    let theta = CoefVector::new(random_vec(&mut rng, n * n)).unwrap();
    let e1 = objective_value(&theta, None, &y, &op, &basis, None, &cfg).unwrap();
    let doubled = SolveConfig { lambda1: 2.0 * cfg.lambda1, ..cfg.clone() };
    let e2 = objective_value(&theta, None, &y, &op, &basis, None, &doubled).unwrap();
    assert!((e2 - e1 - cfg.lambda1 * theta.l1_norm()).abs() <= 1e-12 * e2);

    let (phi, psi) = dense(&op, &basis, n);
    let templates: Vec<Image> =
        (0..4).map(|_| Image::new(n, n, random_vec(&mut rng, n * n)).unwrap()).collect();
    let prior = build_prior(&TemplateSet::new(templates).unwrap(), None).unwrap();
    for _ in 0..5 {
        let theta = random_vec(&mut rng, n * n);
        let alpha = random_vec(&mut rng, prior.component_count());
        let got = objective_value(
            &CoefVector::new(theta.clone()).unwrap(),
            Some(&CoefVector::new(alpha.clone()).unwrap()),
            &y,
            &op,
            &basis,
            Some(&prior),
            &cfg,
        )
        .unwrap();
        let x: Vec<f64> = (0..n * n).map(|p| (0..n * n).map(|k| psi[k][p] * theta[k]).sum()).collect();
        let mut data = 0.0;
        for (r, yr) in y.data().iter().enumerate() {
            let ax: f64 = (0..n * n).map(|p| phi[p][r] * x[p]).sum();
            data += (ax - yr).powi(2);
        }
        let l1: f64 = theta.iter().map(|t| t.abs()).sum();
        let mut tether = 0.0;
        for p in 0..n * n {
            let mut r = prior.mean().data()[p];
            for (i, a) in alpha.iter().enumerate() {
                r += a * prior.eigenvector(i)[p];
            }
            tether += (x[p] - r).powi(2);
        }
        let want = data + cfg.lambda1 * l1 + cfg.lambda2 * tether;
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn outer_trace_is_monotone_and_alpha_step_exact() {
    let data = synthetic_dataset(32, 5, 0.2).unwrap();
    let prior = build_prior(&TemplateSet::new(data.templates.clone()).unwrap(), None).unwrap();
    let (op, basis) = setup(32, 10);
    let y = op.forward(&data.test).unwrap();
    let cfg = SolveConfig { lambda1: 1e-3, lambda2: 0.5, outer_iters: 10, inner_budget: 200, tol: 0.0 };
    let out = solve_with_prior(&y, &op, &basis, &prior, &cfg).unwrap();
    let t = &out.objective_trace;
    assert_eq!(t.len(), 11);
    for w in t.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * t[0], "trace rose: {t:?}");
    }
    // Partial gradient of the tether in alpha: -2 lambda2 V^T (x - mu - V alpha).
    let alpha = out.alpha.unwrap();
    let r = prior.reconstruct_from_alpha(&alpha).unwrap();
    let resid: Vec<f64> = out.image.data().iter().zip(r.data()).map(|(a, b)| a - b).collect();
    for i in 0..prior.component_count() {
        let g: f64 = -2.0 * cfg.lambda2 * prior.eigenvector(i).iter().zip(&resid).map(|(v, e)| v * e).sum::<f64>();
        assert!(g.abs() <= 1e-8, "component {i}: {g}");
    }
}

#[test]
fn theta_gradient_matches_finite_differences() {
    let n = 8;
    let (op, basis) = setup(n, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let templates: Vec<Image> =
        (0..4).map(|_| Image::new(n, n, random_vec(&mut rng, n * n)).unwrap()).collect();
    let prior = build_prior(&TemplateSet::new(templates).unwrap(), None).unwrap();
    for trial in 0..3 {
        let y = Sinogram::new(op.angles().clone(), op.bins(), random_vec(&mut rng, op.bins() * 6)).unwrap();
        let alpha = CoefVector::new(random_vec(&mut rng, prior.component_count())).unwrap();
        let p = ThetaProblem::with_prior(&y, &op, &basis, &prior, &alpha, 0.1, 0.7).unwrap();
        let theta = random_vec(&mut rng, n * n);
        let g = p.smooth_gradient(&theta);
        let h = 1e-5;
        let mut fd = vec![0.0; n * n];
        for k in 0..n * n {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            fd[k] = (p.smooth_value(&tp) - p.smooth_value(&tm)) / (2.0 * h);
        }
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-5, "trial {trial}: relative error {}", num / den);
    }
}

#[test]
fn strong_prior_pulls_onto_affine_subspace() {
    let (x, prior) = in_span_problem(16);
    let mut pert = x.data().to_vec();
    pert[100] += 0.3;
    let x = Image::new(16, 16, pert).unwrap();
    let (op, basis) = setup(16, 8);
    let y = op.forward(&x).unwrap();
    let cfg = SolveConfig { lambda1: 0.0, lambda2: 1e4, ..Default::default() };
    let out = solve_with_prior(&y, &op, &basis, &prior, &cfg).unwrap();
    let proj = prior.reconstruct_from_alpha(&prior.project_alpha(&out.image).unwrap()).unwrap();
    let dist: f64 = out.image.data().iter().zip(proj.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let xn: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dist <= 1e-3 * xn, "distance {dist}, norm {xn}");
}

#[test]
fn rejects_bad_input() {
    let (op, basis) = setup(16, 6);
    let (op2, _) = setup(16, 7);
    let y = op2.forward(&Image::zeros(16, 16).unwrap()).unwrap();
    let cfg = SolveConfig::default();
    assert!(matches!(solve_plain_cs(&y, &op, &basis, &cfg), Err(Error::InvalidArgument(_))));
    let y = op.forward(&Image::zeros(16, 16).unwrap()).unwrap();
    let bad = SolveConfig { lambda1: -1.0, ..Default::default() };
    assert!(solve_plain_cs(&y, &op, &basis, &bad).is_err());
    let bad = SolveConfig { outer_iters: 0, ..Default::default() };
    assert!(solve_plain_cs(&y, &op, &basis, &bad).is_err());
    let (_, prior) = in_span_problem(8);
    let cfg = SolveConfig { lambda2: 1.0, ..Default::default() };
    assert!(solve_with_prior(&y, &op, &basis, &prior, &cfg).is_err());
}

#[test]
fn overflow_reports_numerical_failure_with_trace() {
    let (op, basis) = setup(16, 6);
    let y = Sinogram::new(op.angles().clone(), op.bins(), vec![1e200; op.bins() * 6]).unwrap();
    match solve_plain_cs(&y, &op, &basis, &SolveConfig::default()) {
        Err(Error::NumericalFailure { trace, .. }) => assert!(!trace.is_empty()),
        other => panic!("expected numerical failure, got {other:?}"),
    }
}
