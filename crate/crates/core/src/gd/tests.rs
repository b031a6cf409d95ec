use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::models::{simulate, Activation, RnnModel, RnnSpec};
use crate::numerics::{finite_diff_gradient, max_rel_error, Matrix, Signal, FD_STEP};
use crate::objectives::eval_objective;

fn random_model(rng: &mut SeededRng) -> RnnModel {
    let acts = [Activation::Tanh, Activation::Atan, Activation::Sigmoid];
    let act = acts[(rng.uniform(0.0, 3.0) as usize).min(2)];
    let n_x = 1 + (rng.uniform(0.0, 4.0) as usize).min(3);
    let width = 2 + (rng.uniform(0.0, 3.0) as usize).min(2);
    RnnModel::new(RnnSpec::shallow(n_x, 2, 1, width, act)).unwrap()
}

fn random_data(rng: &mut SeededRng, n: usize, n_exp: usize) -> Dataset {
    let exps = (0..n_exp)
        .map(|_| {
            let u: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            Experiment::new(Signal::from_rows(2, &u).unwrap(), Signal::scalar(&y)).unwrap()
        })
        .collect();
    Dataset::new(exps).unwrap()
}

fn random_vecs(rng: &mut SeededRng, count: usize, n: usize) -> Vec<Vector> {
    (0..count)
        .map(|_| Vector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0)))
        .collect()
}

fn regs() -> Vec<Regularizer> {
    vec![Regularizer::L2 {
        rho_theta: 0.03,
        rho_x: 0.2,
    }]
}

fn pack(x: &[Vec<Vector>], theta: &ParamVector) -> Vector {
    let mut v: Vec<f64> = x.iter().flatten().flat_map(|s| s.iter().copied()).collect();
    v.extend_from_slice(theta.as_slice());
    Vector::from_vec(v)
}

fn unpack(v: &Vector, shape: &[Vec<Vector>], theta: &ParamVector) -> (Vec<Vec<Vector>>, ParamVector) {
    let mut it = v.iter().copied();
    let x = shape
        .iter()
        .map(|xs| {
            xs.iter()
                .map(|s| Vector::from_iterator(s.len(), it.by_ref().take(s.len())))
                .collect()
        })
        .collect();
    let t = ParamVector::new(it.collect(), theta.n_theta_x()).unwrap();
    (x, t)
}

fn grad_error(vg: &ValueGrad, x: &[Vec<Vector>], theta: &ParamVector, f: impl Fn(&[Vec<Vector>], &ParamVector) -> f64) -> f64 {
    let z = pack(x, theta);
    let fd = finite_diff_gradient(
        |v| {
            let (xv, tv) = unpack(v, x, theta);
            f(&xv, &tv)
        },
        &z,
        FD_STEP,
    )
    .unwrap();
    let an = pack(&vg.grad_x, &ParamVector::new(vg.grad_theta.as_slice().to_vec(), theta.n_theta_x()).unwrap());
    max_rel_error(&Matrix::from_column_slice(an.len(), 1, an.as_slice()), &Matrix::from_column_slice(fd.len(), 1, fd.as_slice()), 1e-3)
}

#[test]
fn batch_lengths_and_indices() {
    assert_eq!(batch_lengths(10, 3).unwrap(), vec![4, 4, 2]);
    assert_eq!(batch_lengths(10, 1).unwrap(), vec![10]);
    assert_eq!(batch_lengths(10, 10).unwrap(), vec![1; 10]);
    assert_eq!(batch_lengths(20, 4).unwrap(), vec![5; 4]);
    assert!(batch_lengths(10, 6).is_err());
    assert!(batch_lengths(3, 4).is_err());
    assert_eq!(sample_index(&[3, 3, 4], 1, 2), 5);
    assert_eq!(sample_index(&[3, 3, 4], 0, 0), 0);
}

#[test]
fn condensed_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(1);
    for case in 0..20 {
        let m = random_model(&mut rng);
        let data = random_data(&mut rng, 20, 1 + case % 2);
        let theta = m.init_params(&mut rng, 1.0);
        let x0 = random_vecs(&mut rng, data.experiments.len(), m.n_x());
        let loss = Loss::mse(crate::numerics::SpdMatrix::from_diagonal(&[1.7])).unwrap();
        let vg = condensed_value_grad(&m, &loss, &regs(), &data, &x0, &theta).unwrap();
        let x: Vec<Vec<Vector>> = x0.iter().map(|v| vec![v.clone()]).collect();
        let err = grad_error(&vg, &x, &theta, |xv, tv| {
            let x0: Vec<Vector> = xv.iter().map(|v| v[0].clone()).collect();
            eval_objective(&loss, &regs(), &data, &m, tv, &x0).unwrap()
        });
        assert!(err < 1e-5, "case {case}: rel err {err}");
        let direct = eval_objective(&loss, &regs(), &data, &m, &theta, &x0).unwrap();
        assert_abs_diff_eq!(vg.value, direct, epsilon = 1e-12 * direct.abs().max(1.0));
    }
}

#[test]
fn condensed_gradient_cross_entropy() {
    let mut rng = SeededRng::new(2);
    let m = RnnModel::new(RnnSpec::linear(2, 2, 1).with_output_function(Activation::Sigmoid)).unwrap();
    let mut data = random_data(&mut rng, 15, 1);
    for k in 0..15 {
        let v = data.experiments[0].outputs.row(k)[0];
        data.experiments[0].outputs.row_mut(k)[0] = if v > 0.0 { 1.0 } else { 0.0 };
    }
    let theta = m.init_params(&mut rng, 1.0);
    let x0 = random_vecs(&mut rng, 1, 2);
    let loss = Loss::cross_entropy(0.005).unwrap();
    let vg = condensed_value_grad(&m, &loss, &regs(), &data, &x0, &theta).unwrap();
    let err = grad_error(&vg, &[vec![x0[0].clone()]], &theta, |xv, tv| {
        eval_objective(&loss, &regs(), &data, &m, tv, &[xv[0][0].clone()]).unwrap()
    });
    assert!(err < 1e-5, "rel err {err}");
}

fn linear_truth() -> (RnnModel, ParamVector, Dataset) {
    // x⁺ = 0.5 x + u, y = 2 x + 0.1 u.
    let m = RnnModel::new(RnnSpec::linear(1, 1, 1)).unwrap();
    let theta = ParamVector::new(vec![0.5, 1.0, 0.0, 2.0, 0.1, 0.0], 3).unwrap();
    let u = Signal::scalar(&[1.0, -0.5, 0.25, 0.8, -1.0]);
    let y = crate::models::simulate_outputs(&m, &theta, &[0.3], &u).unwrap();
    (m, theta, Dataset::single(u, y).unwrap())
}

#[test]
fn perfect_fit_has_only_regularization() {
    let (m, theta, data) = linear_truth();
    let loss = Loss::mse_identity(1);
    let x0 = vec![Vector::from_vec(vec![0.3])];
    let vg = condensed_value_grad(&m, &loss, &[], &data, &x0, &theta).unwrap();
    assert_eq!(vg.value, 0.0);
    assert!(vg.grad_theta.iter().all(|g| *g == 0.0));
    let with = condensed_value_grad(&m, &loss, &regs(), &data, &x0, &theta).unwrap();
    let r = reg_theta_value(&regs(), theta.as_slice()) + reg_x0_value(&regs(), &[0.3]);
    assert_abs_diff_eq!(with.value, r, epsilon = 1e-15);
}

#[test]
fn single_sample_chain_rule_by_hand() {
    // ŷ = c x0 + d u with c = 2, d = 0.1, x0 = 0.3, u = 1, y = 1.
    // V = ½(y - ŷ)², ∂V/∂x0 = -(y - ŷ) c, ∂V/∂c = -(y - ŷ) x0, ∂V/∂d = -(y - ŷ) u.
    let m = RnnModel::new(RnnSpec::linear(1, 1, 1)).unwrap();
    let theta = ParamVector::new(vec![0.5, 1.0, 0.0, 2.0, 0.1, 0.0], 3).unwrap();
    let data = Dataset::single(Signal::scalar(&[1.0]), Signal::scalar(&[1.0])).unwrap();
    let vg = condensed_value_grad(&m, &Loss::mse_identity(1), &[], &data, &[Vector::from_vec(vec![0.3])], &theta).unwrap();
    let r = 1.0 - (2.0 * 0.3 + 0.1);
    assert_abs_diff_eq!(vg.value, 0.5 * r * r, epsilon = 1e-15);
    assert_abs_diff_eq!(vg.grad_x[0][0][0], -r * 2.0, epsilon = 1e-15);
    let expected = [0.0, 0.0, 0.0, -r * 0.3, -r, -r];
    for (g, e) in vg.grad_theta.iter().zip(expected) {
        assert_abs_diff_eq!(*g, e, epsilon = 1e-15);
    }
}

fn exact_states(m: &RnnModel, theta: &ParamVector, data: &Dataset, x0: &[Vector]) -> Vec<Vec<Vector>> {
    data.experiments
        .iter()
        .zip(x0)
        .map(|(e, x)| simulate(m, theta, x.as_slice(), &e.inputs).unwrap().states)
        .collect()
}

#[test]
fn relaxed_on_trajectory_equals_condensed() {
    let mut rng = SeededRng::new(3);
    let m = random_model(&mut rng);
    let data = random_data(&mut rng, 12, 2);
    let theta = m.init_params(&mut rng, 1.0);
    let x0 = random_vecs(&mut rng, 2, m.n_x());
    let xs = exact_states(&m, &theta, &data, &x0);
    let loss = Loss::mse_identity(1);
    let v = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 0.5).unwrap();
    let c = eval_objective(&loss, &regs(), &data, &m, &theta, &x0).unwrap();
    assert_abs_diff_eq!(v, c, epsilon = 1e-12);
}

#[test]
fn relaxed_is_linear_in_gamma() {
    let mut rng = SeededRng::new(4);
    let m = random_model(&mut rng);
    let data = random_data(&mut rng, 10, 1);
    let theta = m.init_params(&mut rng, 1.0);
    let xs = vec![random_vecs(&mut rng, 10, m.n_x())];
    let loss = Loss::mse_identity(1);
    let v0 = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 0.0).unwrap();
    let v1 = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 1.0).unwrap();
    let v2 = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 2.0).unwrap();
    assert!(v1 > v0);
    assert_abs_diff_eq!(v2 - v1, v1 - v0, epsilon = 1e-12);
}

#[test]
fn relaxed_two_samples_by_hand() {
    // Scalar linear model a = 0.5, b = 1, c = 2, d = 0.1; x = [0.3, 1.0];
    // u = [1, -1], y = [1, 0], γ = 4, no regularization.
    // ŷ0 = 0.7, ŷ1 = 1.9; f0 = 0.5·0.3 + 1 = 1.15.
    // V = ½(0.3² + 1.9²)/2 + 4/(2·2)(1.0 - 1.15)².
    let m = RnnModel::new(RnnSpec::linear(1, 1, 1)).unwrap();
    let theta = ParamVector::new(vec![0.5, 1.0, 0.0, 2.0, 0.1, 0.0], 3).unwrap();
    let data = Dataset::single(Signal::scalar(&[1.0, -1.0]), Signal::scalar(&[1.0, 0.0])).unwrap();
    let xs = vec![vec![Vector::from_vec(vec![0.3]), Vector::from_vec(vec![1.0])]];
    let v = relaxed_value(&m, &Loss::mse_identity(1), &[], &data, &xs, &theta, 4.0).unwrap();
    let expected = 0.5 * (0.09 + 3.61) / 2.0 + 1.0 * 0.0225;
    assert_abs_diff_eq!(v, expected, epsilon = 1e-14);
}

#[test]
fn relaxed_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(5);
    for _ in 0..10 {
        let m = random_model(&mut rng);
        let data = random_data(&mut rng, 8, 2);
        let theta = m.init_params(&mut rng, 1.0);
        let xs: Vec<Vec<Vector>> = (0..2).map(|_| random_vecs(&mut rng, 8, m.n_x())).collect();
        let loss = Loss::mse_identity(1);
        let vg = relaxed_value_grad(&m, &loss, &regs(), &data, &xs, &theta, 0.7).unwrap();
        let v = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 0.7).unwrap();
        assert_abs_diff_eq!(vg.value, v, epsilon = 1e-12);
        let err = grad_error(&vg, &xs, &theta, |xv, tv| relaxed_value(&m, &loss, &regs(), &data, xv, tv, 0.7).unwrap());
        assert!(err < 1e-5, "rel err {err}");
    }
}

/// Per-sample term whose negative gradient is the relaxed step.
fn sample_term(m: &RnnModel, loss: &Loss, regs: &[Regularizer], exp: &Experiment, k: usize, x: &[Vector], theta: &ParamVector, gamma: f64, n: usize) -> f64 {
    let (u, y) = (exp.inputs.row(k), exp.outputs.row(k));
    let mut v = loss.value(y, m.output(x[k].as_slice(), u, theta.theta_y()).as_slice());
    if k + 1 < x.len() {
        v += 0.5 * gamma * (&x[k + 1] - m.state_update(x[k].as_slice(), u, theta.theta_x())).norm_squared();
    }
    let mut r = reg_theta_value(regs, theta.as_slice());
    if k == 0 {
        r += reg_x0_value(regs, x[0].as_slice());
    }
    v + r / n as f64
}

#[test]
fn relaxed_step_is_negative_gradient_of_sample_term() {
    let mut rng = SeededRng::new(6);
    for k in [0usize, 3, 7] {
        let m = random_model(&mut rng);
        let data = random_data(&mut rng, 8, 1);
        let exp = &data.experiments[0];
        let theta = m.init_params(&mut rng, 1.0);
        let xs = random_vecs(&mut rng, 8, m.n_x());
        let loss = Loss::mse_identity(1);
        let alpha = 1e-3;
        let (mut x1, mut t1) = (xs.clone(), theta.clone());
        sgd_relaxed_step(&m, &loss, &regs(), exp, k, &mut x1, &mut t1, 0.9, alpha, 8).unwrap();
        let shape = vec![xs.clone()];
        let fd = finite_diff_gradient(
            |v| {
                let (xv, tv) = unpack(v, &shape, &theta);
                sample_term(&m, &loss, &regs(), exp, k, &xv[0], &tv, 0.9, 8)
            },
            &pack(&shape, &theta),
            FD_STEP,
        )
        .unwrap();
        let step = (pack(&[x1], &t1) - pack(&shape, &theta)) / -alpha;
        let err = max_rel_error(
            &Matrix::from_column_slice(step.len(), 1, step.as_slice()),
            &Matrix::from_column_slice(fd.len(), 1, fd.as_slice()),
            1e-3,
        );
        assert!(err < 1e-5, "k = {k}: rel err {err}");
    }
}

#[test]
fn relaxed_step_at_feasible_stationary_point_is_identity() {
    let (m, theta, data) = linear_truth();
    let xs = exact_states(&m, &theta, &data, &[Vector::from_vec(vec![0.3])]);
    for k in 0..5 {
        let (mut x, mut t) = (xs[0].clone(), theta.clone());
        sgd_relaxed_step(&m, &Loss::mse_identity(1), &[], &data.experiments[0], k, &mut x, &mut t, 1e-4, 0.1, 5).unwrap();
        assert_eq!(x, xs[0]);
        assert_eq!(t, theta);
    }
}

#[test]
fn relaxed_step_applies_state_penalty_only_at_first_sample() {
    let (m, theta, data) = linear_truth();
    let xs = exact_states(&m, &theta, &data, &[Vector::from_vec(vec![0.3])]);
    let only_x = [Regularizer::L2 {
        rho_theta: 0.0,
        rho_x: 1.0,
    }];
    let exp = &data.experiments[0];
    let (mut x, mut t) = (xs[0].clone(), theta.clone());
    sgd_relaxed_step(&m, &Loss::mse_identity(1), &only_x, exp, 0, &mut x, &mut t, 1e-4, 0.1, 5).unwrap();
    // x0 ← x0 - α ρx x0 / N.
    assert_abs_diff_eq!(x[0][0], 0.3 - 0.1 * 0.3 / 5.0, epsilon = 1e-15);
    let (mut x, mut t) = (xs[0].clone(), theta.clone());
    sgd_relaxed_step(&m, &Loss::mse_identity(1), &only_x, exp, 2, &mut x, &mut t, 1e-4, 0.1, 5).unwrap();
    assert_eq!(x, xs[0]);
}

#[test]
fn relaxed_step_scalar_by_hand() {
    // Same scalar model; k = 0, x = [0.3, 1.0], u0 = 1, y0 = 1, γ = 4, α = 0.1.
    // e = y - ŷ = 0.3, r = x1 - f0 = -0.15.
    // ∂/∂x0 = -e c - γ a r = -0.6 + 0.3,  ∂/∂x1 = γ r = -0.6,
    // ∂/∂[a, b, bias_x] = -γ r [x0, u, 1], ∂/∂[c, d, bias_y] = -e [x0, u, 1].
    let m = RnnModel::new(RnnSpec::linear(1, 1, 1)).unwrap();
    let theta = ParamVector::new(vec![0.5, 1.0, 0.0, 2.0, 0.1, 0.0], 3).unwrap();
    let exp = Experiment::new(Signal::scalar(&[1.0, -1.0]), Signal::scalar(&[1.0, 0.0])).unwrap();
    let mut x = vec![Vector::from_vec(vec![0.3]), Vector::from_vec(vec![1.0])];
    let mut t = theta.clone();
    sgd_relaxed_step(&m, &Loss::mse_identity(1), &[], &exp, 0, &mut x, &mut t, 4.0, 0.1, 2).unwrap();
    assert_abs_diff_eq!(x[0][0], 0.3 - 0.1 * (-0.6 + 0.3), epsilon = 1e-14);
    assert_abs_diff_eq!(x[1][0], 1.0 - 0.1 * -0.6, epsilon = 1e-14);
    let g = [0.6 * 0.3, 0.6, 0.6, -0.3 * 0.3, -0.3, -0.3];
    for (i, gi) in g.iter().enumerate() {
        assert_abs_diff_eq!(t.as_slice()[i], theta.as_slice()[i] - 0.1 * gi, epsilon = 1e-14);
    }
}

#[test]
fn partial_on_trajectory_equals_condensed() {
    let mut rng = SeededRng::new(7);
    let m = random_model(&mut rng);
    let data = random_data(&mut rng, 20, 1);
    let theta = m.init_params(&mut rng, 1.0);
    let x0 = random_vecs(&mut rng, 1, m.n_x());
    let states = &exact_states(&m, &theta, &data, &x0)[0];
    let lengths = batch_lengths(20, 4).unwrap();
    let anchors = vec![(0..4).map(|j| states[sample_index(&lengths, j, 0)].clone()).collect()];
    let loss = Loss::mse_identity(1);
    let p = partial_value_grad(&m, &loss, &regs(), &data, &anchors, &theta, 0.3, 4).unwrap();
    let c = eval_objective(&loss, &regs(), &data, &m, &theta, &x0).unwrap();
    assert_abs_diff_eq!(p.value, c, epsilon = 1e-12);
}

#[test]
fn partial_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(8);
    for case in 0..10 {
        let m = random_model(&mut rng);
        let data = random_data(&mut rng, 20, 1 + case % 2);
        let theta = m.init_params(&mut rng, 1.0);
        let anchors: Vec<Vec<Vector>> = (0..data.experiments.len()).map(|_| random_vecs(&mut rng, 4, m.n_x())).collect();
        let loss = Loss::mse_identity(1);
        let vg = partial_value_grad(&m, &loss, &regs(), &data, &anchors, &theta, 0.8, 4).unwrap();
        let err = grad_error(&vg, &anchors, &theta, |xv, tv| {
            partial_value_grad(&m, &loss, &regs(), &data, xv, tv, 0.8, 4).unwrap().value
        });
        assert!(err < 1e-5, "case {case}: rel err {err}");
    }
}

#[test]
fn partial_reduces_to_condensed_and_relaxed() {
    let mut rng = SeededRng::new(9);
    for _ in 0..20 {
        let m = random_model(&mut rng);
        let n = 5 + (rng.uniform(0.0, 20.0) as usize);
        let data = random_data(&mut rng, n, 1);
        let theta = m.init_params(&mut rng, 1.0);
        let loss = Loss::mse_identity(1);
        let x0 = random_vecs(&mut rng, 1, m.n_x());
        let p1 = partial_value_grad(&m, &loss, &regs(), &data, &[x0.clone()], &theta, 0.4, 1).unwrap();
        let c = condensed_value_grad(&m, &loss, &regs(), &data, &x0, &theta).unwrap();
        assert!((p1.value - c.value).abs() < 1e-10);
        let xs = vec![random_vecs(&mut rng, n, m.n_x())];
        let pn = partial_value_grad(&m, &loss, &regs(), &data, &xs, &theta, 0.4, n).unwrap();
        let r = relaxed_value(&m, &loss, &regs(), &data, &xs, &theta, 0.4).unwrap();
        assert!((pn.value - r).abs() < 1e-10);
    }
}

#[test]
fn adam_examples() {
    let mut s = AdamState::new(2, 0.01);
    let mut p = [1.0, -2.0];
    adam_step(&mut s, &mut p, &[0.0, 0.0]).unwrap();
    assert_eq!(p, [1.0, -2.0]);

    let mut s = AdamState::new(2, 0.01);
    let mut p = [1.0, -2.0];
    adam_step(&mut s, &mut p, &[3.0, -0.5]).unwrap();
    // m̂ = g, v̂ = g², so the step is lr g/(|g| + ε).
    assert_abs_diff_eq!(p[0], 1.0 - 0.01 * 3.0 / (3.0 + 1e-8), epsilon = 1e-15);
    assert_abs_diff_eq!(p[1], -2.0 + 0.01 * 0.5 / (0.5 + 1e-8), epsilon = 1e-15);
    assert!(adam_step(&mut s, &mut p, &[1.0]).is_err());
}

#[test]
fn condensed_training_reaches_least_squares() {
    // Static model ŷ = w u + b, so the condensed problem is least squares.
    let m = RnnModel::new(RnnSpec::linear(0, 1, 1)).unwrap();
    let u: Vec<f64> = (0..20).map(|k| (k as f64 * 0.37).sin()).collect();
    let y: Vec<f64> = u.iter().enumerate().map(|(k, v)| 1.5 * v - 0.4 + 0.1 * ((k * 7 % 5) as f64 - 2.0)).collect();
    let data = Dataset::single(Signal::scalar(&u), Signal::scalar(&y)).unwrap();
    // Normal equations for [w, b].
    let a = Matrix::from_fn(20, 2, |i, j| if j == 0 { u[i] } else { 1.0 });
    let yv = Vector::from_column_slice(&y);
    let ls = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * yv;
    let cfg = GdConfig::new(Loss::mse_identity(1), vec![], CondensingMode::Condensed, 0.05, 500);
    let out = train_gd(&data, &m, &cfg, Some(ParamVector::zeros(&m)), &mut SeededRng::new(0)).unwrap();
    assert_eq!(out.log.len(), 500);
    assert!((out.theta.as_slice()[0] - ls[0]).abs() < 1e-3, "{:?} vs {ls}", out.theta);
    assert!((out.theta.as_slice()[1] - ls[1]).abs() < 1e-3, "{:?} vs {ls}", out.theta);
}

#[test]
fn partial_with_one_batch_tracks_condensed() {
    let mut rng = SeededRng::new(10);
    let m = random_model(&mut rng);
    let data = random_data(&mut rng, 15, 1);
    let mk = |mode| GdConfig::new(Loss::mse_identity(1), regs(), mode, 0.01, 20);
    let a = train_gd(&data, &m, &mk(CondensingMode::Condensed), None, &mut SeededRng::new(3)).unwrap();
    let b = train_gd(&data, &m, &mk(CondensingMode::Partial { m: 1, gamma: 1e-4 }), None, &mut SeededRng::new(3)).unwrap();
    for (ra, rb) in a.log.rows.iter().zip(&b.log.rows) {
        assert!((ra.objective - rb.objective).abs() < 1e-10);
    }
}

#[test]
fn training_is_deterministic_in_every_mode() {
    let mut rng = SeededRng::new(11);
    let m = random_model(&mut rng);
    let data = random_data(&mut rng, 12, 2);
    for mode in [
        CondensingMode::Condensed,
        CondensingMode::Relaxed { gamma: 1e-2 },
        CondensingMode::Partial { m: 3, gamma: 1e-2 },
    ] {
        let cfg = GdConfig::new(Loss::mse_identity(1), regs(), mode, 1e-3, 5);
        let a = train_gd(&data, &m, &cfg, None, &mut SeededRng::new(5)).unwrap();
        let b = train_gd(&data, &m, &cfg, None, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.log.len(), 5);
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn invalid_modes_are_rejected() {
    assert!(CondensingMode::Relaxed { gamma: 0.0 }.validate().is_err());
    assert!(CondensingMode::Partial { m: 0, gamma: 1.0 }.validate().is_err());
    assert!(CondensingMode::Partial { m: 2, gamma: 1.0 }.validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn batch_lengths_cover_the_record(n in 1usize..200, m in 1usize..50) {
        if let Ok(l) = batch_lengths(n, m) {
            prop_assert_eq!(l.len(), m);
            prop_assert_eq!(l.iter().sum::<usize>(), n);
            prop_assert!(l.iter().all(|v| *v >= 1));
            prop_assert!(l[..m - 1].iter().all(|v| *v == n.div_ceil(m)));
        }
    }
}
