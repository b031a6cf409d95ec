//! Gradient-descent training baselines.
//!
//! Three objectives share one parameterization: the condensed objective over
//! `(x0, θ)` differentiated by backpropagation through time, the relaxed
//! objective where every state is a decision variable and model consistency
//! is a quadratic penalty, and the partially condensed objective with one
//! free anchor state per batch. State variables are kept per experiment.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Experiment};
use crate::error::{Error, Result};
use crate::models::{DynamicModel, ParamVector};
use crate::numerics::{SeededRng, Vector};
use crate::objectives::{reg_theta_value, reg_x0_value, Loss, Regularizer};
use crate::report::{evaluate_from, LogRow, TrainingLog};

/// Default consistency penalty.
pub const DEFAULT_GAMMA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CondensingMode {
    /// Only `x0` and `θ` are free.
    Condensed,
    /// Every state is free; trained by per-sample steps.
    Relaxed { gamma: f64 },
    /// One free anchor state per batch, `m` batches per experiment.
    Partial { m: usize, gamma: f64 },
}

impl CondensingMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CondensingMode::Condensed => Ok(()),
            CondensingMode::Relaxed { gamma } | CondensingMode::Partial { gamma, .. }
                if !(gamma > 0.0 && gamma.is_finite()) =>
            {
                Err(Error::InvalidConfig("consistency penalty must be positive".into()))
            }
            CondensingMode::Partial { m: 0, .. } => {
                Err(Error::InvalidConfig("partial condensing needs at least one batch".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Batch lengths `L_1 = … = L_{M-1} = ⌈N/M⌉` and `L_M = N - (M-1)⌈N/M⌉`.
pub fn batch_lengths(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!("cannot split {n} samples into {m} batches")));
    }
    let l = n.div_ceil(m);
    let head = (m - 1) * l;
    if head >= n {
        return Err(Error::InvalidConfig(format!(
            "{m} batches of length {l} leave no samples for the last batch of {n}"
        )));
    }
    let mut v = vec![l; m - 1];
    v.push(n - head);
    Ok(v)
}

/// Index of sample `h` of batch `j` (both zero-based).
pub fn sample_index(lengths: &[usize], j: usize, h: usize) -> usize {
    h + lengths[..j].iter().sum::<usize>()
}

/// Objective value with gradients. `grad_x[d][i]` pairs with the state
/// variable `x[d][i]`.
#[derive(Debug, Clone)]
pub struct ValueGrad {
    pub value: f64,
    pub grad_x: Vec<Vec<Vector>>,
    pub grad_theta: Vector,
}

fn check_vars<M: DynamicModel + ?Sized>(
    model: &M,
    data: &Dataset,
    x: &[Vec<Vector>],
    theta: &ParamVector,
    expected: impl Fn(&Experiment) -> usize,
) -> Result<()> {
    theta.check(model)?;
    if data.n_u() != model.n_u() || data.n_y() != model.n_y() {
        return Err(Error::dims("dataset widths do not match the model"));
    }
    if x.len() != data.experiments.len() {
        return Err(Error::dims(format!(
            "{} state sets for {} experiments",
            x.len(),
            data.experiments.len()
        )));
    }
    for (xs, exp) in x.iter().zip(&data.experiments) {
        if xs.len() != expected(exp) {
            return Err(Error::dims(format!(
                "expected {} state variables, got {}",
                expected(exp),
                xs.len()
            )));
        }
        if xs.iter().any(|v| v.len() != model.n_x()) {
            return Err(Error::dims("state variable has the wrong length"));
        }
    }
    Ok(())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteEvaluation)
    }
}

fn add_x0_reg(regs: &[Regularizer], x0: &Vector, g: &mut Vector) {
    for r in regs {
        r.add_x0_gradient(x0.as_slice(), g.as_mut_slice());
    }
}

fn theta_reg(regs: &[Regularizer], theta: &ParamVector) -> (f64, Vector) {
    let mut g = Vector::zeros(theta.len());
    for r in regs {
        r.add_theta_gradient(theta.as_slice(), g.as_mut_slice());
    }
    (reg_theta_value(regs, theta.as_slice()), g)
}

/// Forward unroll from `x` over `inputs[start..start+len]`; returns the
/// `len + 1` visited states.
fn unroll<M: DynamicModel + ?Sized>(
    model: &M,
    theta_x: &[f64],
    x: &Vector,
    exp: &Experiment,
    start: usize,
    len: usize,
) -> Result<Vec<Vector>> {
    let mut states = Vec::with_capacity(len + 1);
    states.push(x.clone());
    for k in start..start + len {
        let next = model.state_update(states.last().unwrap().as_slice(), exp.inputs.row(k), theta_x);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.push(next);
    }
    Ok(states)
}

/// Backward pass over one unrolled segment. Adds the data-loss value
/// `scale Σ ℓ` to `value` and the gradients into `g_theta`; `a` enters as the
/// adjoint of the final state and leaves as the adjoint of the first.
#[allow(clippy::too_many_arguments)]
fn backprop_segment<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    theta: &ParamVector,
    exp: &Experiment,
    start: usize,
    states: &[Vector],
    scale: f64,
    mut a: Vector,
    value: &mut f64,
    g_theta: &mut Vector,
) -> Result<Vector> {
    let (tx, ty) = (theta.theta_x(), theta.theta_y());
    let ntx = theta.n_theta_x();
    let len = states.len() - 1;
    let mut g_u = vec![0.0; model.n_u()];
    for h in (0..len).rev() {
        let k = start + h;
        let (u, y) = (exp.inputs.row(k), exp.outputs.row(k));
        let x = states[h].as_slice();
        let y_hat = model.output(x, u, ty);
        if y_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k });
        }
        *value += scale * loss.value(y, y_hat.as_slice());
        let cot = loss.gradient(y, y_hat.as_slice()) * scale;
        let mut g_x = Vector::zeros(model.n_x());
        let (gtx, gty) = g_theta.as_mut_slice().split_at_mut(ntx);
        model.output_vjp(x, u, ty, cot.as_slice(), g_x.as_mut_slice(), &mut g_u, gty);
        if a.iter().any(|v| *v != 0.0) {
            model.state_vjp(x, u, tx, a.as_slice(), g_x.as_mut_slice(), &mut g_u, gtx);
        }
        a = g_x;
    }
    Ok(a)
}

/// Condensed objective `r_θ(θ) + Σ_d [r_x(x0_d) + (1/N_d) Σ_k ℓ]` and its
/// gradient by backpropagation through time.
pub fn condensed_value_grad<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    regs: &[Regularizer],
    data: &Dataset,
    x0: &[Vector],
    theta: &ParamVector,
) -> Result<ValueGrad> {
    let x: Vec<Vec<Vector>> = x0.iter().map(|v| vec![v.clone()]).collect();
    check_vars(model, data, &x, theta, |_| 1)?;
    let (mut value, mut g_theta) = theta_reg(regs, theta);
    let mut grad_x = Vec::with_capacity(x0.len());
    for (exp, x0d) in data.experiments.iter().zip(x0) {
        let n = exp.len();
        let states = unroll(model, theta.theta_x(), x0d, exp, 0, n)?;
        let a = Vector::zeros(model.n_x());
        let mut g = backprop_segment(
            model,
            loss,
            theta,
            exp,
            0,
            &states,
            1.0 / n as f64,
            a,
            &mut value,
            &mut g_theta,
        )?;
        value += reg_x0_value(regs, x0d.as_slice());
        add_x0_reg(regs, x0d, &mut g);
        grad_x.push(vec![g]);
    }
    Ok(ValueGrad {
        value: finite(value)?,
        grad_x,
        grad_theta: g_theta,
    })
}

/// Relaxed objective: every state `x_k` is free and the model equations are
/// replaced by `(γ/2N) Σ_{k<N-1} ‖x_{k+1} - f_x(x_k, u(k), θx)‖²` within each
/// experiment.
pub fn relaxed_value<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    regs: &[Regularizer],
    data: &Dataset,
    x: &[Vec<Vector>],
    theta: &ParamVector,
    gamma: f64,
) -> Result<f64> {
    check_vars(model, data, x, theta, |e| e.len())?;
    let (tx, ty) = (theta.theta_x(), theta.theta_y());
    let mut v = reg_theta_value(regs, theta.as_slice());
    for (exp, xs) in data.experiments.iter().zip(x) {
        let n = exp.len() as f64;
        v += reg_x0_value(regs, xs[0].as_slice());
        let mut data_term = 0.0;
        let mut consistency = 0.0;
        for (k, xk) in xs.iter().enumerate() {
            let u = exp.inputs.row(k);
            data_term += loss.value(exp.outputs.row(k), model.output(xk.as_slice(), u, ty).as_slice());
            if k + 1 < xs.len() {
                consistency += (&xs[k + 1] - model.state_update(xk.as_slice(), u, tx)).norm_squared();
            }
        }
        v += data_term / n + gamma / (2.0 * n) * consistency;
    }
    finite(v)
}

/// Gradient of [`relaxed_value`].
pub fn relaxed_value_grad<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    regs: &[Regularizer],
    data: &Dataset,
    x: &[Vec<Vector>],
    theta: &ParamVector,
    gamma: f64,
) -> Result<ValueGrad> {
    check_vars(model, data, x, theta, |e| e.len())?;
    let (tx, ty) = (theta.theta_x(), theta.theta_y());
    let ntx = theta.n_theta_x();
    let (mut value, mut g_theta) = theta_reg(regs, theta);
    let mut g_u = vec![0.0; model.n_u()];
    let mut grad_x = Vec::with_capacity(x.len());
    for (exp, xs) in data.experiments.iter().zip(x) {
        let n = exp.len() as f64;
        let mut gx: Vec<Vector> = vec![Vector::zeros(model.n_x()); xs.len()];
        value += reg_x0_value(regs, xs[0].as_slice());
        add_x0_reg(regs, &xs[0], &mut gx[0]);
        for k in 0..xs.len() {
            let (u, y) = (exp.inputs.row(k), exp.outputs.row(k));
            let xk = xs[k].as_slice();
            let (gtx, gty) = g_theta.as_mut_slice().split_at_mut(ntx);
            let y_hat = model.output(xk, u, ty);
            value += loss.value(y, y_hat.as_slice()) / n;
            let cot = loss.gradient(y, y_hat.as_slice()) / n;
            model.output_vjp(xk, u, ty, cot.as_slice(), gx[k].as_mut_slice(), &mut g_u, gty);
            if k + 1 < xs.len() {
                let r = &xs[k + 1] - model.state_update(xk, u, tx);
                value += gamma / (2.0 * n) * r.norm_squared();
                let w = r * (gamma / n);
                gx[k + 1] += &w;
                let cot = -w;
                model.state_vjp(xk, u, tx, cot.as_slice(), gx[k].as_mut_slice(), &mut g_u, gtx);
            }
        }
        grad_x.push(gx);
    }
    Ok(ValueGrad {
        value: finite(value)?,
        grad_x,
        grad_theta: g_theta,
    })
}

/// One stochastic step on sample `k` of the relaxed objective, updating
/// `x_k`, `x_{k+1}` and `θ` with step `alpha`. The per-sample term is
/// `ℓ(y(k), f_y(x_k)) + (γ/2)‖x_{k+1} - f_x(x_k)‖² + (r_θ(θ) + δ_{k0} r_x(x_0))/N`
/// and the step is its negative gradient; the consistency part is skipped at
/// the last sample of the experiment.
#[allow(clippy::too_many_arguments)]
pub fn sgd_relaxed_step<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    regs: &[Regularizer],
    exp: &Experiment,
    k: usize,
    x: &mut [Vector],
    theta: &mut ParamVector,
    gamma: f64,
    alpha: f64,
    n: usize,
) -> Result<()> {
    if x.len() != exp.len() || k >= x.len() {
        return Err(Error::dims("relaxed step needs one state per sample and k < N"));
    }
    let ntx = theta.n_theta_x();
    let (u, y) = (exp.inputs.row(k), exp.outputs.row(k));
    let mut g_x = Vector::zeros(model.n_x());
    let mut g_theta = Vector::zeros(theta.len());
    let mut g_u = vec![0.0; model.n_u()];
    let xk = x[k].clone();
    {
        let (gtx, gty) = g_theta.as_mut_slice().split_at_mut(ntx);
        let y_hat = model.output(xk.as_slice(), u, theta.theta_y());
        let cot = loss.gradient(y, y_hat.as_slice());
        model.output_vjp(xk.as_slice(), u, theta.theta_y(), cot.as_slice(), g_x.as_mut_slice(), &mut g_u, gty);
        if k + 1 < x.len() {
            let r = &x[k + 1] - model.state_update(xk.as_slice(), u, theta.theta_x());
            let cot = &r * -gamma;
            model.state_vjp(xk.as_slice(), u, theta.theta_x(), cot.as_slice(), g_x.as_mut_slice(), &mut g_u, gtx);
            x[k + 1].axpy(-alpha * gamma, &r, 1.0);
        }
    }
    let inv_n = 1.0 / n as f64;
    let (_, g_reg) = theta_reg(regs, theta);
    g_theta.axpy(inv_n, &g_reg, 1.0);
    if k == 0 {
        let mut g0 = Vector::zeros(model.n_x());
        add_x0_reg(regs, &xk, &mut g0);
        g_x.axpy(inv_n, &g0, 1.0);
    }
    x[k].axpy(-alpha, &g_x, 1.0);
    for (t, g) in theta.as_mut_slice().iter_mut().zip(g_theta.iter()) {
        *t -= alpha * g;
    }
    if x[k].iter().chain(theta.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: k });
    }
    Ok(())
}

/// Partially condensed objective with `m` anchors per experiment:
/// `r_θ + Σ_d [r_x(x_0) + (1/N) Σ_j Σ_h ℓ + γ(N-1)/(2N(M-1)) Σ_{j<M-1} ‖x_{j+1} - x̂_{L_j|j}‖²]`,
/// where `x̂_{h|j}` is the state reached `h` steps after anchor `x_j`.
#[allow(clippy::too_many_arguments)]
pub fn partial_value_grad<M: DynamicModel + ?Sized>(
    model: &M,
    loss: &Loss,
    regs: &[Regularizer],
    data: &Dataset,
    anchors: &[Vec<Vector>],
    theta: &ParamVector,
    gamma: f64,
    m: usize,
) -> Result<ValueGrad> {
    check_vars(model, data, anchors, theta, |_| m)?;
    let (mut value, mut g_theta) = theta_reg(regs, theta);
    let mut grad_x = Vec::with_capacity(anchors.len());
    for (exp, xs) in data.experiments.iter().zip(anchors) {
        let n = exp.len();
        let lengths = batch_lengths(n, m)?;
        let coef = if m > 1 {
            gamma * (n - 1) as f64 / (2.0 * n as f64 * (m - 1) as f64)
        } else {
            0.0
        };
        let mut gx: Vec<Vector> = vec![Vector::zeros(model.n_x()); m];
        value += reg_x0_value(regs, xs[0].as_slice());
        add_x0_reg(regs, &xs[0], &mut gx[0]);
        for j in 0..m {
            let start = sample_index(&lengths, j, 0);
            let states = unroll(model, theta.theta_x(), &xs[j], exp, start, lengths[j])?;
            let a = if j + 1 < m {
                let r = &xs[j + 1] - states.last().unwrap();
                value += coef * r.norm_squared();
                let w = r * (2.0 * coef);
                gx[j + 1] += &w;
                -w
            } else {
                Vector::zeros(model.n_x())
            };
            let a0 = backprop_segment(
                model,
                loss,
                theta,
                exp,
                start,
                &states,
                1.0 / n as f64,
                a,
                &mut value,
                &mut g_theta,
            )?;
            gx[j] += a0;
        }
        grad_x.push(gx);
    }
    Ok(ValueGrad {
        value: finite(value)?,
        grad_x,
        grad_theta: g_theta,
    })
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::dims("Adam moments, parameters and gradient differ in length"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GdConfig {
    pub loss: Loss,
    pub regs: Vec<Regularizer>,
    pub mode: CondensingMode,
    /// Adam step size, or the plain SGD step in relaxed mode.
    pub lr: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub zero_threshold: f64,
}

impl GdConfig {
    pub fn new(loss: Loss, regs: Vec<Regularizer>, mode: CondensingMode, lr: f64, epochs: usize) -> Self {
        GdConfig {
            loss,
            regs,
            mode,
            lr,
            epochs,
            init_scale: 1.0,
            zero_threshold: 1e-3,
        }
    }

    pub fn validate(&self, n_theta: usize) -> Result<()> {
        self.mode.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("at least one epoch is required".into()));
        }
        for r in &self.regs {
            r.validate(n_theta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GdOutcome {
    /// Parameters of the epoch with the lowest condensed objective.
    pub theta: ParamVector,
    pub best_epoch: usize,
    /// Initial states paired with `theta`.
    pub x0: Vec<Vector>,
    /// State variables after the last epoch.
    pub x: Vec<Vec<Vector>>,
    pub log: TrainingLog,
}

/// Trains by one full-gradient Adam step per epoch (condensed and partial
/// modes) or one sweep of per-sample steps per epoch (relaxed mode). Every
/// epoch logs the condensed objective simulated from the current initial
/// states.
pub fn train_gd<M: DynamicModel + ?Sized>(
    data: &Dataset,
    model: &M,
    config: &GdConfig,
    theta0: Option<ParamVector>,
    rng: &mut SeededRng,
) -> Result<GdOutcome> {
    config.validate(model.n_theta())?;
    config.loss.check_outputs(model.n_y())?;
    let mut theta = match theta0 {
        Some(t) => {
            t.check(model)?;
            t
        }
        None => model.init_params(rng, config.init_scale),
    };
    let nx = model.n_x();
    let mut x = initial_vars(model, data, &theta, config.mode)?;
    let n_total = data.total_len();
    let n_vars: usize = x.iter().map(|v| v.len() * nx).sum::<usize>() + theta.len();
    let mut adam = AdamState::new(n_vars, config.lr);
    let start = Instant::now();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ParamVector, Vec<Vector>)> = None;

    for epoch in 1..=config.epochs {
        let step = match config.mode {
            CondensingMode::Condensed => {
                let x0: Vec<Vector> = x.iter().map(|v| v[0].clone()).collect();
                let vg = condensed_value_grad(model, &config.loss, &config.regs, data, &x0, &theta)?;
                apply_adam(&mut adam, &mut x, &mut theta, &vg)
            }
            CondensingMode::Partial { m, gamma } => {
                let vg = partial_value_grad(model, &config.loss, &config.regs, data, &x, &theta, gamma, m)?;
                apply_adam(&mut adam, &mut x, &mut theta, &vg)
            }
            CondensingMode::Relaxed { gamma } => {
                let mut r = Ok(());
                'outer: for (exp, xs) in data.experiments.iter().zip(x.iter_mut()) {
                    for k in 0..exp.len() {
                        r = sgd_relaxed_step(
                            model,
                            &config.loss,
                            &config.regs,
                            exp,
                            k,
                            xs,
                            &mut theta,
                            gamma,
                            config.lr,
                            n_total,
                        );
                        if r.is_err() {
                            break 'outer;
                        }
                    }
                }
                r
            }
        };
        step.map_err(|e| Error::Training {
            epoch,
            sample: 0,
            source: Box::new(e),
        })?;

        let x0: Vec<Vector> = x.iter().map(|v| v[0].clone()).collect();
        let eval = evaluate_from(model, &theta, data, &config.loss, &config.regs, x0)?;
        log.rows.push(LogRow {
            epoch,
            objective: eval.objective,
            fit: eval.fit,
            zero_fraction: theta.zero_fraction(config.zero_threshold),
            wall_time: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|b| eval.objective < b.0) {
            best = Some((eval.objective, epoch, theta.clone(), eval.x0));
        }
    }
    let (_, best_epoch, best_theta, x0) = best.expect("at least one epoch");
    Ok(GdOutcome {
        theta: best_theta,
        best_epoch,
        x0,
        x,
        log,
    })
}

/// State variables on the trajectory simulated from `x0 = 0`.
fn initial_vars<M: DynamicModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &ParamVector,
    mode: CondensingMode,
) -> Result<Vec<Vec<Vector>>> {
    let x0 = Vector::zeros(model.n_x());
    data.experiments
        .iter()
        .map(|exp| {
            let states = unroll(model, theta.theta_x(), &x0, exp, 0, exp.len())?;
            Ok(match mode {
                CondensingMode::Condensed => vec![x0.clone()],
                CondensingMode::Relaxed { .. } => states[..exp.len()].to_vec(),
                CondensingMode::Partial { m, .. } => {
                    let lengths = batch_lengths(exp.len(), m)?;
                    (0..m).map(|j| states[sample_index(&lengths, j, 0)].clone()).collect()
                }
            })
        })
        .collect()
}

fn apply_adam(
    adam: &mut AdamState,
    x: &mut [Vec<Vector>],
    theta: &mut ParamVector,
    vg: &ValueGrad,
) -> Result<()> {
    let mut params: Vec<f64> = x.iter().flatten().flat_map(|v| v.iter().copied()).collect();
    let mut grad: Vec<f64> = vg.grad_x.iter().flatten().flat_map(|v| v.iter().copied()).collect();
    params.extend_from_slice(theta.as_slice());
    grad.extend(vg.grad_theta.iter());
    adam_step(adam, &mut params, &grad)?;
    let mut it = params.into_iter();
    for v in x.iter_mut().flatten() {
        for e in v.iter_mut() {
            *e = it.next().expect("sizes agree");
        }
    }
    for (t, p) in theta.as_mut_slice().iter_mut().zip(it) {
        *t = p;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
