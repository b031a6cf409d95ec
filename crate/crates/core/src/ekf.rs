//! Joint state and parameter estimation by extended Kalman filtering.
//!
//! The estimated vector is `z = [x; θx; θy]`. Every sample runs a data
//! measurement update, the regularization updates, and a time update. Loss
//! functions other than MSE enter through the innovation terms returned by
//! [`loss_terms`]; ℓ2 regularization enters through the prior covariance.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init_state::{reconstruct_x0, PswarmConfig, DEFAULT_N_BAR};
use crate::models::{DynamicModel, ParamVector};
use crate::numerics::{spd_solve, symmetrize, Matrix, SeededRng, SpdMatrix, Vector};
use crate::objectives::{
    l1_weight, l2_weights, loss_terms, reg_scalar_terms, sign, Loss, LossTerms, Regularizer,
};
use crate::report::{evaluate_from, LogRow, TrainingLog};

/// Filter state: estimate `z`, covariance `P` and sample counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub z: Vector,
    pub p: SpdMatrix,
    pub k: usize,
    n_x: usize,
    n_theta_x: usize,
}

impl EkfState {
    pub fn new(x: &[f64], theta: &ParamVector, p: SpdMatrix) -> Result<Self> {
        let n = x.len() + theta.len();
        if p.dim() != n {
            return Err(Error::dims(format!("P is {0}x{0}, z has {n} entries", p.dim())));
        }
        let z = Vector::from_iterator(n, x.iter().chain(theta.as_slice()).copied());
        Ok(EkfState {
            z,
            p,
            k: 0,
            n_x: x.len(),
            n_theta_x: theta.n_theta_x(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_theta(&self) -> usize {
        self.z.len() - self.n_x
    }

    pub fn x(&self) -> &[f64] {
        &self.z.as_slice()[..self.n_x]
    }

    pub fn theta(&self) -> &[f64] {
        &self.z.as_slice()[self.n_x..]
    }

    pub fn theta_x(&self) -> &[f64] {
        &self.theta()[..self.n_theta_x]
    }

    pub fn theta_y(&self) -> &[f64] {
        &self.theta()[self.n_theta_x..]
    }

    pub fn params(&self) -> ParamVector {
        ParamVector::new(self.theta().to_vec(), self.n_theta_x).expect("split within bounds")
    }

    pub fn set_x(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_x {
            return Err(Error::dims("state reset has the wrong length"));
        }
        self.z.as_mut_slice()[..self.n_x].copy_from_slice(x);
        Ok(())
    }

    fn check_model<M: DynamicModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.n_x != model.n_x()
            || self.n_theta_x != model.n_theta_x()
            || self.n_theta() != model.n_theta()
        {
            return Err(Error::dims("filter state does not match the model"));
        }
        Ok(())
    }
}

/// Process-noise covariance, either `q·I` or a full matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCov {
    Isotropic(f64),
    Full(SpdMatrix),
}

impl NoiseCov {
    pub fn resolve(&self, n: usize) -> Result<SpdMatrix> {
        match self {
            NoiseCov::Isotropic(q) => {
                if !(*q >= 0.0 && q.is_finite()) {
                    return Err(Error::InvalidConfig("noise variance must be nonnegative".into()));
                }
                Ok(SpdMatrix::scaled_identity(n, *q))
            }
            NoiseCov::Full(m) if m.dim() == n => Ok(m.clone()),
            NoiseCov::Full(m) => Err(Error::dims(format!(
                "noise covariance is {0}x{0}, expected {n}x{n}",
                m.dim()
            ))),
        }
    }
}

/// Covariances of the state and parameter process noise. The output noise
/// covariance comes from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub q_x: NoiseCov,
    pub q_theta: NoiseCov,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            q_x: NoiseCov::Isotropic(1e-10),
            q_theta: NoiseCov::Isotropic(1e-10),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// One update per parameter with the current sign.
    Sequential,
    /// One update with the signs of the prediction, before the measurement.
    #[default]
    Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorPolicy {
    /// Derived from the ℓ2 weights of the regularizer list.
    FromL2,
    Explicit(SpdMatrix),
}

#[derive(Debug, Clone)]
pub struct EkfConfig {
    pub noise: NoiseModel,
    pub loss: Loss,
    pub regs: Vec<Regularizer>,
    pub prior: PriorPolicy,
    pub l1_mode: L1Mode,
    pub epochs: usize,
    pub zero_threshold: f64,
    /// Samples used to reconstruct initial states between passes.
    pub n_bar: usize,
    pub pswarm: PswarmConfig,
    /// Scale of the random initial weights.
    pub init_scale: f64,
    /// Abort when `‖z‖∞` exceeds this.
    pub divergence_limit: f64,
}

impl EkfConfig {
    pub fn new(loss: Loss, regs: Vec<Regularizer>) -> Self {
        EkfConfig {
            noise: NoiseModel::default(),
            loss,
            regs,
            prior: PriorPolicy::FromL2,
            l1_mode: L1Mode::Batch,
            epochs: 1,
            zero_threshold: 1e-3,
            n_bar: DEFAULT_N_BAR,
            pswarm: PswarmConfig::default(),
            init_scale: 1.0,
            divergence_limit: 1e6,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self, n_theta: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("at least one epoch is required".into()));
        }
        if self.n_bar == 0 {
            return Err(Error::InvalidConfig("reconstruction horizon must be positive".into()));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::InvalidConfig("divergence limit must be positive".into()));
        }
        for r in &self.regs {
            r.validate(n_theta)?;
        }
        self.pswarm.validate()
    }
}

/// `P0 = diag(I/(N_e N ρx), I/(N_e N ρθ))`. `ρx` is only required when
/// `n_x > 0`.
pub fn prior_covariance(
    rho_x: f64,
    rho_theta: f64,
    n: usize,
    n_e: usize,
    n_x: usize,
    n_theta: usize,
) -> Result<SpdMatrix> {
    if n == 0 || n_e == 0 {
        return Err(Error::InvalidConfig("prior needs N >= 1 and N_e >= 1".into()));
    }
    if !(rho_theta > 0.0) || (n_x > 0 && !(rho_x > 0.0)) {
        return Err(Error::ZeroRegularization);
    }
    let scale = (n_e * n) as f64;
    let mut d = vec![1.0 / (scale * rho_x); n_x];
    d.extend(std::iter::repeat_n(1.0 / (scale * rho_theta), n_theta));
    Ok(SpdMatrix::from_diagonal(&d))
}

/// Result of a data measurement update.
#[derive(Debug, Clone)]
pub struct MeasurementInfo {
    pub y_hat: Vector,
    pub terms: LossTerms,
    /// Largest `|P - Pᵀ|` entry before re-symmetrization.
    pub asymmetry: f64,
}

/// Measurement update at `(x̂(k|k-1), θ̂(k|k-1), u(k))` with the innovation
/// and its covariance taken from the loss.
pub fn measurement_update<M: DynamicModel + ?Sized>(
    state: &mut EkfState,
    model: &M,
    u: &[f64],
    y: &[f64],
    loss: &Loss,
) -> Result<MeasurementInfo> {
    state.check_model(model)?;
    if u.len() != model.n_u() || y.len() != model.n_y() {
        return Err(Error::dims("measurement sample widths do not match the model"));
    }
    let (nx, ntx, nty) = (state.n_x, state.n_theta_x, model.n_theta_y());
    let oy = nx + ntx;
    let jy = model.output_jacobian(state.x(), u, state.theta_y());
    let terms = loss_terms(loss, y, jy.value.as_slice())?;
    if terms.q_y.dim() != y.len() {
        return Err(Error::dims("output noise covariance has the wrong size"));
    }
    let p = state.p.as_matrix();
    // D1 = P Cᵀ with C = [∂fy/∂x, 0, ∂fy/∂θy].
    let d1 = p.columns(0, nx) * jy.d_x.transpose() + p.columns(oy, nty) * jy.d_theta.transpose();
    let cd1 = &jy.d_x * d1.rows(0, nx) + &jy.d_theta * d1.rows(oy, nty);
    let s = symmetrize(&(cd1 + terms.q_y.as_matrix()))?;
    // Mᵀ = S⁻¹ D1ᵀ.
    let mt = spd_solve(&s, &d1.transpose())?;
    state.z += mt.tr_mul(&terms.e);
    let mut p_new = p - mt.tr_mul(&d1.transpose());
    let asymmetry = max_asymmetry(&p_new);
    clamp_diagonal(&mut p_new);
    state.p = symmetrize(&p_new)?;
    Ok(MeasurementInfo {
        y_hat: jy.value,
        terms,
        asymmetry,
    })
}

fn max_asymmetry(p: &Matrix) -> f64 {
    let n = p.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    m
}

/// Rounding can push a collapsed variance slightly below zero.
fn clamp_diagonal(p: &mut Matrix) {
    for i in 0..p.nrows() {
        if p[(i, i)] < 0.0 {
            p[(i, i)] = 0.0;
        }
    }
}

/// Time update: `x̂ ← f_x(x̂, u, θ̂x)`, `P ← A P Aᵀ + diag(Qx, Qθ)` with
/// `A = [[Fx, Fθx, 0], [0, I, 0], [0, 0, I]]`.
pub fn time_update<M: DynamicModel + ?Sized>(
    state: &mut EkfState,
    model: &M,
    u: &[f64],
    q_x: &SpdMatrix,
    q_theta: &SpdMatrix,
) -> Result<()> {
    state.check_model(model)?;
    if u.len() != model.n_u() {
        return Err(Error::dims("input width does not match the model"));
    }
    let (nx, ntx) = (state.n_x, state.n_theta_x);
    let n = state.z.len();
    if q_x.dim() != nx || q_theta.dim() != n - nx {
        return Err(Error::dims("process noise covariances have the wrong size"));
    }
    let jx = model.state_jacobian(state.x(), u, state.theta_x());
    if jx.value.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: state.k + 1 });
    }
    let p = state.p.as_matrix();
    // Only the x rows change: G = [Fx, Fθx, 0], new x rows are G P.
    let gp = &jx.d_x * p.rows(0, nx) + &jx.d_theta * p.rows(nx, ntx);
    let pxx = gp.columns(0, nx) * jx.d_x.transpose() + gp.columns(nx, ntx) * jx.d_theta.transpose();
    let mut p_new = p.clone();
    p_new.view_mut((0, nx), (nx, n - nx)).copy_from(&gp.columns(nx, n - nx));
    p_new
        .view_mut((nx, 0), (n - nx, nx))
        .copy_from(&gp.columns(nx, n - nx).transpose());
    p_new.view_mut((0, 0), (nx, nx)).copy_from(&(pxx + q_x.as_matrix()));
    let mut tt = p_new.view_mut((nx, nx), (n - nx, n - nx));
    tt += q_theta.as_matrix();
    state.p = symmetrize(&p_new)?;
    state.z.as_mut_slice()[..nx].copy_from_slice(jx.value.as_slice());
    state.k += 1;
    Ok(())
}

/// Virtual-measurement updates for every separable penalty in `regs`, one
/// parameter at a time.
pub fn reg_sequential_update(state: &mut EkfState, regs: &[Regularizer]) -> Result<()> {
    let nx = state.n_x;
    let nt = state.n_theta();
    for r in regs {
        let Regularizer::SeparablePsi(psi) = r else {
            continue;
        };
        psi.check_len(nt)?;
        let mut p = state.p.as_matrix().clone();
        for i in 0..nt {
            let j = nx + i;
            let (e, q) = reg_scalar_terms(psi.penalty(i), state.z[j], i)?;
            let s = p[(j, j)] + q;
            if !(s > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            let col = p.column(j).clone_owned();
            let m = &col / s;
            state.z.axpy(e, &m, 1.0);
            p.ger(-1.0, &m, &col, 1.0);
        }
        clamp_diagonal(&mut p);
        state.p = symmetrize(&p)?;
    }
    Ok(())
}

/// `P [0; sign(θ̂)]` scaled by `λ`: the batch ℓ1 correction evaluated at the
/// current state.
pub fn l1_batch_correction(state: &EkfState, lambda: f64) -> Vector {
    let nx = state.n_x;
    let p = state.p.as_matrix();
    let mut c = Vector::zeros(state.z.len());
    if lambda == 0.0 {
        return c;
    }
    for i in 0..state.n_theta() {
        let s = sign(state.z[nx + i]);
        if s != 0.0 {
            c.axpy(lambda * s, &p.column(nx + i), 1.0);
        }
    }
    c
}

/// ℓ1 update. `Batch` uses the signs and covariance held by `state`, so the
/// caller applies it to the prediction; the trainer captures the correction
/// before the measurement update. `P` is never modified.
pub fn l1_update(state: &mut EkfState, lambda: f64, mode: L1Mode) {
    if lambda == 0.0 {
        return;
    }
    match mode {
        L1Mode::Batch => {
            let c = l1_batch_correction(state, lambda);
            state.z -= c;
        }
        L1Mode::Sequential => l1_sequential(state, lambda),
    }
}

fn l1_sequential(state: &mut EkfState, lambda: f64) {
    let nx = state.n_x;
    for i in 0..state.n_theta() {
        let j = nx + i;
        let s = sign(state.z[j]);
        if s != 0.0 {
            state.z.axpy(-lambda * s, &state.p.as_matrix().column(j), 1.0);
        }
    }
}

/// Trained parameters with the log of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest objective.
    pub theta: ParamVector,
    pub best_epoch: usize,
    /// Initial states reconstructed for the best parameters.
    pub x0: Vec<Vector>,
    pub log: TrainingLog,
    /// Filter state after the last sample.
    pub final_state: EkfState,
}

/// Runs `config.epochs` passes over every experiment. The initial state of
/// each pass is reconstructed from data with the latest parameters, except
/// for the very first pass which starts from zero. `θ̂` and `P` carry over.
pub fn train<M: DynamicModel + ?Sized>(
    data: &Dataset,
    model: &M,
    config: &EkfConfig,
    theta0: Option<ParamVector>,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    config.validate(model.n_theta())?;
    config.loss.check_outputs(model.n_y())?;
    if data.n_u() != model.n_u() || data.n_y() != model.n_y() {
        return Err(Error::dims("dataset widths do not match the model"));
    }
    let theta = match theta0 {
        Some(t) => {
            t.check(model)?;
            t
        }
        None => model.init_params(rng, config.init_scale),
    };
    let (nx, nt) = (model.n_x(), model.n_theta());
    let p0 = match &config.prior {
        PriorPolicy::FromL2 => {
            let (rho_x, rho_theta) = l2_weights(&config.regs);
            prior_covariance(rho_x, rho_theta, data.total_len(), config.epochs, nx, nt)?
        }
        PriorPolicy::Explicit(p) => p.clone(),
    };
    let q_x = config.noise.q_x.resolve(nx)?;
    let q_theta = config.noise.q_theta.resolve(nt)?;
    let lambda = l1_weight(&config.regs);
    let mut state = EkfState::new(&vec![0.0; nx], &theta, p0)?;

    let start = Instant::now();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ParamVector, Vec<Vector>)> = None;
    let mut next_x0: Option<Vector> = None;

    for epoch in 1..=config.epochs {
        for (d, exp) in data.experiments.iter().enumerate() {
            let x0 = match (d, next_x0.take()) {
                (0, Some(x)) => x,
                (0, None) if epoch == 1 => Vector::zeros(nx),
                _ => reconstruct(model, &state.params(), exp, config, epoch, d)?,
            };
            state.set_x(x0.as_slice())?;
            for k in 0..exp.len() {
                let fail = |e: Error| match e {
                    Error::Diverged { .. } => e,
                    e => Error::Training {
                        epoch,
                        sample: k,
                        source: Box::new(e),
                    },
                };
                step(
                    &mut state,
                    model,
                    exp.inputs.row(k),
                    exp.outputs.row(k),
                    config,
                    lambda,
                    &q_x,
                    &q_theta,
                )
                .map_err(fail)?;
                if diverged(&state.z, config.divergence_limit) {
                    return Err(Error::Diverged { epoch, sample: k });
                }
            }
        }

        let theta = state.params();
        let x0s = data
            .experiments
            .iter()
            .enumerate()
            .map(|(d, exp)| reconstruct(model, &theta, exp, config, epoch + 1, d))
            .collect::<Result<Vec<_>>>()?;
        next_x0 = x0s.first().cloned();
        let eval = evaluate_from(model, &theta, data, &config.loss, &config.regs, x0s)?;
        log.rows.push(LogRow {
            epoch,
            objective: eval.objective,
            fit: eval.fit,
            zero_fraction: theta.zero_fraction(config.zero_threshold),
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: objective {:.6e}, fit {:.4}", eval.objective, eval.fit);
        if best.as_ref().is_none_or(|b| eval.objective < b.0) {
            best = Some((eval.objective, epoch, theta, eval.x0));
        }
    }
    let (_, best_epoch, theta, x0) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        theta,
        best_epoch,
        x0,
        log,
        final_state: state,
    })
}

/// One composite update for sample `(u, y)`.
#[allow(clippy::too_many_arguments)]
pub fn step<M: DynamicModel + ?Sized>(
    state: &mut EkfState,
    model: &M,
    u: &[f64],
    y: &[f64],
    config: &EkfConfig,
    lambda: f64,
    q_x: &SpdMatrix,
    q_theta: &SpdMatrix,
) -> Result<()> {
    let batch_l1 = (lambda > 0.0 && config.l1_mode == L1Mode::Batch)
        .then(|| l1_batch_correction(state, lambda));
    measurement_update(state, model, u, y, &config.loss)?;
    reg_sequential_update(state, &config.regs)?;
    match batch_l1 {
        Some(c) => state.z -= c,
        None if lambda > 0.0 => l1_sequential(state, lambda),
        None => {}
    }
    time_update(state, model, u, q_x, q_theta)
}

fn diverged(z: &Vector, limit: f64) -> bool {
    z.iter().any(|v| !v.is_finite() || v.abs() > limit)
}

fn reconstruct<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    exp: &crate::data::Experiment,
    config: &EkfConfig,
    epoch: usize,
    d: usize,
) -> Result<Vector> {
    let seed = config
        .pswarm
        .seed
        .wrapping_add((epoch as u64) << 20)
        .wrapping_add(d as u64);
    reconstruct_x0(
        model,
        theta,
        &exp.inputs,
        &exp.outputs,
        config.n_bar,
        &config.loss,
        &config.regs,
        &config.pswarm.clone().with_seed(seed),
    )
}
