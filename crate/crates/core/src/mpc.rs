//! Nonlinear MPC over a trained model with constant-disturbance augmentation.
//!
//! The prediction model is
//!
//! ```text
//! x(k+1) = f_x(x, u, θx*) + B_d d
//! y(k)   = f_y(x, u, θy*) + C_d d
//! d(k+1) = d(k)
//! ```
//!
//! The state `[x; d]` is estimated by the EKF of [`crate::ekf`] with the
//! parameters frozen. Each control step minimizes
//! `Σ_{t=0}^{p} ‖W^Δu (u_t - u_{t-1})‖² + ‖W^y (y_t - r_t)‖²` over
//! `u_0..u_{p-1}` (with `u_p = u_{p-1}`) by projected gradient descent.
//!
//! Model inputs are `[u; v]`: the manipulated inputs followed by measured
//! disturbances, which are held at their current value over the horizon.

use std::io::Write;
use std::time::Instant;

use crate::data::{fmt_f64, Dataset, Scaling};
use crate::ekf::{measurement_update, time_update, EkfState};
use crate::error::{Error, Result};
use crate::models::{DynamicModel, LocalJacobian, ParamSlot, ParamVector};
use crate::numerics::{Matrix, SeededRng, Signal, SpdMatrix, Vector};
use crate::objectives::Loss;

/// Disturbance injection matrices and the random-walk covariance of `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    pub b_d: Matrix,
    pub c_d: Matrix,
    pub q_d: SpdMatrix,
}

impl DisturbanceModel {
    /// No disturbance states.
    pub fn none(n_x: usize, n_y: usize) -> Self {
        DisturbanceModel {
            b_d: Matrix::zeros(n_x, 0),
            c_d: Matrix::zeros(n_y, 0),
            q_d: SpdMatrix::zeros(0),
        }
    }

    /// Output disturbance `B_d = 0`, `C_d = I`, `Q_d = q_d·I`.
    pub fn output(n_x: usize, n_y: usize, q_d: f64) -> Self {
        DisturbanceModel {
            b_d: Matrix::zeros(n_x, n_y),
            c_d: Matrix::identity(n_y, n_y),
            q_d: SpdMatrix::scaled_identity(n_y, q_d),
        }
    }

    pub fn n_d(&self) -> usize {
        self.c_d.ncols()
    }

    pub fn check(&self, n_x: usize, n_y: usize) -> Result<()> {
        let n_d = self.n_d();
        if self.b_d.nrows() != n_x || self.b_d.ncols() != n_d || self.c_d.nrows() != n_y {
            return Err(Error::dims(format!(
                "disturbance model is ({}x{}, {}x{}), expected ({n_x}x{n_d}, {n_y}x{n_d})",
                self.b_d.nrows(),
                self.b_d.ncols(),
                self.c_d.nrows(),
                self.c_d.ncols()
            )));
        }
        if self.q_d.dim() != n_d {
            return Err(Error::dims("Q_d size does not match n_d"));
        }
        Ok(())
    }
}

/// One step of the augmented model: returns `(x⁺, ŷ)`.
pub fn augmented_predict<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    dist: &DisturbanceModel,
    x: &[f64],
    d: &[f64],
    u: &[f64],
) -> Result<(Vector, Vector)> {
    theta.check(model)?;
    dist.check(model.n_x(), model.n_y())?;
    if x.len() != model.n_x() || u.len() != model.n_u() || d.len() != dist.n_d() {
        return Err(Error::dims("augmented_predict: argument widths do not match"));
    }
    let (tx, ty) = model.split(theta.as_slice());
    let d = Vector::from_column_slice(d);
    let x_next = model.state_update(x, u, tx) + &dist.b_d * &d;
    let y = model.output(x, u, ty) + &dist.c_d * &d;
    Ok((x_next, y))
}

/// The augmented model seen as a parameter-free model with state `[x; d]`.
struct Augmented<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a ParamVector,
    dist: &'a DisturbanceModel,
}

impl<M: DynamicModel + ?Sized> Augmented<'_, M> {
    fn split_state<'s>(&self, z: &'s [f64]) -> (&'s [f64], Vector) {
        let (x, d) = z.split_at(self.model.n_x());
        (x, Vector::from_column_slice(d))
    }
}

impl<M: DynamicModel + ?Sized> DynamicModel for Augmented<'_, M> {
    fn n_x(&self) -> usize {
        self.model.n_x() + self.dist.n_d()
    }
    fn n_u(&self) -> usize {
        self.model.n_u()
    }
    fn n_y(&self) -> usize {
        self.model.n_y()
    }
    fn n_theta_x(&self) -> usize {
        0
    }
    fn n_theta_y(&self) -> usize {
        0
    }

    fn state_update(&self, z: &[f64], u: &[f64], _: &[f64]) -> Vector {
        let (x, d) = self.split_state(z);
        let tx = self.model.split(self.theta.as_slice()).0;
        let xn = self.model.state_update(x, u, tx) + &self.dist.b_d * &d;
        Vector::from_iterator(z.len(), xn.iter().chain(d.iter()).copied())
    }

    fn output(&self, z: &[f64], u: &[f64], _: &[f64]) -> Vector {
        let (x, d) = self.split_state(z);
        let ty = self.model.split(self.theta.as_slice()).1;
        self.model.output(x, u, ty) + &self.dist.c_d * &d
    }

    fn state_jacobian(&self, z: &[f64], u: &[f64], _: &[f64]) -> LocalJacobian {
        let (x, d) = self.split_state(z);
        let (nx, nd) = (self.model.n_x(), self.dist.n_d());
        let tx = self.model.split(self.theta.as_slice()).0;
        let j = self.model.state_jacobian(x, u, tx);
        let mut d_x = Matrix::zeros(nx + nd, nx + nd);
        d_x.view_mut((0, 0), (nx, nx)).copy_from(&j.d_x);
        d_x.view_mut((0, nx), (nx, nd)).copy_from(&self.dist.b_d);
        d_x.view_mut((nx, nx), (nd, nd)).fill_with_identity();
        let mut d_u = Matrix::zeros(nx + nd, u.len());
        d_u.view_mut((0, 0), (nx, u.len())).copy_from(&j.d_u);
        let xn = j.value + &self.dist.b_d * &d;
        LocalJacobian {
            value: Vector::from_iterator(nx + nd, xn.iter().chain(d.iter()).copied()),
            d_x,
            d_u,
            d_theta: Matrix::zeros(nx + nd, 0),
        }
    }

    fn output_jacobian(&self, z: &[f64], u: &[f64], _: &[f64]) -> LocalJacobian {
        let (x, d) = self.split_state(z);
        let (nx, nd, ny) = (self.model.n_x(), self.dist.n_d(), self.model.n_y());
        let ty = self.model.split(self.theta.as_slice()).1;
        let j = self.model.output_jacobian(x, u, ty);
        let mut d_x = Matrix::zeros(ny, nx + nd);
        d_x.view_mut((0, 0), (ny, nx)).copy_from(&j.d_x);
        d_x.view_mut((0, nx), (ny, nd)).copy_from(&self.dist.c_d);
        LocalJacobian {
            value: j.value + &self.dist.c_d * &d,
            d_x,
            d_u: j.d_u,
            d_theta: Matrix::zeros(ny, 0),
        }
    }

    fn init_params(&self, _: &mut SeededRng, _: f64) -> ParamVector {
        ParamVector::zeros(self)
    }
    fn param_layout(&self) -> Vec<ParamSlot> {
        Vec::new()
    }
    fn output_bias_indices(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// Noise covariances of the disturbance estimator. `Q_d` lives in the
/// [`DisturbanceModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub q_x: f64,
    pub q_y: f64,
    pub p0: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            q_x: 0.01,
            q_y: 0.01,
            p0: 1.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.q_x, self.q_y, self.p0]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
            || self.q_y <= 0.0
        {
            return Err(Error::InvalidConfig(
                "estimator covariances must be finite, non-negative, and q_y > 0".into(),
            ));
        }
        Ok(())
    }
}

/// EKF over `[x; d]` with the model parameters frozen.
#[derive(Debug, Clone)]
pub struct DisturbanceEstimator {
    state: EkfState,
    loss: Loss,
    q_xd: SpdMatrix,
    n_x: usize,
}

impl DisturbanceEstimator {
    pub fn new<M: DynamicModel + ?Sized>(
        model: &M,
        dist: &DisturbanceModel,
        x0: &[f64],
        d0: &[f64],
        cfg: &EstimatorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        dist.check(model.n_x(), model.n_y())?;
        let (nx, nd, ny) = (model.n_x(), dist.n_d(), model.n_y());
        if x0.len() != nx || d0.len() != nd {
            return Err(Error::dims("estimator initial state has the wrong size"));
        }
        let z0: Vec<f64> = x0.iter().chain(d0).copied().collect();
        let empty = ParamVector::new(Vec::new(), 0)?;
        let state = EkfState::new(&z0, &empty, SpdMatrix::scaled_identity(nx + nd, cfg.p0))?;
        let loss = Loss::mse(SpdMatrix::scaled_identity(ny, 1.0 / cfg.q_y))?;
        let q_xd = SpdMatrix::block_diag(&SpdMatrix::scaled_identity(nx, cfg.q_x), &dist.q_d);
        Ok(DisturbanceEstimator {
            state,
            loss,
            q_xd,
            n_x: nx,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.state.z.as_slice()[..self.n_x]
    }

    pub fn d(&self) -> &[f64] {
        &self.state.z.as_slice()[self.n_x..]
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.state.p
    }

    /// Corrects `(x̂, d̂)` with the measurement `y`; returns the innovation.
    pub fn measurement_update<M: DynamicModel + ?Sized>(
        &mut self,
        model: &M,
        theta: &ParamVector,
        dist: &DisturbanceModel,
        u: &[f64],
        y: &[f64],
    ) -> Result<Vector> {
        let aug = Augmented { model, theta, dist };
        self.check(&aug)?;
        let info = measurement_update(&mut self.state, &aug, u, y, &self.loss)?;
        Ok(info.terms.e)
    }

    /// Propagates `(x̂, d̂)` through the augmented model under `u`.
    pub fn time_update<M: DynamicModel + ?Sized>(
        &mut self,
        model: &M,
        theta: &ParamVector,
        dist: &DisturbanceModel,
        u: &[f64],
    ) -> Result<()> {
        let aug = Augmented { model, theta, dist };
        self.check(&aug)?;
        time_update(&mut self.state, &aug, u, &self.q_xd, &SpdMatrix::zeros(0))
    }

    /// Measurement update followed by the time update, both at `u`.
    pub fn step<M: DynamicModel + ?Sized>(
        &mut self,
        model: &M,
        theta: &ParamVector,
        dist: &DisturbanceModel,
        u: &[f64],
        y: &[f64],
    ) -> Result<Vector> {
        let e = self.measurement_update(model, theta, dist, u, y)?;
        self.time_update(model, theta, dist, u)?;
        Ok(e)
    }

    fn check<M: DynamicModel + ?Sized>(&self, aug: &Augmented<'_, M>) -> Result<()> {
        aug.theta.check(aug.model)?;
        aug.dist.check(aug.model.n_x(), aug.model.n_y())?;
        if aug.n_x() != self.state.z.len() || aug.model.n_x() != self.n_x {
            return Err(Error::dims("estimator state does not match the model"));
        }
        Ok(())
    }
}

/// Horizon, weights and bounds of the MPC problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub w_du: Matrix,
    pub w_y: Matrix,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Drops the `u_p - u_{p-1}` and `y_0 - r_0` penalties.
    pub strict_causal_skip: bool,
    pub max_iterations: usize,
    /// Bound on the infinity norm of the projected-gradient step.
    pub tolerance: f64,
}

impl MpcConfig {
    /// `p = 10`, `W^Δu = 0.1·I`, `W^y = 10·I`.
    pub fn new(n_y: usize, u_min: Vec<f64>, u_max: Vec<f64>) -> Self {
        let n_u = u_min.len();
        MpcConfig {
            horizon: 10,
            w_du: Matrix::identity(n_u, n_u) * 0.1,
            w_y: Matrix::identity(n_y, n_y) * 10.0,
            u_min,
            u_max,
            strict_causal_skip: false,
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }

    pub fn n_u(&self) -> usize {
        self.u_min.len()
    }

    pub fn validate(&self, n_u: usize, n_y: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("MPC horizon must be at least 1".into()));
        }
        if self.u_min.len() != n_u || self.u_max.len() != n_u {
            return Err(Error::dims(format!("MPC bounds must have {n_u} entries")));
        }
        if self
            .u_min
            .iter()
            .zip(&self.u_max)
            .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::InvalidConfig("MPC bounds need u_min < u_max".into()));
        }
        if self.w_du.shape() != (n_u, n_u) || self.w_y.shape() != (n_y, n_y) {
            return Err(Error::dims("MPC weight matrices have the wrong size"));
        }
        if self.w_du.iter().chain(self.w_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("MPC weights must be finite".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "MPC solver needs a positive tolerance and iteration limit".into(),
            ));
        }
        Ok(())
    }

    fn project(&self, u: &mut [f64]) {
        let n = self.n_u();
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.u_min[i % n], self.u_max[i % n]);
        }
    }
}

/// Everything the MPC objective depends on besides the decision sequence.
#[derive(Debug, Clone, Copy)]
pub struct MpcProblem<'a, M: ?Sized> {
    pub model: &'a M,
    pub theta: &'a ParamVector,
    pub dist: &'a DisturbanceModel,
    pub config: &'a MpcConfig,
    pub x0: &'a [f64],
    pub d: &'a [f64],
    pub u_prev: &'a [f64],
    /// Measured disturbances, held over the horizon.
    pub v: &'a [f64],
    /// `r_0..r_p`; shorter sequences hold their last entry.
    pub reference: &'a [Vector],
}

impl<M: DynamicModel + ?Sized> MpcProblem<'_, M> {
    fn check(&self) -> Result<()> {
        let (m, c) = (self.model, self.config);
        self.theta.check(m)?;
        self.dist.check(m.n_x(), m.n_y())?;
        c.validate(c.n_u(), m.n_y())?;
        if c.n_u() + self.v.len() != m.n_u() {
            return Err(Error::dims(format!(
                "model has {} inputs, MPC provides {} manipulated and {} measured",
                m.n_u(),
                c.n_u(),
                self.v.len()
            )));
        }
        if self.x0.len() != m.n_x() || self.d.len() != self.dist.n_d() {
            return Err(Error::dims("MPC initial state has the wrong size"));
        }
        if self.u_prev.len() != c.n_u() {
            return Err(Error::dims("u_prev has the wrong size"));
        }
        if self.reference.is_empty() || self.reference.iter().any(|r| r.len() != m.n_y()) {
            return Err(Error::dims("reference must be a non-empty sequence of n_y vectors"));
        }
        Ok(())
    }

    fn reference_at(&self, t: usize) -> &Vector {
        &self.reference[t.min(self.reference.len() - 1)]
    }

    fn full_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter().chain(self.v).copied().collect()
    }

    /// Objective value for the flat decision vector `[u_0; …; u_{p-1}]`.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        self.check()?;
        self.check_decision(u)?;
        Ok(self.value_grad(u, false).0)
    }

    /// Objective value and gradient with respect to the decision vector.
    pub fn objective_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check()?;
        self.check_decision(u)?;
        Ok(self.value_grad(u, true))
    }

    /// Predicted outputs `y_0..y_p` under the decision vector.
    pub fn predict(&self, u: &[f64]) -> Result<Vec<Vector>> {
        self.check()?;
        self.check_decision(u)?;
        let (xs, _) = self.forward(u);
        let p = self.config.horizon;
        let nu = self.config.n_u();
        let ty = self.model.split(self.theta.as_slice()).1;
        let d = Vector::from_column_slice(self.d);
        Ok((0..=p)
            .map(|t| {
                let ut = &u[t.min(p - 1) * nu..][..nu];
                self.model.output(xs[t].as_slice(), &self.full_input(ut), ty) + &self.dist.c_d * &d
            })
            .collect())
    }

    fn check_decision(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.config.horizon * self.config.n_u() {
            return Err(Error::dims("decision vector must hold p inputs"));
        }
        Ok(())
    }

    /// States `x_0..x_p` and whether they stayed finite.
    fn forward(&self, u: &[f64]) -> (Vec<Vector>, bool) {
        let p = self.config.horizon;
        let nu = self.config.n_u();
        let tx = self.model.split(self.theta.as_slice()).0;
        let bd = &self.dist.b_d * Vector::from_column_slice(self.d);
        let mut xs = Vec::with_capacity(p + 1);
        xs.push(Vector::from_column_slice(self.x0));
        for t in 0..p {
            let ut = self.full_input(&u[t * nu..][..nu]);
            let next = self.model.state_update(xs[t].as_slice(), &ut, tx) + &bd;
            if next.iter().any(|v| !v.is_finite()) {
                return (xs, false);
            }
            xs.push(next);
        }
        (xs, true)
    }

    fn value_grad(&self, u: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let c = self.config;
        let (p, nu, nx) = (c.horizon, c.n_u(), self.model.n_x());
        let (tx, ty) = self.model.split(self.theta.as_slice());
        let (xs, finite) = self.forward(u);
        if !finite {
            return (f64::INFINITY, vec![0.0; u.len()]);
        }
        let cd = &self.dist.c_d * Vector::from_column_slice(self.d);
        let wy2 = c.w_y.transpose() * &c.w_y;
        let wdu2 = c.w_du.transpose() * &c.w_du;
        let input_at = |t: usize| &u[t.min(p - 1) * nu..][..nu];

        let mut value = 0.0;
        let mut grad = vec![0.0; u.len()];
        let mut lambda = vec![0.0; nx];
        let mut g_x = vec![0.0; nx];
        let mut g_u = vec![0.0; self.model.n_u()];
        let mut g_tx = vec![0.0; tx.len()];
        let mut g_ty = vec![0.0; ty.len()];
        for t in (0..=p).rev() {
            let ut = input_at(t);
            let full = self.full_input(ut);
            g_x.iter_mut().for_each(|g| *g = 0.0);
            g_u.iter_mut().for_each(|g| *g = 0.0);
            if !(c.strict_causal_skip && t == 0) {
                let y = self.model.output(xs[t].as_slice(), &full, ty) + &cd;
                let e = y - self.reference_at(t);
                let we = &c.w_y * &e;
                value += we.norm_squared();
                if want_grad {
                    let cot = (&wy2 * &e) * 2.0;
                    self.model.output_vjp(
                        xs[t].as_slice(),
                        &full,
                        ty,
                        cot.as_slice(),
                        &mut g_x,
                        &mut g_u,
                        &mut g_ty,
                    );
                }
            }
            if t < p && want_grad {
                self.model.state_vjp(
                    xs[t].as_slice(),
                    &full,
                    tx,
                    &lambda,
                    &mut g_x,
                    &mut g_u,
                    &mut g_tx,
                );
            }
            if !value.is_finite() {
                return (f64::INFINITY, grad);
            }
            if want_grad {
                let slot = t.min(p - 1) * nu;
                for (g, v) in grad[slot..slot + nu].iter_mut().zip(&g_u[..nu]) {
                    *g += v;
                }
                lambda.copy_from_slice(&g_x);
            }
            // u_p = u_{p-1}, so the last increment is identically zero.
            if t < p {
                let prev = if t == 0 { self.u_prev } else { input_at(t - 1) };
                let du = Vector::from_iterator(nu, ut.iter().zip(prev).map(|(a, b)| a - b));
                value += (&c.w_du * &du).norm_squared();
                if want_grad {
                    let g = (&wdu2 * &du) * 2.0;
                    for i in 0..nu {
                        grad[t * nu + i] += g[i];
                        if t > 0 {
                            grad[(t - 1) * nu + i] -= g[i];
                        }
                    }
                }
            }
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration limit hit; the best feasible iterate is returned.
    MaxIterations,
    /// Backtracking could not decrease the objective further.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// `u_0..u_{p-1}`.
    pub inputs: Vec<Vector>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective after each accepted iteration, starting with the initial
    /// point.
    pub trace: Vec<f64>,
}

impl MpcSolution {
    pub fn first(&self) -> &Vector {
        &self.inputs[0]
    }

    /// The shifted sequence used to warm-start the next step.
    pub fn shifted(&self) -> Vec<Vector> {
        let mut out: Vec<Vector> = self.inputs[1..].to_vec();
        out.push(self.inputs.last().unwrap().clone());
        out
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Box-constrained minimization of the MPC objective by projected gradient
/// with Barzilai-Borwein steps and Armijo backtracking. Without a warm start
/// the initial guess repeats `u_prev`.
pub fn nmpc_solve<M: DynamicModel + ?Sized>(
    problem: &MpcProblem<'_, M>,
    warm_start: Option<&[Vector]>,
) -> Result<MpcSolution> {
    problem.check()?;
    let c = problem.config;
    let (p, nu) = (c.horizon, c.n_u());
    let mut u: Vec<f64> = match warm_start {
        Some(w) => {
            if w.len() != p || w.iter().any(|v| v.len() != nu) {
                return Err(Error::dims("warm start must hold p inputs"));
            }
            w.iter().flat_map(|v| v.iter().copied()).collect()
        }
        None => problem.u_prev.iter().copied().cycle().take(p * nu).collect(),
    };
    c.project(&mut u);
    let (mut value, mut grad) = problem.value_grad(&u, true);
    if !value.is_finite() {
        return Err(Error::NonFiniteEvaluation);
    }
    let mut trace = vec![value];
    let mut alpha = 1.0 / grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < c.max_iterations {
        let (_, pg) = projected_step(c, &u, &grad, 1.0);
        if pg.iter().fold(0.0f64, |m, s| m.max(s.abs())) < c.tolerance {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let (cand, step) = projected_step(c, &u, &grad, alpha);
            let decrease: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            let (v_new, g_new) = problem.value_grad(&cand, true);
            if v_new.is_finite() && v_new <= value + ARMIJO * decrease {
                accepted = Some((cand, v_new, g_new, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, v_new, g_new, step)) = accepted else {
            status = SolveStatus::LineSearchStalled;
            break;
        };
        let sy: f64 = step
            .iter()
            .zip(g_new.iter().zip(&grad))
            .map(|(s, (a, b))| s * (a - b))
            .sum();
        let ss: f64 = step.iter().map(|s| s * s).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { alpha * 2.0 };
        u = cand;
        value = v_new;
        grad = g_new;
        trace.push(value);
    }
    if status == SolveStatus::MaxIterations {
        log::debug!("MPC solver hit the iteration limit ({})", c.max_iterations);
    }
    Ok(MpcSolution {
        inputs: u.chunks(nu).map(Vector::from_column_slice).collect(),
        objective: value,
        iterations,
        status,
        trace,
    })
}

/// Projected point and its offset from `u`.
fn projected_step(c: &MpcConfig, u: &[f64], grad: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut cand: Vec<f64> = u.iter().zip(grad).map(|(a, g)| a - alpha * g).collect();
    c.project(&mut cand);
    let step = cand.iter().zip(u).map(|(c, a)| c - a).collect();
    (cand, step)
}

/// A continuous-time plant `ẋ = g(x, u, v)`, `y = h(x)` sampled every
/// `sample_time` under zero-order hold.
pub trait Plant {
    fn n_x(&self) -> usize;
    /// Manipulated inputs.
    fn n_u(&self) -> usize;
    /// Measured disturbances.
    fn n_v(&self) -> usize;
    fn n_y(&self) -> usize;
    fn derivative(&self, x: &[f64], u: &[f64], v: &[f64]) -> Vector;
    fn output(&self, x: &[f64]) -> Vector;
    fn sample_time(&self) -> f64;
    fn substeps(&self) -> usize {
        10
    }
    fn initial_state(&self) -> Vector;
    /// Manipulated input that holds `initial_state` at rest, if known.
    fn equilibrium_input(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Fixed-step RK4 over one sample period split into `substeps` steps.
pub fn integrate<P: Plant + ?Sized>(
    plant: &P,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    substeps: usize,
) -> Result<Vector> {
    if x.len() != plant.n_x() || u.len() != plant.n_u() || v.len() != plant.n_v() {
        return Err(Error::dims("plant input or state width mismatch"));
    }
    if substeps == 0 {
        return Err(Error::InvalidConfig("integrator needs at least one substep".into()));
    }
    let h = plant.sample_time() / substeps as f64;
    let mut x = Vector::from_column_slice(x);
    for _ in 0..substeps {
        let k1 = plant.derivative(x.as_slice(), u, v);
        let k2 = plant.derivative((&x + &k1 * (h / 2.0)).as_slice(), u, v);
        let k3 = plant.derivative((&x + &k2 * (h / 2.0)).as_slice(), u, v);
        let k4 = plant.derivative((&x + &k3 * h).as_slice(), u, v);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation);
    }
    Ok(x)
}

/// One sample period with the plant's own substep count.
pub fn plant_step<P: Plant + ?Sized>(plant: &P, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vector> {
    integrate(plant, x, u, v, plant.substeps())
}

/// Constants of the exothermic CSTR.
#[derive(Debug, Clone, PartialEq)]
pub struct CstrParams {
    /// Flow over volume (1/min).
    pub dilution: f64,
    /// Feed temperature (K).
    pub feed_temperature: f64,
    /// Pre-exponential factor (1/min).
    pub k0: f64,
    /// Activation energy over the gas constant (K).
    pub activation: f64,
    /// Heat of reaction over density and heat capacity (K·m³/kmol).
    pub heat_release: f64,
    /// Heat transfer coefficient over volume, density and heat capacity (1/min).
    pub heat_transfer: f64,
    /// Sample time (min).
    pub sample_time: f64,
    pub substeps: usize,
    /// Coolant temperature at which the plant starts at rest (K).
    pub nominal_coolant: f64,
    /// Feed concentration at which the plant starts at rest (kmol/m³).
    pub nominal_feed: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        CstrParams {
            dilution: 1.0,
            feed_temperature: 350.0,
            k0: 7.2e10,
            activation: 8750.0,
            heat_release: 209.2,
            heat_transfer: 2.092,
            sample_time: 0.05,
            substeps: 10,
            nominal_coolant: 289.0,
            nominal_feed: 1.0,
        }
    }
}

/// Continuous stirred tank with a first-order exothermic reaction.
///
/// ```text
/// dCa/dt = q/V (v - Ca) - k0 exp(-E/T) Ca
/// dT/dt  = q/V (Tf - T) + J k0 exp(-E/T) Ca + h (u - T)
/// ```
///
/// State `[Ca, T]`, manipulated input `u` the coolant temperature, measured
/// disturbance `v` the feed concentration, output `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cstr {
    pub params: CstrParams,
    rest: Vector,
}

/// Admissible coolant temperatures (K).
pub const CSTR_COOLANT_RANGE: (f64, f64) = (280.0, 298.0);

impl Cstr {
    pub fn new(params: CstrParams) -> Result<Self> {
        let ok = [
            params.dilution,
            params.k0,
            params.activation,
            params.heat_release,
            params.heat_transfer,
            params.sample_time,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
            && params.feed_temperature.is_finite()
            && params.substeps > 0;
        if !ok {
            return Err(Error::InvalidConfig("CSTR constants must be positive".into()));
        }
        let mut plant = Cstr {
            params,
            rest: Vector::from_vec(vec![0.9, 310.0]),
        };
        plant.rest = plant.settle(&[plant.params.nominal_coolant], &[plant.params.nominal_feed])?;
        Ok(plant)
    }

    /// State reached after holding `(u, v)` for 100 minutes from rest.
    pub fn settle(&self, u: &[f64], v: &[f64]) -> Result<Vector> {
        let mut x = self.rest.clone();
        let steps = (100.0 / self.params.sample_time).ceil() as usize;
        for _ in 0..steps {
            x = plant_step(self, x.as_slice(), u, v)?;
        }
        Ok(x)
    }
}

impl Plant for Cstr {
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_v(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }

    fn derivative(&self, x: &[f64], u: &[f64], v: &[f64]) -> Vector {
        let p = &self.params;
        let (ca, t) = (x[0], x[1]);
        let rate = p.k0 * (-p.activation / t).exp() * ca;
        Vector::from_vec(vec![
            p.dilution * (v[0] - ca) - rate,
            p.dilution * (p.feed_temperature - t) + p.heat_release * rate + p.heat_transfer * (u[0] - t),
        ])
    }

    fn output(&self, x: &[f64]) -> Vector {
        Vector::from_vec(vec![x[1]])
    }

    fn sample_time(&self) -> f64 {
        self.params.sample_time
    }

    fn substeps(&self) -> usize {
        self.params.substeps
    }

    fn initial_state(&self) -> Vector {
        self.rest.clone()
    }

    fn equilibrium_input(&self) -> Option<Vec<f64>> {
        Some(vec![self.params.nominal_coolant])
    }
}

/// Excitation for identification: every input channel holds a uniform
/// random level for a random number of samples in `hold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub u_range: Vec<(f64, f64)>,
    pub v_range: Vec<(f64, f64)>,
    pub hold: (usize, usize),
}

impl Excitation {
    /// Full coolant range, feed concentration within ±10%.
    pub fn cstr() -> Self {
        Excitation {
            u_range: vec![CSTR_COOLANT_RANGE],
            v_range: vec![(0.9, 1.1)],
            hold: (5, 40),
        }
    }
}

/// Simulates the plant from its initial state under random piecewise-constant
/// inputs. Dataset inputs are `[u; v]`, outputs are the plant outputs.
pub fn excite_plant<P: Plant + ?Sized>(
    plant: &P,
    excitation: &Excitation,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let (nu, nv) = (plant.n_u(), plant.n_v());
    let (h_lo, h_hi) = excitation.hold;
    if excitation.u_range.len() != nu || excitation.v_range.len() != nv {
        return Err(Error::dims("excitation ranges do not match the plant"));
    }
    if h_lo == 0 || h_lo > h_hi || n == 0 {
        return Err(Error::InvalidConfig("excitation needs 0 < hold_min <= hold_max, n > 0".into()));
    }
    let mut rng = SeededRng::new(seed);
    let ranges: Vec<(f64, f64)> = excitation.u_range.iter().chain(&excitation.v_range).copied().collect();
    let mut level: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect();
    let mut left: Vec<usize> = ranges.iter().map(|_| hold_len(&mut rng, h_lo, h_hi)).collect();
    let mut x = plant.initial_state();
    let mut inputs = Signal::new(nu + nv);
    let mut outputs = Signal::new(plant.n_y());
    for _ in 0..n {
        for j in 0..ranges.len() {
            if left[j] == 0 {
                level[j] = rng.uniform(ranges[j].0, ranges[j].1);
                left[j] = hold_len(&mut rng, h_lo, h_hi);
            }
            left[j] -= 1;
        }
        outputs.push(plant.output(x.as_slice()).as_slice())?;
        inputs.push(&level)?;
        x = plant_step(plant, x.as_slice(), &level[..nu], &level[nu..])?;
    }
    let mut data = Dataset::single(inputs, outputs)?;
    data.sample_time = Some(plant.sample_time());
    Ok(data)
}

fn hold_len(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform(0.0, (hi - lo + 1) as f64) as usize).min(hi - lo)
}

/// The trained model, its disturbance augmentation and the tuning used in
/// closed loop. Bounds are in plant units; weights apply to the model's
/// (scaled) signals.
#[derive(Debug, Clone)]
pub struct Controller<'a, M: ?Sized> {
    pub model: &'a M,
    pub theta: &'a ParamVector,
    pub dist: &'a DisturbanceModel,
    pub mpc: MpcConfig,
    pub estimator: EstimatorConfig,
    pub scaling: Option<Scaling>,
}

/// One closed-loop sample, in plant units.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRow {
    pub step: usize,
    pub time: f64,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    /// Disturbance estimate `d̂(k|k)` in model units.
    pub d_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopLog {
    pub rows: Vec<LoopRow>,
}

impl LoopLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.rows.first() else {
            writeln!(w, "step,time,iterations,solve_ms")?;
            return Ok(());
        };
        let mut header = vec!["step".to_string(), "time".to_string()];
        fn named(p: &'static str, n: usize) -> impl Iterator<Item = String> {
            (1..=n).map(move |i| format!("{p}{i}"))
        }
        header.extend(named("r", first.r.len()));
        header.extend(named("y", first.y.len()));
        header.extend(named("u", first.u.len()));
        header.extend(named("d", first.d_hat.len()));
        header.push("iterations".into());
        header.push("solve_ms".into());
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cells = vec![row.step.to_string(), fmt_f64(row.time)];
            for v in row.r.iter().chain(&row.y).chain(&row.u).chain(&row.d_hat) {
                cells.push(fmt_f64(*v));
            }
            cells.push(row.iterations.to_string());
            cells.push(format!("{:.3}", row.solve_ms));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Largest `|y - r|` over the last `n` rows.
    pub fn final_error(&self, n: usize) -> f64 {
        let start = self.rows.len().saturating_sub(n);
        self.rows[start..]
            .iter()
            .flat_map(|row| row.y.iter().zip(&row.r).map(|(y, r)| (y - r).abs()))
            .fold(0.0, f64::max)
    }
}

/// Runs `steps` samples of plant, estimator and controller. `reference(k)`
/// gives `r(k)` and `measured(k)` gives `v(k)`, both in plant units. On
/// failure the log holds every completed step.
pub fn closed_loop_sim<M, P, R, V>(
    plant: &P,
    ctrl: &Controller<'_, M>,
    reference: R,
    measured: V,
    steps: usize,
) -> (LoopLog, Result<()>)
where
    M: DynamicModel + ?Sized,
    P: Plant + ?Sized,
    R: Fn(usize) -> Vec<f64>,
    V: Fn(usize) -> Vec<f64>,
{
    let mut log = LoopLog::default();
    let res = run_loop(plant, ctrl, &reference, &measured, steps, &mut log);
    (log, res)
}

fn run_loop<M, P>(
    plant: &P,
    ctrl: &Controller<'_, M>,
    reference: &dyn Fn(usize) -> Vec<f64>,
    measured: &dyn Fn(usize) -> Vec<f64>,
    steps: usize,
    log: &mut LoopLog,
) -> Result<()>
where
    M: DynamicModel + ?Sized,
    P: Plant + ?Sized,
{
    let model = ctrl.model;
    let (nu, nv, ny) = (plant.n_u(), plant.n_v(), plant.n_y());
    if model.n_u() != nu + nv || model.n_y() != ny {
        return Err(Error::dims(format!(
            "model is {}-in/{}-out, plant is {}+{}-in/{}-out",
            model.n_u(),
            model.n_y(),
            nu,
            nv,
            ny
        )));
    }
    ctrl.mpc.validate(nu, ny)?;
    let scaling = match &ctrl.scaling {
        Some(s) => {
            s.check_widths(nu + nv, ny)?;
            s.clone()
        }
        None => Scaling::identity(nu + nv, ny),
    };
    let mut cfg = ctrl.mpc.clone();
    for j in 0..nu {
        cfg.u_min[j] = scaling.scale_input(j, ctrl.mpc.u_min[j]);
        cfg.u_max[j] = scaling.scale_input(j, ctrl.mpc.u_max[j]);
    }
    let scale_v = |v: &[f64]| -> Vec<f64> {
        v.iter().enumerate().map(|(j, x)| scaling.scale_input(nu + j, *x)).collect()
    };
    let scale_y = |y: &[f64]| -> Vector {
        Vector::from_iterator(ny, y.iter().enumerate().map(|(j, x)| scaling.scale_output(j, *x)))
    };

    let u_start = plant.equilibrium_input().unwrap_or_else(|| {
        ctrl.mpc.u_min.iter().zip(&ctrl.mpc.u_max).map(|(a, b)| 0.5 * (a + b)).collect()
    });
    if u_start.len() != nu {
        return Err(Error::dims("plant equilibrium input has the wrong width"));
    }
    let mut u_prev: Vec<f64> = (0..nu).map(|j| scaling.scale_input(j, u_start[j])).collect();
    cfg.project(&mut u_prev);

    let mut est = DisturbanceEstimator::new(
        model,
        ctrl.dist,
        &vec![0.0; model.n_x()],
        &vec![0.0; ctrl.dist.n_d()],
        &ctrl.estimator,
    )?;
    let mut xp = plant.initial_state();
    let mut warm: Option<Vec<Vector>> = None;
    for k in 0..steps {
        let y = plant.output(xp.as_slice());
        let v = measured(k);
        if v.len() != nv {
            return Err(Error::dims("measured disturbance has the wrong width"));
        }
        let vs = scale_v(&v);
        // u(k) is not known yet; the last applied input stands in for it.
        let meas_u: Vec<f64> = u_prev.iter().chain(&vs).copied().collect();
        est.measurement_update(model, ctrl.theta, ctrl.dist, &meas_u, scale_y(y.as_slice()).as_slice())?;

        let r_plant = reference(k);
        if r_plant.len() != ny {
            return Err(Error::dims("reference has the wrong width"));
        }
        let refs: Vec<Vector> = (0..=cfg.horizon).map(|t| scale_y(&reference(k + t))).collect();
        let x_hat = est.x().to_vec();
        let d_hat = est.d().to_vec();
        let problem = MpcProblem {
            model,
            theta: ctrl.theta,
            dist: ctrl.dist,
            config: &cfg,
            x0: &x_hat,
            d: &d_hat,
            u_prev: &u_prev,
            v: &vs,
            reference: &refs,
        };
        let t0 = Instant::now();
        let sol = nmpc_solve(&problem, warm.as_deref())?;
        let solve_ms = t0.elapsed().as_secs_f64() * 1e3;
        let u0 = sol.first().clone();
        // Unscaling can round just past a bound.
        let u_plant: Vec<f64> = (0..nu)
            .map(|j| {
                scaling
                    .unscale_input(j, u0[j])
                    .clamp(ctrl.mpc.u_min[j], ctrl.mpc.u_max[j])
            })
            .collect();

        log.rows.push(LoopRow {
            step: k,
            time: k as f64 * plant.sample_time(),
            r: r_plant,
            y: y.iter().copied().collect(),
            u: u_plant.clone(),
            d_hat,
            x_hat,
            iterations: sol.iterations,
            status: sol.status,
            solve_ms,
        });

        xp = plant_step(plant, xp.as_slice(), &u_plant, &v)?;
        let applied: Vec<f64> = u0.iter().chain(&vs).copied().collect();
        est.time_update(model, ctrl.theta, ctrl.dist, &applied)?;
        u_prev = u0.iter().copied().collect();
        warm = Some(sol.shifted());
    }
    Ok(())
}
