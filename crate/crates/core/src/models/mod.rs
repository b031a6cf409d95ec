//! Parametric recurrent models `x⁺ = f_x(x, u, θx)`, `ŷ = f_y(x, u, θy)`.
//!
//! Two families are provided: layered RNNs ([`RnnModel`]) and a single-layer
//! LSTM ([`LstmModel`]). Both expose values and analytic Jacobians through
//! [`DynamicModel`], which is all the estimators and optimizers need.
//!
//! Parameters are one flat vector `θ = [θx; θy]`. Within each network the
//! layers are stored in order, each as its weight matrix (row-major) followed
//! by its bias.

mod activation;
mod file;
mod lstm;
mod network;
mod rnn;

use serde::{Deserialize, Serialize};

pub use activation::Activation;
pub use file::{ModelFile, MODEL_FORMAT_VERSION};
pub use lstm::{LstmModel, LstmSpec};
pub use rnn::{HiddenLayer, RnnModel, RnnSpec, RnnWeights};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng, Signal, Vector};

/// Upper bound on any single layer width or signal dimension.
pub const MAX_WIDTH: usize = 4096;
/// Upper bound on the number of hidden layers per network.
pub const MAX_DEPTH: usize = 64;

/// Value of a map together with its partial derivatives.
#[derive(Debug, Clone)]
pub struct LocalJacobian {
    pub value: Vector,
    pub d_x: Matrix,
    pub d_u: Matrix,
    pub d_theta: Matrix,
}

/// The four blocks used by the EKF linearization.
#[derive(Debug, Clone)]
pub struct ModelJacobians {
    pub fx_x: Matrix,
    pub fx_theta: Matrix,
    pub fy_x: Matrix,
    pub fy_theta: Matrix,
}

/// Where a flat parameter index lives in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub block: ParamBlock,
    /// Layer index (gate index for LSTM state parameters).
    pub layer: usize,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    State,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { row: usize, col: usize },
    Bias { row: usize },
}

/// A state-space model with differentiable state-update and output maps.
pub trait DynamicModel: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    fn n_theta_x(&self) -> usize;
    fn n_theta_y(&self) -> usize;

    fn n_theta(&self) -> usize {
        self.n_theta_x() + self.n_theta_y()
    }

    fn state_update(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> Vector;
    fn output(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> Vector;
    fn state_jacobian(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> LocalJacobian;
    fn output_jacobian(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> LocalJacobian;

    /// Accumulates `cotᵀ ∂f_x` into the three gradient buffers and returns
    /// `f_x(x, u, θx)`.
    #[allow(clippy::too_many_arguments)]
    fn state_vjp(
        &self,
        x: &[f64],
        u: &[f64],
        theta_x: &[f64],
        cot: &[f64],
        g_x: &mut [f64],
        g_u: &mut [f64],
        g_theta: &mut [f64],
    ) -> Vector {
        let j = self.state_jacobian(x, u, theta_x);
        accumulate_vjp(&j, cot, g_x, g_u, g_theta);
        j.value
    }

    /// Output-map counterpart of [`DynamicModel::state_vjp`].
    #[allow(clippy::too_many_arguments)]
    fn output_vjp(
        &self,
        x: &[f64],
        u: &[f64],
        theta_y: &[f64],
        cot: &[f64],
        g_x: &mut [f64],
        g_u: &mut [f64],
        g_theta: &mut [f64],
    ) -> Vector {
        let j = self.output_jacobian(x, u, theta_y);
        accumulate_vjp(&j, cot, g_x, g_u, g_theta);
        j.value
    }

    /// Xavier-uniform weights times `scale`, zero biases.
    fn init_params(&self, rng: &mut SeededRng, scale: f64) -> ParamVector;

    fn param_layout(&self) -> Vec<ParamSlot>;

    /// Flat indices of the last output-layer bias `b_{Ly}^y` within θ.
    fn output_bias_indices(&self) -> Vec<usize>;

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.n_theta_x())
    }
}

fn accumulate_vjp(
    j: &LocalJacobian,
    cot: &[f64],
    g_x: &mut [f64],
    g_u: &mut [f64],
    g_theta: &mut [f64],
) {
    let cot = Vector::from_column_slice(cot);
    for (g, v) in g_x.iter_mut().zip((j.d_x.transpose() * &cot).iter()) {
        *g += v;
    }
    for (g, v) in g_u.iter_mut().zip((j.d_u.transpose() * &cot).iter()) {
        *g += v;
    }
    for (g, v) in g_theta.iter_mut().zip((j.d_theta.transpose() * &cot).iter()) {
        *g += v;
    }
}

/// Flat parameter vector `θ = [θx; θy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    n_theta_x: usize,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, n_theta_x: usize) -> Result<Self> {
        if n_theta_x > values.len() {
            return Err(Error::dims("n_theta_x exceeds parameter count"));
        }
        Ok(ParamVector { values, n_theta_x })
    }

    pub fn zeros(model: &(impl DynamicModel + ?Sized)) -> Self {
        ParamVector {
            values: vec![0.0; model.n_theta()],
            n_theta_x: model.n_theta_x(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_theta_x(&self) -> usize {
        self.n_theta_x
    }

    pub fn theta_x(&self) -> &[f64] {
        &self.values[..self.n_theta_x]
    }

    pub fn theta_y(&self) -> &[f64] {
        &self.values[self.n_theta_x..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_column_slice(&self.values)
    }

    /// Fraction of entries with `|θ_i| <= threshold`.
    pub fn zero_fraction(&self, threshold: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let zeros = self.values.iter().filter(|v| v.abs() <= threshold).count();
        zeros as f64 / self.values.len() as f64
    }

    pub fn check(&self, model: &(impl DynamicModel + ?Sized)) -> Result<()> {
        if self.n_theta_x != model.n_theta_x() || self.len() != model.n_theta() {
            return Err(Error::dims(format!(
                "parameter vector ({}, split {}) does not fit model ({}, split {})",
                self.len(),
                self.n_theta_x,
                model.n_theta(),
                model.n_theta_x()
            )));
        }
        Ok(())
    }
}

/// Model selected by a config or model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rnn(RnnModel),
    Lstm(LstmModel),
}

/// Serializable description of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Rnn(RnnSpec),
    Lstm(LstmSpec),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::Rnn(s) => Model::Rnn(RnnModel::new(s.clone())?),
            ModelSpec::Lstm(s) => Model::Lstm(LstmModel::new(s.clone())?),
        })
    }
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Rnn(m) => ModelSpec::Rnn(m.spec().clone()),
            Model::Lstm(m) => ModelSpec::Lstm(m.spec().clone()),
        }
    }

    fn inner(&self) -> &dyn DynamicModel {
        match self {
            Model::Rnn(m) => m,
            Model::Lstm(m) => m,
        }
    }
}

impl DynamicModel for Model {
    fn n_x(&self) -> usize {
        self.inner().n_x()
    }
    fn n_u(&self) -> usize {
        self.inner().n_u()
    }
    fn n_y(&self) -> usize {
        self.inner().n_y()
    }
    fn n_theta_x(&self) -> usize {
        self.inner().n_theta_x()
    }
    fn n_theta_y(&self) -> usize {
        self.inner().n_theta_y()
    }
    fn state_update(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> Vector {
        self.inner().state_update(x, u, theta_x)
    }
    fn output(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> Vector {
        self.inner().output(x, u, theta_y)
    }
    fn state_jacobian(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> LocalJacobian {
        self.inner().state_jacobian(x, u, theta_x)
    }
    fn output_jacobian(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> LocalJacobian {
        self.inner().output_jacobian(x, u, theta_y)
    }
    fn state_vjp(
        &self,
        x: &[f64],
        u: &[f64],
        theta_x: &[f64],
        cot: &[f64],
        g_x: &mut [f64],
        g_u: &mut [f64],
        g_theta: &mut [f64],
    ) -> Vector {
        self.inner()
            .state_vjp(x, u, theta_x, cot, g_x, g_u, g_theta)
    }
    fn output_vjp(
        &self,
        x: &[f64],
        u: &[f64],
        theta_y: &[f64],
        cot: &[f64],
        g_x: &mut [f64],
        g_u: &mut [f64],
        g_theta: &mut [f64],
    ) -> Vector {
        self.inner()
            .output_vjp(x, u, theta_y, cot, g_x, g_u, g_theta)
    }
    fn init_params(&self, rng: &mut SeededRng, scale: f64) -> ParamVector {
        self.inner().init_params(rng, scale)
    }
    fn param_layout(&self) -> Vec<ParamSlot> {
        self.inner().param_layout()
    }
    fn output_bias_indices(&self) -> Vec<usize> {
        self.inner().output_bias_indices()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dims(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

/// `x(k+1) = f_x(x(k), u(k), θx)` with dimension checks.
pub fn state_update<M: DynamicModel + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    theta_x: &[f64],
) -> Result<Vector> {
    check_len("state", x.len(), model.n_x())?;
    check_len("input", u.len(), model.n_u())?;
    check_len("theta_x", theta_x.len(), model.n_theta_x())?;
    Ok(model.state_update(x, u, theta_x))
}

/// `ŷ(k) = f_y(x(k), u(k), θy)` with dimension checks.
pub fn output<M: DynamicModel + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    theta_y: &[f64],
) -> Result<Vector> {
    check_len("state", x.len(), model.n_x())?;
    check_len("input", u.len(), model.n_u())?;
    check_len("theta_y", theta_y.len(), model.n_theta_y())?;
    Ok(model.output(x, u, theta_y))
}

/// The four Jacobian blocks at `(x, u, θ)`.
pub fn jacobians<M: DynamicModel + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    theta: &ParamVector,
) -> Result<ModelJacobians> {
    theta.check(model)?;
    check_len("state", x.len(), model.n_x())?;
    check_len("input", u.len(), model.n_u())?;
    let jx = model.state_jacobian(x, u, theta.theta_x());
    let jy = model.output_jacobian(x, u, theta.theta_y());
    Ok(ModelJacobians {
        fx_x: jx.d_x,
        fx_theta: jx.d_theta,
        fy_x: jy.d_x,
        fy_theta: jy.d_theta,
    })
}

/// Open-loop simulation result: `states[k] = x(k)` and `outputs[k] = ŷ(k)`
/// for `k = 0..N`, plus the state after the last input.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub outputs: Signal,
    pub final_state: Vector,
}

/// Iterates the model from `x0` under `inputs`.
pub fn simulate<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    x0: &[f64],
    inputs: &Signal,
) -> Result<Trajectory> {
    theta.check(model)?;
    check_len("x0", x0.len(), model.n_x())?;
    check_len("input width", inputs.width(), model.n_u())?;
    if inputs.is_empty() {
        return Err(Error::dims("simulate needs at least one input sample"));
    }
    let (tx, ty) = model.split(theta.as_slice());
    let mut x = Vector::from_column_slice(x0);
    let mut states = Vec::with_capacity(inputs.len());
    let mut outputs = Signal::new(model.n_y());
    for (k, u) in inputs.rows().enumerate() {
        let y = model.output(x.as_slice(), u, ty);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k });
        }
        outputs.push(y.as_slice())?;
        let next = model.state_update(x.as_slice(), u, tx);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.push(std::mem::replace(&mut x, next));
    }
    Ok(Trajectory {
        states,
        outputs,
        final_state: x,
    })
}

/// Simulated outputs only.
pub fn simulate_outputs<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    x0: &[f64],
    inputs: &Signal,
) -> Result<Signal> {
    simulate(model, theta, x0, inputs).map(|t| t.outputs)
}
