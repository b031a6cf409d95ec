//! Output-prediction losses and parameter/initial-state regularizers.
//!
//! Every loss exposes its value, gradient and Hessian in `ŷ`. The EKF does not
//! use the loss directly: it consumes the innovation `e = -Q_y ∂ℓ/∂ŷ` and the
//! pseudo-noise covariance `Q_y = (∂²ℓ/∂ŷ²)⁻¹` returned by [`loss_terms`].

use std::fmt;
use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{simulate_outputs, DynamicModel, ParamVector};
use crate::numerics::{spd_solve, Matrix, SpdMatrix, Vector};

type LossFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type LossGrad = Arc<dyn Fn(&[f64], &[f64]) -> Vector + Send + Sync>;
type LossHess = Arc<dyn Fn(&[f64], &[f64]) -> Matrix + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied loss `ℓ(y, ŷ)`; all three callbacks take `(y, ŷ)`.
#[derive(Clone)]
pub struct CustomLoss {
    pub value: LossFn,
    pub grad: LossGrad,
    pub hess: LossHess,
}

impl fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomLoss")
    }
}

/// Weighted squared error `½‖y - ŷ‖²_W`. Stores `W⁻¹` alongside `W`.
#[derive(Debug, Clone)]
pub struct MseLoss {
    weight: SpdMatrix,
    q_y: SpdMatrix,
}

impl MseLoss {
    pub fn weight(&self) -> &SpdMatrix {
        &self.weight
    }

    /// `W⁻¹`, the measurement covariance the EKF uses for this loss.
    pub fn q_y(&self) -> &SpdMatrix {
        &self.q_y
    }
}

#[derive(Debug, Clone)]
pub enum Loss {
    Mse(MseLoss),
    /// Cross-entropy `Σ -y log(ε + ŷ) - (1 - y) log(1 + ε - ŷ)` for binary
    /// outputs.
    CrossEntropy { epsilon: f64 },
    Custom(CustomLoss),
}

/// Innovation and measurement covariance handed to the EKF.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub e: Vector,
    pub q_y: SpdMatrix,
}

impl Loss {
    pub fn mse(weight: SpdMatrix) -> Result<Self> {
        let q_y = weight.inverse()?;
        Ok(Loss::Mse(MseLoss { weight, q_y }))
    }

    /// Unweighted MSE on `n_y` outputs.
    pub fn mse_identity(n_y: usize) -> Self {
        Loss::Mse(MseLoss {
            weight: SpdMatrix::identity(n_y),
            q_y: SpdMatrix::identity(n_y),
        })
    }

    pub fn cross_entropy(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig("cross-entropy epsilon must be positive".into()));
        }
        Ok(Loss::CrossEntropy { epsilon })
    }

    /// Checks that the loss applies to `n_y` outputs.
    pub fn check_outputs(&self, n_y: usize) -> Result<()> {
        match self {
            Loss::Mse(m) if m.weight.dim() != n_y => Err(Error::dims(format!(
                "MSE weight is {0}x{0} but the model has {n_y} outputs",
                m.weight.dim()
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, y: &[f64], y_hat: &[f64]) -> f64 {
        match self {
            Loss::Mse(m) => {
                let r = residual(y, y_hat);
                0.5 * r.dot(&(m.weight.as_matrix() * &r))
            }
            Loss::CrossEntropy { epsilon } => y
                .iter()
                .zip(y_hat)
                .map(|(&yi, &p)| {
                    let p = p.clamp(0.0, 1.0);
                    -yi * (epsilon + p).ln() - (1.0 - yi) * (1.0 + epsilon - p).ln()
                })
                .sum(),
            Loss::Custom(c) => (c.value)(y, y_hat),
        }
    }

    /// `∂ℓ/∂ŷ`.
    pub fn gradient(&self, y: &[f64], y_hat: &[f64]) -> Vector {
        match self {
            Loss::Mse(m) => -(m.weight.as_matrix() * residual(y, y_hat)),
            Loss::CrossEntropy { epsilon } => Vector::from_iterator(
                y.len(),
                y.iter().zip(y_hat).map(|(&yi, &p)| {
                    let p = p.clamp(0.0, 1.0);
                    -yi / (epsilon + p) + (1.0 - yi) / (1.0 + epsilon - p)
                }),
            ),
            Loss::Custom(c) => (c.grad)(y, y_hat),
        }
    }

    /// `∂²ℓ/∂ŷ²`.
    pub fn hessian(&self, y: &[f64], y_hat: &[f64]) -> Matrix {
        match self {
            Loss::Mse(m) => m.weight.as_matrix().clone(),
            Loss::CrossEntropy { epsilon } => {
                let d = y.iter().zip(y_hat).map(|(&yi, &p)| ce_curvature(*epsilon, yi, p));
                Matrix::from_diagonal(&Vector::from_iterator(y.len(), d))
            }
            Loss::Custom(c) => (c.hess)(y, y_hat),
        }
    }
}

fn residual(y: &[f64], y_hat: &[f64]) -> Vector {
    Vector::from_iterator(y.len(), y.iter().zip(y_hat).map(|(a, b)| a - b))
}

fn ce_curvature(eps: f64, y: f64, p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    y / ((eps + p) * (eps + p)) + (1.0 - y) / ((1.0 + eps - p) * (1.0 + eps - p))
}

/// `Q_y = (∂²ℓ/∂ŷ²)⁻¹` and `e = -Q_y ∂ℓ/∂ŷ` at `ŷ`.
///
/// The MSE loss returns `e = y - ŷ` and `Q_y = W⁻¹` directly.
pub fn loss_terms(loss: &Loss, y: &[f64], y_hat: &[f64]) -> Result<LossTerms> {
    if y.len() != y_hat.len() {
        return Err(Error::dims("loss_terms: y and ŷ differ in length"));
    }
    match loss {
        Loss::Mse(m) => {
            loss.check_outputs(y.len())?;
            Ok(LossTerms {
                e: residual(y, y_hat),
                q_y: m.q_y.clone(),
            })
        }
        Loss::CrossEntropy { epsilon } => Ok(ce_terms(*epsilon, y, y_hat)),
        Loss::Custom(c) => {
            let h = (c.hess)(y, y_hat);
            let g = (c.grad)(y, y_hat);
            if h.shape() != (y.len(), y.len()) || g.len() != y.len() {
                return Err(Error::dims("custom loss derivatives have the wrong shape"));
            }
            if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEvaluation);
            }
            let h = SpdMatrix::new(h)?;
            let n = y.len();
            let q = spd_solve(&h, &Matrix::identity(n, n)).map_err(|e| match e {
                Error::NotPositiveDefinite => Error::HessianNotPD,
                other => other,
            })?;
            let q_y = SpdMatrix::new(q)?;
            let e = -(q_y.as_matrix() * g);
            Ok(LossTerms { e, q_y })
        }
    }
}

/// Closed-form innovation terms of the ε-modified cross-entropy, per output:
/// `e = (1 + 2ε) y + ŷ - 1 - ε`, `Q_y = (ε + ŷ)²` if `y = 1` and
/// `(1 + ε - ŷ)²` if `y = 0`. Predictions are clamped to `[0, 1]`.
/// Non-binary labels fall back to the general Newton form.
pub fn ce_terms(epsilon: f64, y: &[f64], y_hat: &[f64]) -> LossTerms {
    let n = y.len();
    let mut e = Vector::zeros(n);
    let mut q = Vector::zeros(n);
    for i in 0..n {
        let p = y_hat[i].clamp(0.0, 1.0);
        let yi = y[i];
        if yi == 1.0 || yi == 0.0 {
            e[i] = (1.0 + 2.0 * epsilon) * yi + p - 1.0 - epsilon;
            let s = if yi == 1.0 { epsilon + p } else { 1.0 + epsilon - p };
            q[i] = s * s;
        } else {
            let h = ce_curvature(epsilon, yi, p);
            let g = -yi / (epsilon + p) + (1.0 - yi) / (1.0 + epsilon - p);
            q[i] = 1.0 / h;
            e[i] = -g / h;
        }
    }
    LossTerms {
        e,
        q_y: SpdMatrix::from_diagonal(q.as_slice()),
    }
}

/// A scalar penalty `ψ` with its first two derivatives.
#[derive(Clone)]
pub struct ScalarPenalty {
    pub value: ScalarFn,
    pub d1: ScalarFn,
    pub d2: ScalarFn,
}

impl fmt::Debug for ScalarPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarPenalty")
    }
}

impl ScalarPenalty {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarPenalty {
            value: Arc::new(value),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
        }
    }

    /// `ψ(t) = ½ ρ̄ t²`.
    pub fn quadratic(rho: f64) -> Self {
        ScalarPenalty::new(
            move |t| 0.5 * rho * t * t,
            move |t| rho * t,
            move |_| rho,
        )
    }
}

/// `Ψ(θ) = Σ ψ_i(θ_i)`, with one penalty shared by all entries or one per entry.
#[derive(Debug, Clone)]
pub enum SeparablePsi {
    Broadcast(ScalarPenalty),
    PerEntry(Vec<ScalarPenalty>),
}

impl SeparablePsi {
    pub fn quadratic(rho: f64) -> Self {
        SeparablePsi::Broadcast(ScalarPenalty::quadratic(rho))
    }

    pub fn penalty(&self, i: usize) -> &ScalarPenalty {
        match self {
            SeparablePsi::Broadcast(p) => p,
            SeparablePsi::PerEntry(v) => &v[i],
        }
    }

    pub fn check_len(&self, n_theta: usize) -> Result<()> {
        match self {
            SeparablePsi::PerEntry(v) if v.len() != n_theta => Err(Error::dims(format!(
                "separable penalty has {} entries for {n_theta} parameters",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| (self.penalty(i).value)(t))
            .sum()
    }
}

/// Regularization terms; a training objective uses a list of them.
#[derive(Debug, Clone)]
pub enum Regularizer {
    /// `½ρθ‖θ‖² + ½ρx‖x0‖²`.
    L2 { rho_theta: f64, rho_x: f64 },
    SeparablePsi(SeparablePsi),
    /// `λ‖θ‖₁`.
    L1 { lambda: f64 },
}

impl Regularizer {
    pub fn validate(&self, n_theta: usize) -> Result<()> {
        match self {
            Regularizer::L2 { rho_theta, rho_x } => {
                if !(*rho_theta >= 0.0 && *rho_x >= 0.0)
                    || !rho_theta.is_finite()
                    || !rho_x.is_finite()
                {
                    return Err(Error::InvalidConfig("ℓ2 weights must be nonnegative".into()));
                }
                Ok(())
            }
            Regularizer::L1 { lambda } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidConfig("ℓ1 weight must be nonnegative".into()));
                }
                Ok(())
            }
            Regularizer::SeparablePsi(p) => p.check_len(n_theta),
        }
    }

    /// Contribution to `r_θ(θ)`.
    pub fn theta_value(&self, theta: &[f64]) -> f64 {
        match self {
            Regularizer::L2 { rho_theta, .. } => 0.5 * rho_theta * sq_norm(theta),
            Regularizer::SeparablePsi(p) => p.value(theta),
            Regularizer::L1 { lambda } => lambda * theta.iter().map(|t| t.abs()).sum::<f64>(),
        }
    }

    /// Contribution to `r_x(x0)`.
    pub fn x0_value(&self, x0: &[f64]) -> f64 {
        match self {
            Regularizer::L2 { rho_x, .. } => 0.5 * rho_x * sq_norm(x0),
            _ => 0.0,
        }
    }

    /// Accumulates `∇r_θ` into `g`. The ℓ1 term contributes the subgradient
    /// `λ sign(θ)` with `sign(0) = 0`.
    pub fn add_theta_gradient(&self, theta: &[f64], g: &mut [f64]) {
        match self {
            Regularizer::L2 { rho_theta, .. } => {
                for (gi, t) in g.iter_mut().zip(theta) {
                    *gi += rho_theta * t;
                }
            }
            Regularizer::SeparablePsi(p) => {
                for (i, (gi, &t)) in g.iter_mut().zip(theta).enumerate() {
                    *gi += (p.penalty(i).d1)(t);
                }
            }
            Regularizer::L1 { lambda } => {
                for (gi, &t) in g.iter_mut().zip(theta) {
                    *gi += lambda * sign(t);
                }
            }
        }
    }

    /// Accumulates `∇r_x` into `g`.
    pub fn add_x0_gradient(&self, x0: &[f64], g: &mut [f64]) {
        if let Regularizer::L2 { rho_x, .. } = self {
            for (gi, x) in g.iter_mut().zip(x0) {
                *gi += rho_x * x;
            }
        }
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum()
}

pub fn reg_theta_value(regs: &[Regularizer], theta: &[f64]) -> f64 {
    regs.iter().map(|r| r.theta_value(theta)).sum()
}

pub fn reg_x0_value(regs: &[Regularizer], x0: &[f64]) -> f64 {
    regs.iter().map(|r| r.x0_value(x0)).sum()
}

/// Sum of the ℓ1 weights in `regs`.
pub fn l1_weight(regs: &[Regularizer]) -> f64 {
    regs.iter()
        .map(|r| match r {
            Regularizer::L1 { lambda } => *lambda,
            _ => 0.0,
        })
        .sum()
}

/// `(ρx, ρθ)` summed over the ℓ2 terms of `regs`.
pub fn l2_weights(regs: &[Regularizer]) -> (f64, f64) {
    regs.iter().fold((0.0, 0.0), |(x, t), r| match r {
        Regularizer::L2 { rho_theta, rho_x } => (x + rho_x, t + rho_theta),
        _ => (x, t),
    })
}

/// Innovation and virtual-measurement variance of one separable penalty:
/// `e = -ψ'(θ_i)/ψ''(θ_i)`, `q = 1/ψ''(θ_i)`.
pub fn reg_scalar_terms(psi: &ScalarPenalty, theta_i: f64, index: usize) -> Result<(f64, f64)> {
    let d1 = (psi.d1)(theta_i);
    let d2 = (psi.d2)(theta_i);
    if !d1.is_finite() || !d2.is_finite() {
        return Err(Error::NonFiniteEvaluation);
    }
    if d2 <= 0.0 {
        return Err(Error::ZeroCurvature { index });
    }
    Ok((-d1 / d2, 1.0 / d2))
}

/// Training objective over all experiments:
/// `r_θ(θ) + Σ_d [ r_x(x0_d) + (1/N_d) Σ_k ℓ(y_d(k), ŷ_d(k)) ]`,
/// with `ŷ_d` simulated from `x0_d`.
pub fn eval_objective<M: DynamicModel + ?Sized>(
    loss: &Loss,
    regs: &[Regularizer],
    data: &Dataset,
    model: &M,
    theta: &ParamVector,
    x0: &[Vector],
) -> Result<f64> {
    if x0.len() != data.experiments.len() {
        return Err(Error::dims(format!(
            "{} initial states for {} experiments",
            x0.len(),
            data.experiments.len()
        )));
    }
    let mut v = reg_theta_value(regs, theta.as_slice());
    for (exp, x) in data.experiments.iter().zip(x0) {
        let y_hat = simulate_outputs(model, theta, x.as_slice(), &exp.inputs)?;
        v += reg_x0_value(regs, x.as_slice()) + data_loss(loss, &exp.outputs, &y_hat);
    }
    if !v.is_finite() {
        return Err(Error::NonFiniteEvaluation);
    }
    Ok(v)
}

/// `(1/N) Σ_k ℓ(y(k), ŷ(k))`.
pub fn data_loss(loss: &Loss, y: &crate::numerics::Signal, y_hat: &crate::numerics::Signal) -> f64 {
    let n = y.len().max(1) as f64;
    y.rows()
        .zip(y_hat.rows())
        .map(|(a, b)| loss.value(a, b))
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{RnnModel, RnnSpec};
    use crate::numerics::{finite_diff_gradient, Signal, FD_STEP};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mse_terms() {
        let t = loss_terms(&Loss::mse_identity(1), &[2.0], &[1.5]).unwrap();
        assert_eq!(t.e[0], 0.5);
        assert_eq!(t.q_y.as_matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn ce_terms_examples() {
        let eps = 0.005;
        let ce = Loss::cross_entropy(eps).unwrap();
        let t = loss_terms(&ce, &[1.0], &[0.8]).unwrap();
        assert_abs_diff_eq!(t.e[0], 0.805, epsilon = 1e-12);
        assert_abs_diff_eq!(t.q_y.as_matrix()[(0, 0)], 0.648025, epsilon = 1e-12);
        let t = loss_terms(&ce, &[0.0], &[0.2]).unwrap();
        assert_abs_diff_eq!(t.e[0], -0.805, epsilon = 1e-12);
        assert_abs_diff_eq!(t.q_y.as_matrix()[(0, 0)], 0.648025, epsilon = 1e-12);
        assert_abs_diff_eq!(ce_terms(eps, &[1.0], &[0.5]).e[0], 0.505, epsilon = 1e-12);
        assert_abs_diff_eq!(ce_terms(eps, &[0.0], &[0.5]).e[0], -0.505, epsilon = 1e-12);
    }

    #[test]
    fn ce_closed_form_matches_newton_step() {
        // The closed form must agree with -H⁻¹∇ℓ computed from the loss.
        let eps = 0.005;
        let ce = Loss::cross_entropy(eps).unwrap();
        for y in [0.0, 1.0] {
            for k in 0..=100 {
                let p = k as f64 / 100.0;
                let g = ce.gradient(&[y], &[p])[0];
                let h = ce.hessian(&[y], &[p])[(0, 0)];
                let t = ce_terms(eps, &[y], &[p]);
                assert_abs_diff_eq!(t.e[0], -g / h, epsilon = 1e-12);
                assert_abs_diff_eq!(t.q_y.as_matrix()[(0, 0)], 1.0 / h, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ce_paths_agree_bitwise() {
        let eps = 0.005;
        let ce = Loss::cross_entropy(eps).unwrap();
        for k in 0..1000 {
            let p = k as f64 / 999.0;
            let y = (k % 2) as f64;
            let a = ce_terms(eps, &[y], &[p]);
            let b = loss_terms(&ce, &[y], &[p]).unwrap();
            assert_eq!(a.e, b.e);
            assert_eq!(a.q_y, b.q_y);
            assert!(a.q_y.as_matrix()[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn custom_loss_matches_finite_differences() {
        // ℓ = Σ cosh(ŷ_i - y_i), strongly convex.
        let custom = Loss::Custom(CustomLoss {
            value: Arc::new(|y, p| y.iter().zip(p).map(|(a, b)| (b - a).cosh()).sum()),
            grad: Arc::new(|y, p| {
                Vector::from_iterator(y.len(), y.iter().zip(p).map(|(a, b)| (b - a).sinh()))
            }),
            hess: Arc::new(|y, p| {
                Matrix::from_diagonal(&Vector::from_iterator(
                    y.len(),
                    y.iter().zip(p).map(|(a, b)| (b - a).cosh()),
                ))
            }),
        });
        let y = [0.3, -0.4];
        let p = Vector::from_column_slice(&[0.9, 0.1]);
        let t = loss_terms(&custom, &y, p.as_slice()).unwrap();
        let fd = finite_diff_gradient(|v| custom.value(&y, v.as_slice()), &p, FD_STEP).unwrap();
        // -Q_y⁻¹ e = ∂ℓ/∂ŷ
        let recovered = -(t.q_y.inverse().unwrap().as_matrix() * &t.e);
        for (a, b) in recovered.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn custom_loss_not_convex_is_reported() {
        let concave = Loss::Custom(CustomLoss {
            value: Arc::new(|y, p| -0.5 * (p[0] - y[0]).powi(2)),
            grad: Arc::new(|y, p| Vector::from_element(1, -(p[0] - y[0]))),
            hess: Arc::new(|_, _| Matrix::from_element(1, 1, -1.0)),
        });
        assert!(matches!(
            loss_terms(&concave, &[0.0], &[1.0]),
            Err(Error::HessianNotPD)
        ));
    }

    #[test]
    fn mse_gradient_identity_weighted() {
        let w = SpdMatrix::new(Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let loss = Loss::mse(w).unwrap();
        let y = [1.0, -2.0];
        let p = Vector::from_column_slice(&[0.3, 0.7]);
        let t = loss_terms(&loss, &y, p.as_slice()).unwrap();
        assert_eq!(t.e, Vector::from_column_slice(&[0.7, -2.7]));
        let fd = finite_diff_gradient(|v| loss.value(&y, v.as_slice()), &p, FD_STEP).unwrap();
        let recovered = -(t.q_y.inverse().unwrap().as_matrix() * &t.e);
        for (a, b) in recovered.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_penalty_terms() {
        let (e, q) = reg_scalar_terms(&ScalarPenalty::quadratic(2.0), 3.0, 0).unwrap();
        assert_eq!((e, q), (-3.0, 0.5));
        let exp = ScalarPenalty::new(f64::exp, f64::exp, f64::exp);
        assert_eq!(reg_scalar_terms(&exp, 0.0, 0).unwrap(), (-1.0, 1.0));
        assert_eq!(
            reg_scalar_terms(&ScalarPenalty::quadratic(1.0), 0.0, 0).unwrap(),
            (0.0, 1.0)
        );
        let flat = ScalarPenalty::new(|_| 0.0, |_| 0.0, |_| 0.0);
        assert!(matches!(
            reg_scalar_terms(&flat, 1.0, 4),
            Err(Error::ZeroCurvature { index: 4 })
        ));
    }

    #[test]
    fn objective_examples() {
        let m = RnnModel::new(RnnSpec::linear(1, 1, 1)).unwrap();
        let theta = ParamVector::zeros(&m);
        let data = Dataset::single(Signal::scalar(&[0.0]), Signal::scalar(&[1.0])).unwrap();
        let loss = Loss::mse_identity(1);
        let v = eval_objective(&loss, &[], &data, &m, &theta, &[Vector::zeros(1)]).unwrap();
        assert_eq!(v, 0.5);

        let perfect = Dataset::single(Signal::scalar(&[1.0, 2.0]), Signal::scalar(&[0.0, 0.0])).unwrap();
        let v = eval_objective(&loss, &[], &perfect, &m, &theta, &[Vector::zeros(1)]).unwrap();
        assert_eq!(v, 0.0);

        let regs = [Regularizer::L2 {
            rho_theta: 2.0,
            rho_x: 0.0,
        }];
        assert_eq!(reg_theta_value(&regs, &[1.0, 1.0]), 2.0);
    }

    proptest! {
        #[test]
        fn quadratic_penalty_closed_form(rho in 1e-3f64..1e3, t in -1e3f64..1e3) {
            let (e, q) = reg_scalar_terms(&ScalarPenalty::quadratic(rho), t, 0).unwrap();
            prop_assert!((e + t).abs() <= 1e-12 * t.abs().max(1.0));
            prop_assert!((q - 1.0 / rho).abs() <= 1e-12 / rho);
        }

        #[test]
        fn mse_innovation_is_residual(y in -1e3f64..1e3, p in -1e3f64..1e3, w in 1e-3f64..1e3) {
            let loss = Loss::mse(SpdMatrix::from_diagonal(&[w])).unwrap();
            let t = loss_terms(&loss, &[y], &[p]).unwrap();
            prop_assert_eq!(t.e[0], y - p);
            prop_assert_eq!(t.q_y.as_matrix()[(0, 0)], 1.0 / w);
        }

        #[test]
        fn ce_covariance_positive(p in 0f64..=1.0, eps in 1e-6f64..1.0, y in 0u8..2) {
            let t = ce_terms(eps, &[y as f64], &[p]);
            prop_assert!(t.q_y.as_matrix()[(0, 0)] > 0.0);
        }

        #[test]
        fn ce_gradient_matches_fd(p in 0.05f64..0.95, y in 0u8..2) {
            let ce = Loss::cross_entropy(0.005).unwrap();
            let y = [y as f64];
            let g = ce.gradient(&y, &[p])[0];
            let fd = finite_diff_gradient(|v| ce.value(&y, v.as_slice()), &Vector::from_element(1, p), FD_STEP).unwrap()[0];
            prop_assert!((g - fd).abs() < 1e-6 * g.abs().max(1.0));
        }
    }
}
