//! Initial-state reconstruction by a bounded particle swarm.
//!
//! This is a plain global-best particle swarm with constriction coefficients;
//! it has no pattern-search polish step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{simulate_outputs, DynamicModel, ParamVector};
use crate::numerics::{SeededRng, Signal, Vector};
use crate::objectives::{data_loss, reg_x0_value, Loss, Regularizer};

/// Default number of samples used to reconstruct an initial state.
pub const DEFAULT_N_BAR: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PswarmConfig {
    /// Swarm size; `None` means `2 n` (at least 2).
    pub population: Option<usize>,
    /// Iteration budget; `None` means `50 n`.
    pub max_iterations: Option<usize>,
    pub lower: f64,
    pub upper: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PswarmConfig {
    fn default() -> Self {
        PswarmConfig {
            population: None,
            max_iterations: None,
            lower: -3.0,
            upper: 3.0,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 0,
        }
    }
}

impl PswarmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::InvalidConfig("swarm box needs finite lower < upper".into()));
        }
        if self.population.is_some_and(|p| p < 2) {
            return Err(Error::InvalidConfig("swarm population must be at least 2".into()));
        }
        if ![self.inertia, self.cognitive, self.social]
            .iter()
            .all(|c| c.is_finite() && *c >= 0.0)
        {
            return Err(Error::InvalidConfig("swarm coefficients must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Minimizes `f` over the box `[lo, hi]` (per component). The point of the
/// box closest to the origin is always one of the initial particles.
///
/// `f` may return `+∞` for points it cannot evaluate; NaN or `-∞` is an
/// error.
pub fn pswarm_minimize<F>(f: F, lo: &[f64], hi: &[f64], cfg: &PswarmConfig) -> Result<(Vector, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if lo.len() != hi.len() {
        return Err(Error::dims("swarm bounds differ in length"));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
        return Err(Error::InvalidConfig("swarm box needs finite lower < upper".into()));
    }
    let eval = |x: &[f64]| -> Result<f64> {
        let v = f(x);
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::NonFiniteEvaluation);
        }
        Ok(v)
    };
    let n = lo.len();
    if n == 0 {
        return Ok((Vector::zeros(0), eval(&[])?));
    }
    let pop = cfg.population.unwrap_or(2 * n).max(2);
    let iters = cfg.max_iterations.unwrap_or(50 * n);
    let vmax: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect();
    let mut rng = SeededRng::new(cfg.seed);

    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(pop);
    pos.push(lo.iter().zip(hi).map(|(l, h)| 0.0f64.clamp(*l, *h)).collect());
    while pos.len() < pop {
        pos.push((0..n).map(|j| rng.uniform(lo[j], hi[j])).collect());
    }
    let mut vel: Vec<Vec<f64>> = (0..pop)
        .map(|_| (0..n).map(|j| rng.uniform(-vmax[j], vmax[j]) * 0.1).collect())
        .collect();
    let mut best_pos = pos.clone();
    let mut best_val = pos.iter().map(|p| eval(p)).collect::<Result<Vec<_>>>()?;
    let mut g = argmin(&best_val);

    for _ in 0..iters {
        for i in 0..pop {
            for j in 0..n {
                let r1 = rng.uniform(0.0, 1.0);
                let r2 = rng.uniform(0.0, 1.0);
                let v = cfg.inertia * vel[i][j]
                    + cfg.cognitive * r1 * (best_pos[i][j] - pos[i][j])
                    + cfg.social * r2 * (best_pos[g][j] - pos[i][j]);
                vel[i][j] = v.clamp(-vmax[j], vmax[j]);
                let next = pos[i][j] + vel[i][j];
                if next < lo[j] || next > hi[j] {
                    vel[i][j] = 0.0;
                }
                pos[i][j] = next.clamp(lo[j], hi[j]);
            }
            let v = eval(&pos[i])?;
            if v < best_val[i] {
                best_val[i] = v;
                best_pos[i].clone_from(&pos[i]);
                if v < best_val[g] {
                    g = i;
                }
            }
        }
    }
    Ok((Vector::from_column_slice(&best_pos[g]), best_val[g]))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Objective of the state-reconstruction problem: `r_x(x0) + (1/N̄) Σ ℓ`
/// over the given prefix. Simulation failure maps to `+∞`.
pub fn reconstruction_objective<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    inputs: &Signal,
    outputs: &Signal,
    loss: &Loss,
    regs: &[Regularizer],
    x0: &[f64],
) -> f64 {
    match simulate_outputs(model, theta, x0, inputs) {
        Ok(y_hat) => reg_x0_value(regs, x0) + data_loss(loss, outputs, &y_hat),
        Err(_) => f64::INFINITY,
    }
}

/// Estimates `x(0)` from the first `n_bar` samples of one experiment.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_x0<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    inputs: &Signal,
    outputs: &Signal,
    n_bar: usize,
    loss: &Loss,
    regs: &[Regularizer],
    cfg: &PswarmConfig,
) -> Result<Vector> {
    theta.check(model)?;
    if n_bar == 0 {
        return Err(Error::InvalidConfig("reconstruction horizon must be positive".into()));
    }
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::dims("reconstruction needs equally long, nonempty u and y"));
    }
    if inputs.width() != model.n_u() || outputs.width() != model.n_y() {
        return Err(Error::dims("reconstruction data widths do not match the model"));
    }
    let n = if n_bar > inputs.len() {
        log::warn!(
            "reconstruction horizon {n_bar} exceeds {} available samples; clamped",
            inputs.len()
        );
        inputs.len()
    } else {
        n_bar
    };
    let (u, y) = (inputs.slice(0, n), outputs.slice(0, n));
    let nx = model.n_x();
    let (x, _) = pswarm_minimize(
        |x0| reconstruction_objective(model, theta, &u, &y, loss, regs, x0),
        &vec![cfg.lower; nx],
        &vec![cfg.upper; nx],
        cfg,
    )?;
    Ok(x)
}
