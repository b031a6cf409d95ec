use serde::{Deserialize, Serialize};

use super::network::Network;
use super::{
    Activation, DynamicModel, LocalJacobian, ParamBlock, ParamKind, ParamSlot, ParamVector,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

impl HiddenLayer {
    pub fn new(width: usize, activation: Activation) -> Self {
        HiddenLayer { width, activation }
    }
}

/// Architecture of a layered RNN.
///
/// Both networks read `[x; u]`. The state network ends with an affine layer of
/// width `n_x`; the output network ends with an affine layer of width `n_y`
/// followed by `output_function`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    #[serde(default)]
    pub state_layers: Vec<HiddenLayer>,
    #[serde(default)]
    pub output_layers: Vec<HiddenLayer>,
    #[serde(default = "identity")]
    pub output_function: Activation,
    /// Drops the input columns of the first output layer from θ.
    #[serde(default)]
    pub strictly_causal: bool,
}

fn identity() -> Activation {
    Activation::Identity
}

impl RnnSpec {
    /// Affine state-space model (`L_x = L_y = 1`).
    pub fn linear(n_x: usize, n_u: usize, n_y: usize) -> Self {
        RnnSpec {
            n_x,
            n_u,
            n_y,
            state_layers: Vec::new(),
            output_layers: Vec::new(),
            output_function: Activation::Identity,
            strictly_causal: false,
        }
    }

    /// One hidden layer in each network with a shared activation.
    pub fn shallow(n_x: usize, n_u: usize, n_y: usize, width: usize, act: Activation) -> Self {
        RnnSpec {
            state_layers: vec![HiddenLayer::new(width, act)],
            output_layers: vec![HiddenLayer::new(width, act)],
            ..RnnSpec::linear(n_x, n_u, n_y)
        }
    }

    pub fn with_output_function(mut self, f: Activation) -> Self {
        self.output_function = f;
        self
    }

    pub fn strictly_causal(mut self, on: bool) -> Self {
        self.strictly_causal = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_y == 0 {
            return Err(Error::InvalidConfig("model needs at least one output".into()));
        }
        if self
            .state_layers
            .iter()
            .chain(&self.output_layers)
            .any(|l| l.width == 0)
        {
            return Err(Error::InvalidConfig("hidden layer width must be positive".into()));
        }
        let widths = [self.n_x, self.n_u, self.n_y]
            .into_iter()
            .chain(self.state_layers.iter().chain(&self.output_layers).map(|l| l.width));
        let depth = self.state_layers.len() + self.output_layers.len();
        if widths.into_iter().any(|w| w > super::MAX_WIDTH) || depth > super::MAX_DEPTH {
            return Err(Error::InvalidConfig("model dimensions too large".into()));
        }
        Ok(())
    }
}

/// Dense weights of an [`RnnModel`], one `(A_i, b_i)` pair per layer.
/// Structurally zero entries appear as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnWeights {
    pub state: Vec<(Matrix, Vector)>,
    pub output: Vec<(Matrix, Vector)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    spec: RnnSpec,
    fx: Network,
    fy: Network,
}

fn hidden(layers: &[HiddenLayer]) -> Vec<(usize, Activation)> {
    layers.iter().map(|l| (l.width, l.activation)).collect()
}

impl RnnModel {
    pub fn new(spec: RnnSpec) -> Result<Self> {
        spec.validate()?;
        let n_in = spec.n_x + spec.n_u;
        let fx = Network::new(
            n_in,
            &hidden(&spec.state_layers),
            spec.n_x,
            Activation::Identity,
            0,
        );
        let masked = if spec.strictly_causal { spec.n_u } else { 0 };
        let fy = Network::new(
            n_in,
            &hidden(&spec.output_layers),
            spec.n_y,
            spec.output_function,
            masked,
        );
        Ok(RnnModel { spec, fx, fy })
    }

    pub fn spec(&self) -> &RnnSpec {
        &self.spec
    }

    pub fn unflatten(&self, theta: &ParamVector) -> Result<RnnWeights> {
        theta.check(self)?;
        Ok(RnnWeights {
            state: self.fx.unflatten(theta.theta_x()),
            output: self.fy.unflatten(theta.theta_y()),
        })
    }

    /// Inverse of [`RnnModel::unflatten`]; entries masked by strict causality
    /// are ignored.
    pub fn flatten(&self, w: &RnnWeights) -> Result<ParamVector> {
        let shapes_ok = |net: &Network, layers: &[(Matrix, Vector)]| {
            layers.len() == net.layers.len()
                && net.layers.iter().zip(layers).all(|(l, (a, b))| {
                    a.shape() == (l.rows, l.cols) && b.len() == l.rows
                })
        };
        if !shapes_ok(&self.fx, &w.state) || !shapes_ok(&self.fy, &w.output) {
            return Err(Error::dims("weight shapes do not match the model"));
        }
        let mut p = ParamVector::zeros(self);
        let nx = self.fx.n_params;
        self.fx.flatten_into(&w.state, &mut p.as_mut_slice()[..nx]);
        self.fy.flatten_into(&w.output, &mut p.as_mut_slice()[nx..]);
        Ok(p)
    }

    fn input(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(x.len() + u.len());
        z.extend_from_slice(x);
        z.extend_from_slice(u);
        z
    }

    fn local_jacobian(&self, net: &Network, x: &[f64], u: &[f64], theta: &[f64]) -> LocalJacobian {
        let trace = net.forward(theta, &self.input(x, u));
        let eye = Matrix::identity(net.n_out, net.n_out);
        let (g_in, g_theta) = net.backward(theta, &trace, &eye);
        let n_x = self.spec.n_x;
        LocalJacobian {
            value: trace.output().clone(),
            d_x: g_in.columns(0, n_x).into_owned(),
            d_u: g_in.columns(n_x, self.spec.n_u).into_owned(),
            d_theta: g_theta,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn vjp(
        &self,
        net: &Network,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
        cot: &[f64],
        g_x: &mut [f64],
        g_u: &mut [f64],
        g_theta: &mut [f64],
    ) -> Vector {
        let trace = net.forward(theta, &self.input(x, u));
        let mut g_in = vec![0.0; x.len() + u.len()];
        net.vjp(theta, &trace, cot, &mut g_in, g_theta);
        let (gx, gu) = g_in.split_at(x.len());
        for (a, b) in g_x.iter_mut().zip(gx) {
            *a += b;
        }
        for (a, b) in g_u.iter_mut().zip(gu) {
            *a += b;
        }
        trace.acts.into_iter().last().unwrap()
    }
}

fn layout_of(net: &Network, block: ParamBlock, out: &mut Vec<ParamSlot>) {
    for (li, l) in net.layers.iter().enumerate() {
        for row in 0..l.rows {
            for col in 0..l.free_cols {
                out.push(ParamSlot {
                    block,
                    layer: li,
                    kind: ParamKind::Weight { row, col },
                });
            }
        }
        for row in 0..l.rows {
            out.push(ParamSlot {
                block,
                layer: li,
                kind: ParamKind::Bias { row },
            });
        }
    }
}

impl DynamicModel for RnnModel {
    fn n_x(&self) -> usize {
        self.spec.n_x
    }
    fn n_u(&self) -> usize {
        self.spec.n_u
    }
    fn n_y(&self) -> usize {
        self.spec.n_y
    }
    fn n_theta_x(&self) -> usize {
        self.fx.n_params
    }
    fn n_theta_y(&self) -> usize {
        self.fy.n_params
    }

    fn state_update(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> Vector {
        self.fx.eval(theta_x, &self.input(x, u))
    }

    fn output(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> Vector {
        self.fy.eval(theta_y, &self.input(x, u))
    }

    fn state_jacobian(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> LocalJacobian {
        self.local_jacobian(&self.fx, x, u, theta_x)
    }

    fn output_jacobian(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> LocalJacobian {
        self.local_jacobian(&self.fy, x, u, theta_y)
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
        self.vjp(&self.fx, x, u, theta_x, cot, g_x, g_u, g_theta)
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
        self.vjp(&self.fy, x, u, theta_y, cot, g_x, g_u, g_theta)
    }

    fn init_params(&self, rng: &mut SeededRng, scale: f64) -> ParamVector {
        let mut p = ParamVector::zeros(self);
        let nx = self.fx.n_params;
        let (a, b) = p.as_mut_slice().split_at_mut(nx);
        self.fx.init(rng, scale, a);
        self.fy.init(rng, scale, b);
        p
    }

    fn param_layout(&self) -> Vec<ParamSlot> {
        let mut out = Vec::with_capacity(self.n_theta());
        layout_of(&self.fx, ParamBlock::State, &mut out);
        layout_of(&self.fy, ParamBlock::Output, &mut out);
        out
    }

    fn output_bias_indices(&self) -> Vec<usize> {
        let last = self.fy.layers.last().unwrap();
        (0..last.rows)
            .map(|r| self.fx.n_params + last.bias_index(r))
            .collect()
    }
}
