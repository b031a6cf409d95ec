use serde::{Deserialize, Serialize};

use super::network::Network;
use super::rnn::HiddenLayer;
use super::{
    Activation, DynamicModel, LocalJacobian, ParamBlock, ParamKind, ParamSlot, ParamVector,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng, Vector};

/// Single-layer LSTM. The state is `[h; c]` (`n_x = 2 n_hidden`); the output
/// network reads `[h; u]` and is built like the RNN output network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmSpec {
    pub n_u: usize,
    pub n_y: usize,
    pub n_hidden: usize,
    #[serde(default)]
    pub output_layers: Vec<HiddenLayer>,
    #[serde(default = "identity")]
    pub output_function: Activation,
    #[serde(default)]
    pub strictly_causal: bool,
}

fn identity() -> Activation {
    Activation::Identity
}

const GATES: usize = 4;
const FORGET: usize = 0;
const INPUT: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    spec: LstmSpec,
    fy: Network,
}

struct GateValues {
    z: Vec<f64>,
    pre: [Vec<f64>; GATES],
}

fn sigmoid(v: f64) -> f64 {
    Activation::Sigmoid.eval(v)
}

impl LstmModel {
    pub fn new(spec: LstmSpec) -> Result<Self> {
        if spec.n_hidden == 0 || spec.n_y == 0 {
            return Err(Error::InvalidConfig(
                "LSTM needs positive hidden size and output count".into(),
            ));
        }
        let too_wide = [spec.n_hidden, spec.n_u, spec.n_y]
            .into_iter()
            .chain(spec.output_layers.iter().map(|l| l.width))
            .any(|w| w > super::MAX_WIDTH);
        if too_wide || spec.output_layers.len() > super::MAX_DEPTH {
            return Err(Error::InvalidConfig("model dimensions too large".into()));
        }
        if spec.output_layers.iter().any(|l| l.width == 0) {
            return Err(Error::InvalidConfig("hidden layer width must be positive".into()));
        }
        let hidden: Vec<_> = spec
            .output_layers
            .iter()
            .map(|l| (l.width, l.activation))
            .collect();
        let masked = if spec.strictly_causal { spec.n_u } else { 0 };
        let fy = Network::new(
            spec.n_hidden + spec.n_u,
            &hidden,
            spec.n_y,
            spec.output_function,
            masked,
        );
        Ok(LstmModel { spec, fy })
    }

    pub fn spec(&self) -> &LstmSpec {
        &self.spec
    }

    fn nz(&self) -> usize {
        self.spec.n_hidden + self.spec.n_u
    }

    fn gate_offset(&self, gate: usize) -> usize {
        gate * self.spec.n_hidden * (self.nz() + 1)
    }

    fn weight(&self, gate: usize, r: usize, c: usize) -> usize {
        self.gate_offset(gate) + r * self.nz() + c
    }

    fn bias(&self, gate: usize, r: usize) -> usize {
        self.gate_offset(gate) + self.spec.n_hidden * self.nz() + r
    }

    fn gates(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> GateValues {
        let nh = self.spec.n_hidden;
        let mut z = Vec::with_capacity(self.nz());
        z.extend_from_slice(&x[..nh]);
        z.extend_from_slice(u);
        let pre = std::array::from_fn(|g| {
            (0..nh)
                .map(|r| {
                    let w = &theta_x[self.weight(g, r, 0)..][..self.nz()];
                    theta_x[self.bias(g, r)] + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        });
        GateValues { z, pre }
    }

    fn out_input(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.spec.n_hidden + u.len());
        z.extend_from_slice(&x[..self.spec.n_hidden]);
        z.extend_from_slice(u);
        z
    }
}

impl DynamicModel for LstmModel {
    fn n_x(&self) -> usize {
        2 * self.spec.n_hidden
    }
    fn n_u(&self) -> usize {
        self.spec.n_u
    }
    fn n_y(&self) -> usize {
        self.spec.n_y
    }
    fn n_theta_x(&self) -> usize {
        GATES * self.spec.n_hidden * (self.nz() + 1)
    }
    fn n_theta_y(&self) -> usize {
        self.fy.n_params
    }

    fn state_update(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> Vector {
        let nh = self.spec.n_hidden;
        let gv = self.gates(x, u, theta_x);
        let mut out = Vector::zeros(2 * nh);
        for r in 0..nh {
            let c_next = sigmoid(gv.pre[FORGET][r]) * x[nh + r]
                + sigmoid(gv.pre[INPUT][r]) * gv.pre[CANDIDATE][r].tanh();
            out[nh + r] = c_next;
            out[r] = sigmoid(gv.pre[OUTPUT][r]) * c_next.tanh();
        }
        out
    }

    fn output(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> Vector {
        self.fy.eval(theta_y, &self.out_input(x, u))
    }

    fn state_jacobian(&self, x: &[f64], u: &[f64], theta_x: &[f64]) -> LocalJacobian {
        let nh = self.spec.n_hidden;
        let nz = self.nz();
        let gv = self.gates(x, u, theta_x);
        let mut value = Vector::zeros(2 * nh);
        // Columns over [h; c; u].
        let mut d_in = Matrix::zeros(2 * nh, 2 * nh + self.spec.n_u);
        let mut d_theta = Matrix::zeros(2 * nh, self.n_theta_x());
        for r in 0..nh {
            let f = sigmoid(gv.pre[FORGET][r]);
            let i = sigmoid(gv.pre[INPUT][r]);
            let g = gv.pre[CANDIDATE][r].tanh();
            let o = sigmoid(gv.pre[OUTPUT][r]);
            let c = x[nh + r];
            let c_next = f * c + i * g;
            let t = c_next.tanh();
            value[nh + r] = c_next;
            value[r] = o * t;

            // Sensitivities of c⁺_r and h⁺_r to the gate pre-activations.
            let mut dc = [0.0; GATES];
            dc[FORGET] = f * (1.0 - f) * c;
            dc[INPUT] = i * (1.0 - i) * g;
            dc[CANDIDATE] = i * (1.0 - g * g);
            let dh_dc = o * (1.0 - t * t);
            let mut dh = dc.map(|v| dh_dc * v);
            dh[OUTPUT] = o * (1.0 - o) * t;

            for (row, sens) in [(nh + r, dc), (r, dh)] {
                for gate in 0..GATES {
                    let s = sens[gate];
                    if s == 0.0 {
                        continue;
                    }
                    for col in 0..nz {
                        let w = theta_x[self.weight(gate, r, col)];
                        let in_col = if col < nh { col } else { nh + col };
                        d_in[(row, in_col)] += s * w;
                        d_theta[(row, self.weight(gate, r, col))] += s * gv.z[col];
                    }
                    d_theta[(row, self.bias(gate, r))] += s;
                }
            }
            d_in[(nh + r, nh + r)] += f;
            d_in[(r, nh + r)] += dh_dc * f;
        }
        LocalJacobian {
            value,
            d_x: d_in.columns(0, 2 * nh).into_owned(),
            d_u: d_in.columns(2 * nh, self.spec.n_u).into_owned(),
            d_theta,
        }
    }

    fn output_jacobian(&self, x: &[f64], u: &[f64], theta_y: &[f64]) -> LocalJacobian {
        let nh = self.spec.n_hidden;
        let trace = self.fy.forward(theta_y, &self.out_input(x, u));
        let eye = Matrix::identity(self.spec.n_y, self.spec.n_y);
        let (g_in, g_theta) = self.fy.backward(theta_y, &trace, &eye);
        let mut d_x = Matrix::zeros(self.spec.n_y, 2 * nh);
        d_x.columns_mut(0, nh).copy_from(&g_in.columns(0, nh));
        LocalJacobian {
            value: trace.output().clone(),
            d_x,
            d_u: g_in.columns(nh, self.spec.n_u).into_owned(),
            d_theta: g_theta,
        }
    }

    fn init_params(&self, rng: &mut SeededRng, scale: f64) -> ParamVector {
        use rand::Rng;
        let mut p = ParamVector::zeros(self);
        let nh = self.spec.n_hidden;
        let bound = scale * (6.0 / (self.nz() + nh) as f64).sqrt();
        let nx = self.n_theta_x();
        for gate in 0..GATES {
            for r in 0..nh {
                for c in 0..self.nz() {
                    let u: f64 = rng.random();
                    p.as_mut_slice()[self.weight(gate, r, c)] = bound * (2.0 * u - 1.0);
                }
            }
        }
        self.fy.init(rng, scale, &mut p.as_mut_slice()[nx..]);
        p
    }

    fn param_layout(&self) -> Vec<ParamSlot> {
        let mut out = Vec::with_capacity(self.n_theta());
        let nh = self.spec.n_hidden;
        for gate in 0..GATES {
            for row in 0..nh {
                for col in 0..self.nz() {
                    out.push(ParamSlot {
                        block: ParamBlock::State,
                        layer: gate,
                        kind: ParamKind::Weight { row, col },
                    });
                }
            }
            for row in 0..nh {
                out.push(ParamSlot {
                    block: ParamBlock::State,
                    layer: gate,
                    kind: ParamKind::Bias { row },
                });
            }
        }
        for (li, l) in self.fy.layers.iter().enumerate() {
            for row in 0..l.rows {
                for col in 0..l.free_cols {
                    out.push(ParamSlot {
                        block: ParamBlock::Output,
                        layer: li,
                        kind: ParamKind::Weight { row, col },
                    });
                }
            }
            for row in 0..l.rows {
                out.push(ParamSlot {
                    block: ParamBlock::Output,
                    layer: li,
                    kind: ParamKind::Bias { row },
                });
            }
        }
        out
    }

    fn output_bias_indices(&self) -> Vec<usize> {
        let last = self.fy.layers.last().unwrap();
        (0..last.rows)
            .map(|r| self.n_theta_x() + last.bias_index(r))
            .collect()
    }
}
