//! Layered feedforward map `v_i = A_i f_{i-1}(v_{i-1}) + b_i` with
//! reverse-mode derivatives. Parameters live in a flat slice: for each layer
//! the weight matrix row-major, then the bias.

use rand::Rng;

use super::Activation;
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Leading input columns that carry parameters; the trailing
    /// `cols - free_cols` columns are structurally zero.
    pub free_cols: usize,
    pub offset: usize,
    /// Applied to this layer's affine output.
    pub activation: Activation,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.rows * (self.free_cols + 1)
    }

    #[inline]
    pub fn weight_index(&self, r: usize, c: usize) -> Option<usize> {
        (c < self.free_cols).then(|| self.offset + r * self.free_cols + c)
    }

    #[inline]
    pub fn bias_index(&self, r: usize) -> usize {
        self.offset + self.rows * self.free_cols + r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub layers: Vec<Layer>,
    pub n_in: usize,
    pub n_out: usize,
    pub n_params: usize,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the network output.
    pub acts: Vec<Vector>,
    pub pre: Vec<Vector>,
}

impl Trace {
    pub fn output(&self) -> &Vector {
        self.acts.last().expect("trace has at least the input")
    }
}

impl Network {
    /// `hidden` lists `(width, activation)` of the hidden layers. The first
    /// layer drops its last `masked_tail` input columns from the parameter
    /// vector.
    pub fn new(
        n_in: usize,
        hidden: &[(usize, Activation)],
        n_out: usize,
        output_activation: Activation,
        masked_tail: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut offset = 0;
        let mut cols = n_in;
        let widths = hidden
            .iter()
            .copied()
            .chain(std::iter::once((n_out, output_activation)));
        for (i, (rows, activation)) in widths.enumerate() {
            let free_cols = if i == 0 {
                cols.saturating_sub(masked_tail)
            } else {
                cols
            };
            let layer = Layer {
                rows,
                cols,
                free_cols,
                offset,
                activation,
            };
            offset += layer.n_params();
            cols = rows;
            layers.push(layer);
        }
        Network {
            layers,
            n_in,
            n_out,
            n_params: offset,
        }
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> Trace {
        debug_assert_eq!(theta.len(), self.n_params);
        debug_assert_eq!(input.len(), self.n_in);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(Vector::from_column_slice(input));
        for layer in &self.layers {
            let a = acts.last().unwrap();
            let v = Vector::from_fn(layer.rows, |r, _| {
                let w = &theta[layer.offset + r * layer.free_cols..][..layer.free_cols];
                let mut s = theta[layer.bias_index(r)];
                for (wc, ac) in w.iter().zip(a.iter()) {
                    s += wc * ac;
                }
                s
            });
            let out = v.map(|t| layer.activation.eval(t));
            pre.push(v);
            acts.push(out);
        }
        Trace { acts, pre }
    }

    pub fn eval(&self, theta: &[f64], input: &[f64]) -> Vector {
        self.forward(theta, input).acts.pop().unwrap()
    }

    /// Pulls the cotangent rows `g_out` (m x n_out, on the network output)
    /// back to the input (m x n_in) and the parameters (m x n_params).
    pub fn backward(&self, theta: &[f64], trace: &Trace, g_out: &Matrix) -> (Matrix, Matrix) {
        let m = g_out.nrows();
        let mut g_theta = Matrix::zeros(m, self.n_params);
        let mut g = g_out.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let v = &trace.pre[li];
            let a_in = &trace.acts[li];
            for r in 0..layer.rows {
                let d = layer.activation.derivative(v[r]);
                for i in 0..m {
                    g[(i, r)] *= d;
                }
            }
            for r in 0..layer.rows {
                for i in 0..m {
                    let gv = g[(i, r)];
                    if gv == 0.0 {
                        continue;
                    }
                    let base = layer.offset + r * layer.free_cols;
                    for c in 0..layer.free_cols {
                        g_theta[(i, base + c)] += gv * a_in[c];
                    }
                    g_theta[(i, layer.bias_index(r))] += gv;
                }
            }
            let mut g_in = Matrix::zeros(m, layer.cols);
            for r in 0..layer.rows {
                let w = &theta[layer.offset + r * layer.free_cols..][..layer.free_cols];
                for i in 0..m {
                    let gv = g[(i, r)];
                    if gv == 0.0 {
                        continue;
                    }
                    for (c, wc) in w.iter().enumerate() {
                        g_in[(i, c)] += gv * wc;
                    }
                }
            }
            g = g_in;
        }
        (g, g_theta)
    }

    /// Vector-Jacobian product accumulated into `g_in` and `g_theta`.
    pub fn vjp(
        &self,
        theta: &[f64],
        trace: &Trace,
        cot: &[f64],
        g_in: &mut [f64],
        g_theta: &mut [f64],
    ) {
        let mut g: Vec<f64> = cot.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let v = &trace.pre[li];
            let a_in = &trace.acts[li];
            for r in 0..layer.rows {
                g[r] *= layer.activation.derivative(v[r]);
            }
            let mut next = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let gv = g[r];
                if gv == 0.0 {
                    continue;
                }
                let base = layer.offset + r * layer.free_cols;
                for c in 0..layer.free_cols {
                    g_theta[base + c] += gv * a_in[c];
                    next[c] += gv * theta[base + c];
                }
                g_theta[layer.bias_index(r)] += gv;
            }
            g = next;
        }
        for (gi, v) in g_in.iter_mut().zip(g) {
            *gi += v;
        }
    }

    /// Xavier-uniform weights scaled by `scale`, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64, out: &mut [f64]) {
        for layer in &self.layers {
            let bound = scale * (6.0 / (layer.cols + layer.rows) as f64).sqrt();
            for r in 0..layer.rows {
                for c in 0..layer.free_cols {
                    let u: f64 = rng.random();
                    out[layer.offset + r * layer.free_cols + c] = bound * (2.0 * u - 1.0);
                }
                out[layer.bias_index(r)] = 0.0;
            }
        }
    }

    /// Dense `(A_i, b_i)` per layer, masked columns filled with zeros.
    pub fn unflatten(&self, theta: &[f64]) -> Vec<(Matrix, Vector)> {
        self.layers
            .iter()
            .map(|l| {
                let a = Matrix::from_fn(l.rows, l.cols, |r, c| {
                    l.weight_index(r, c).map_or(0.0, |i| theta[i])
                });
                let b = Vector::from_fn(l.rows, |r, _| theta[l.bias_index(r)]);
                (a, b)
            })
            .collect()
    }

    pub fn flatten_into(&self, layers: &[(Matrix, Vector)], out: &mut [f64]) {
        for (l, (a, b)) in self.layers.iter().zip(layers) {
            for r in 0..l.rows {
                for c in 0..l.free_cols {
                    out[l.weight_index(r, c).unwrap()] = a[(r, c)];
                }
                out[l.bias_index(r)] = b[r];
            }
        }
    }
}
