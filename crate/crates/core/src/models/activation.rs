use serde::{Deserialize, Serialize};

/// Elementwise activation used between layers and as the output function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Atan,
    Sigmoid,
    Tanh,
    Identity,
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Atan => v.atan(),
            Activation::Sigmoid => logistic(v),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Atan => 1.0 / (1.0 + v * v),
            Activation::Sigmoid => {
                let s = logistic(v);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            Activation::Atan => {
                let d = 1.0 + v * v;
                -2.0 * v / (d * d)
            }
            Activation::Sigmoid => {
                let s = logistic(v);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Identity => 0.0,
        }
    }
}
