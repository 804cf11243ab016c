//! The seven layer activation functions and their derivatives.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    ReLU,
    ELU,
    Softplus,
    Softsign,
    Sigmoid,
    Tanh,
}

/// Fixed id order; descriptor fields index into this table.
pub const ACTIVATIONS: [Activation; 7] = [
    Activation::Identity,
    Activation::ReLU,
    Activation::ELU,
    Activation::Softplus,
    Activation::Softsign,
    Activation::Sigmoid,
    Activation::Tanh,
];

/// eLU shape parameter.
const ELU_ALPHA: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::ReLU => x.max(0.0),
            Activation::ELU => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * (x.exp() - 1.0)
                }
            }
            // ln(1 + e^x) computed from the stable branch.
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Softsign => x / (1.0 + x.abs()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation input x.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::ELU => {
                if x > 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::ReLU => "relu",
            Activation::ELU => "elu",
            Activation::Softplus => "softplus",
            Activation::Softsign => "softsign",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ACTIVATIONS
            .iter()
            .copied()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown activation '{name}'")))
    }

    pub fn id(self) -> usize {
        ACTIVATIONS.iter().position(|&a| a == self).unwrap()
    }
}
