//! Dense feed-forward network materialized from a descriptor.
//!
//! Hidden layers apply: affine, then batch normalization when flagged (so
//! normalization sees pre-activation values), then the activation, then
//! dropout when flagged (training mode only). A single sigmoid output unit
//! sits on top and is not a hidden neuron: activation tracing and the
//! neuron count N cover hidden layers only.
//!
//! Inference mode (used by [`Network::forward`] and [`Network::predict_proba`])
//! runs batch norm on running statistics and never applies dropout, so
//! repeated calls on the same batch are bitwise identical.

use crate::activation::{sigmoid, Activation};
use crate::descriptor::{NetworkDescriptor, SearchConstraints};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::rng::{derive_seed, stream};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNormState {
    fn identity(width: usize) -> Self {
        BatchNormState {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// fan_in x width.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNormState>,
    /// Dropout rate in [0, 1); None when the layer has no dropout.
    pub dropout: Option<f64>,
}

impl DenseLayer {
    pub fn width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub input_dim: usize,
    pub hidden: Vec<DenseLayer>,
    /// Output head: one sigmoid unit. Length equals the last hidden width.
    pub head_weights: Array1<f64>,
    pub head_bias: f64,
}

/// Post-activation outputs of every hidden neuron for every instance of a
/// batch, in inference mode. Column c is the flat neuron index; layers are
/// laid out consecutively.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// instances x N.
    pub values: Array2<f64>,
    pub layer_widths: Vec<usize>,
}

impl ActivationTrace {
    pub fn n_instances(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.values.ncols()
    }

    /// (start, width) of each layer's slice of the flat neuron axis.
    pub fn layer_slices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layer_widths.len());
        let mut start = 0;
        for &w in &self.layer_widths {
            out.push((start, w));
            start += w;
        }
        out
    }

    /// Maps a flat neuron index to (layer, position within layer).
    pub fn neuron_position(&self, flat: usize) -> (usize, usize) {
        let mut rest = flat;
        for (layer, &w) in self.layer_widths.iter().enumerate() {
            if rest < w {
                return (layer, rest);
            }
            rest -= w;
        }
        panic!("flat neuron index {flat} out of range");
    }
}

/// Builds a network from a descriptor, validated against the default search
/// bounds. Deterministic per (descriptor, input_dim, seed).
pub fn build_network(
    descriptor: &NetworkDescriptor,
    input_dim: usize,
    seed: u64,
) -> Result<Network> {
    build_network_with(descriptor, input_dim, seed, &SearchConstraints::default())
}

impl Default for SearchConstraints {
    fn default() -> Self {
        SearchConstraints::new(8, 8)
    }
}

/// [`build_network`] under explicit search bounds.
///
/// Weight draw order is fixed: layers in order, each layer's weight matrix
/// row-major then its biases; the head last. Biases start at zero; batch
/// norm starts as the identity transform (gamma 1, beta 0); the head uses
/// the xavier initializer (it has no descriptor entry).
pub fn build_network_with(
    descriptor: &NetworkDescriptor,
    input_dim: usize,
    seed: u64,
    constraints: &SearchConstraints,
) -> Result<Network> {
    descriptor.check(constraints)?;
    if input_dim == 0 {
        return Err(Error::InvalidDescriptor("input_dim must be >= 1".into()));
    }
    let mut rng = stream(derive_seed(seed, &[0x6275_696c_64])); // "build"
    let mut hidden = Vec::with_capacity(descriptor.depth());
    let mut fan_in = input_dim;
    for j in 0..descriptor.depth() {
        let width = descriptor.hidden_widths[j];
        let init = descriptor.initializers[j];
        hidden.push(DenseLayer {
            weights: draw_matrix(fan_in, width, init, &mut rng),
            biases: Array1::zeros(width),
            activation: descriptor.activations[j],
            batch_norm: descriptor.batchnorm_flags[j].then(|| BatchNormState::identity(width)),
            dropout: descriptor.dropout_flags[j].then_some(DROPOUT_RATE),
        });
        fan_in = width;
    }
    let head_weights = draw_matrix(fan_in, 1, Initializer::Xavier, &mut rng)
        .column(0)
        .to_owned();
    Ok(Network {
        input_dim,
        hidden,
        head_weights,
        head_bias: 0.0,
    })
}

fn draw_matrix(
    fan_in: usize,
    width: usize,
    init: Initializer,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let mut v = Vec::with_capacity(fan_in * width);
    for _ in 0..fan_in * width {
        v.push(init.sample(fan_in, width, rng));
    }
    Array2::from_shape_vec((fan_in, width), v).expect("shape matches draw count")
}

impl Network {
    /// Total hidden-neuron count N.
    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden.iter().map(|l| l.width()).sum()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.width()).collect()
    }

    fn check_batch(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} feature columns, network expects {}",
                batch.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: head probabilities, plus the hidden
    /// activation trace when requested.
    pub fn forward(
        &self,
        batch: &Array2<f64>,
        trace: bool,
    ) -> Result<(Array1<f64>, Option<ActivationTrace>)> {
        self.check_batch(batch)?;
        let rows = batch.nrows();
        let mut traced: Option<Array2<f64>> = if trace {
            Some(Array2::zeros((rows, self.hidden_neuron_count())))
        } else {
            None
        };
        let mut offset = 0;
        let mut x = batch.to_owned();
        for layer in &self.hidden {
            let mut z = x.dot(&layer.weights) + &layer.biases;
            if let Some(bn) = &layer.batch_norm {
                let std = bn.running_var.mapv(|v| (v + BN_EPS).sqrt());
                z = (&z - &bn.running_mean) / &std * &bn.gamma + &bn.beta;
            }
            let a = z.mapv(|v| layer.activation.apply(v));
            if let Some(t) = traced.as_mut() {
                t.slice_mut(ndarray::s![.., offset..offset + layer.width()])
                    .assign(&a);
                offset += layer.width();
            }
            x = a;
        }
        let logits = x.dot(&self.head_weights) + self.head_bias;
        let probs = logits.mapv(sigmoid);
        let trace_out = traced.map(|values| ActivationTrace {
            values,
            layer_widths: self.hidden_widths(),
        });
        Ok((probs, trace_out))
    }

    /// Head probabilities in inference mode; identical to
    /// [`Network::forward`] with tracing off.
    pub fn predict_proba(&self, batch: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(batch, false)?.0)
    }

    /// True when every parameter and running statistic is finite.
    pub fn is_finite(&self) -> bool {
        let arrays_finite = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        let vec_finite = |a: &Array1<f64>| a.iter().all(|v| v.is_finite());
        self.hidden.iter().all(|l| {
            arrays_finite(&l.weights)
                && vec_finite(&l.biases)
                && l.batch_norm.as_ref().is_none_or(|bn| {
                    vec_finite(&bn.gamma)
                        && vec_finite(&bn.beta)
                        && vec_finite(&bn.running_mean)
                        && vec_finite(&bn.running_var)
                })
        }) && vec_finite(&self.head_weights)
            && self.head_bias.is_finite()
    }

    /// Trainable parameters flattened in a fixed order: per hidden layer,
    /// weights row-major, biases, then (gamma, beta) when batch norm is
    /// present; finally head weights and head bias. Running statistics are
    /// not trainable and are excluded.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
            if let Some(bn) = &l.batch_norm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out.extend(self.head_weights.iter());
        out.push(self.head_bias);
        out
    }

    /// Inverse of [`Network::flat_params`].
    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("parameter vector too short");
        for l in &mut self.hidden {
            for w in l.weights.iter_mut() {
                *w = next();
            }
            for b in l.biases.iter_mut() {
                *b = next();
            }
            if let Some(bn) = &mut l.batch_norm {
                for g in bn.gamma.iter_mut() {
                    *g = next();
                }
                for b in bn.beta.iter_mut() {
                    *b = next();
                }
            }
        }
        for w in self.head_weights.iter_mut() {
            *w = next();
        }
        self.head_bias = next();
        assert!(it.next().is_none(), "parameter vector too long");
    }

    /// Mean and biased variance per column, used by training-mode batch norm.
    pub(crate) fn batch_stats(z: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let b = z.nrows() as f64;
        let mean = z.sum_axis(Axis(0)) / b;
        let var = z
            .map_axis(Axis(0), |col| {
                let m = col.sum() / b;
                col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b
            });
        (mean, var)
    }
}
