//! Fully connected network with a softmax output, trained by mini-batch
//! gradient descent on cross-entropy.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, ModelError};

pub const MAX_LAYERS: usize = 3;
pub const MAX_LAYER_SIZE: usize = 300;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 60;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    None,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::None => v,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::None => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "none" | "linear" | "identity" => Ok(Activation::None),
            _ => Err(format!("unknown activation `{s}` (expected relu, tanh, sigmoid or none)")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpParams {
    pub fn new(hidden: Vec<usize>, activation: Activation, seed: u64) -> Self {
        MlpParams {
            hidden,
            activation,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.hidden.is_empty() || self.hidden.len() > MAX_LAYERS {
            return Err(ModelError::BadParam(format!(
                "need 1..={MAX_LAYERS} hidden layers, got {}",
                self.hidden.len()
            )));
        }
        if let Some(s) = self.hidden.iter().find(|&&s| s == 0 || s > MAX_LAYER_SIZE) {
            return Err(ModelError::BadParam(format!("layer size {s} outside 1..={MAX_LAYER_SIZE}")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::BadParam(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadParam("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `out = input · weights + bias`; weights are `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    pub n_features: usize,
    pub n_classes: usize,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
    /// Mean training cross-entropy after each epoch.
    pub loss_curve: Vec<f64>,
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_features: usize, n_classes: usize, params: MlpParams) -> Result<Self, ModelError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut sizes = vec![n_features];
        sizes.extend(&params.hidden);
        sizes.push(n_classes);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || dist.sample(&mut rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(MlpModel {
            params,
            n_features,
            n_classes,
            layers,
            loss_curve: Vec::new(),
        })
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { outs[i - 1].view() };
            let mut z = input.dot(&l.weights) + &l.bias;
            if i < last {
                let act = self.params.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            outs.push(z);
        }
        outs
    }

    /// Class probabilities for each row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.forward_all(x).pop().expect("at least one layer");
        softmax_rows(&mut z);
        z
    }

    /// Mean cross-entropy of `(x, y)` and its gradient per layer.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: &[usize]) -> (f64, Vec<Layer>) {
        let outs = self.forward_all(x);
        let b = x.nrows() as f64;
        let logits = outs.last().expect("at least one layer");
        let mut loss = 0.0;
        let mut delta = logits.clone();
        for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y[i]];
            row.mapv_inplace(|v| (v - lse).exp());
            row[y[i]] -= 1.0;
        }
        delta /= b;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { outs[l - 1].view() };
            grads.push(Layer {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let act = self.params.activation;
                let mut back = delta.dot(&self.layers[l].weights.t());
                back.zip_mut_with(&outs[l - 1], |d, &a| *d *= act.derivative(a));
                delta = back;
            }
        }
        grads.reverse();
        (loss / b, grads)
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let logits = self.forward_all(x).pop().expect("at least one layer");
        let mut loss = 0.0;
        for (row, &c) in logits.rows().into_iter().zip(y) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            loss += m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[c];
        }
        loss / y.len() as f64
    }
}

pub fn mlp_fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, params: &MlpParams) -> Result<MlpModel, ModelError> {
    check_training(x, y, n_classes)?;
    let mut model = MlpModel::init(x.ncols(), n_classes, params.clone())?;
    // Shuffling draws from a stream separate from initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let lr = params.learning_rate;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grads) = model.loss_and_gradient(bx.view(), &by);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss, lr });
            }
            for (l, g) in model.layers.iter_mut().zip(grads) {
                l.weights.scaled_add(-lr, &g.weights);
                l.bias.scaled_add(-lr, &g.bias);
            }
        }
        let loss = model.loss(x, y);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { epoch, loss, lr });
        }
        log::debug!("epoch {epoch}: loss {loss:.6}");
        model.loss_curve.push(loss);
    }
    Ok(model)
}
