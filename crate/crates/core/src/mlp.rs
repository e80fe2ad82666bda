//! Small dense feed-forward network with manual backpropagation.
//!
//! Three weight layers (input → hidden → hidden → scalar output), hidden
//! activations ReLU or ELU, linear output. Used both as a generative
//! mechanism (fixed random weights) and as a learnable regressor (full-batch
//! gradient descent on squared error).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floats;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input length {got} does not match network input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("non-finite loss {loss} at epoch {epoch} (lr {lr}); aborting training")]
    NonFiniteLoss { loss: f64, epoch: usize, lr: f64 },
    #[error("training requires at least one row")]
    EmptyBatch,
}

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative as a function of the pre-activation z.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }
}

/// One dense layer, weights stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(with = "floats::vec_f64_dec")]
    pub weights: Vec<f64>,
    #[serde(with = "floats::vec_f64_dec")]
    pub biases: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward perceptron with a scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

/// Training schedule for [`Mlp::train`].
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Consecutive epochs without improvement before the rate is halved.
    pub plateau_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-2,
            plateau_patience: 100,
        }
    }
}

impl Mlp {
    /// Builds the three-layer shape `in_dim → hidden → hidden → 1` with all
    /// weights and biases drawn from `U[w_lo, w_hi]` / `U[b_lo, b_hi]`.
    pub fn random_uniform<R: Rng>(
        in_dim: usize,
        hidden: usize,
        activation: Activation,
        (w_lo, w_hi): (f64, f64),
        (b_lo, b_hi): (f64, f64),
        rng: &mut R,
    ) -> Self {
        let dims = [in_dim, hidden, hidden, 1];
        let layers = dims
            .windows(2)
            .map(|d| Dense {
                in_dim: d[0],
                out_dim: d[1],
                weights: (0..d[0] * d[1])
                    .map(|_| rng.gen_range(w_lo..w_hi))
                    .collect(),
                biases: (0..d[1])
                    .map(|_| {
                        if b_lo == b_hi {
                            b_lo
                        } else {
                            rng.gen_range(b_lo..b_hi)
                        }
                    })
                    .collect(),
            })
            .collect();
        Self { activation, layers }
    }

    /// Xavier-uniform initialisation for trainable networks; biases zero.
    pub fn xavier<R: Rng>(in_dim: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        let dims = [in_dim, hidden, hidden, 1];
        let layers = dims
            .windows(2)
            .map(|d| {
                let s = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Dense {
                    in_dim: d[0],
                    out_dim: d[1],
                    weights: (0..d[0] * d[1]).map(|_| rng.gen_range(-s..s)).collect(),
                    biases: vec![0.0; d[1]],
                }
            })
            .collect();
        Self { activation, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Scalar forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<f64, MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::InputWidth {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if idx < last {
                for z in next.iter_mut() {
                    *z = self.activation.apply(*z);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Flat parameter vector (layer by layer: weights then biases).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Overwrites parameters from a flat vector laid out as [`Mlp::params`].
    pub fn set_params(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        for layer in &mut self.layers {
            let w = layer.weights.len();
            layer.weights.copy_from_slice(&flat[cursor..cursor + w]);
            cursor += w;
            let b = layer.biases.len();
            layer.biases.copy_from_slice(&flat[cursor..cursor + b]);
            cursor += b;
        }
        debug_assert_eq!(cursor, flat.len());
    }

    /// Mean squared error over the batch and its gradient with respect to the
    /// flat parameter vector. The gradient layout matches [`Mlp::params`].
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), MlpError> {
        if inputs.is_empty() {
            return Err(MlpError::EmptyBatch);
        }
        let n = inputs.len() as f64;
        let mut grad = vec![0.0; self.params().len()];
        let mut loss = 0.0;
        let last = self.layers.len() - 1;

        // Per-row forward caches.
        let mut pre: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut act: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];

        for (row, &target) in inputs.iter().zip(targets) {
            debug_assert_eq!(row.len(), self.input_dim());
            // Forward, caching pre-activations and activations.
            let mut cur = row.clone();
            for (idx, layer) in self.layers.iter().enumerate() {
                layer.forward(&cur, &mut pre[idx]);
                act[idx] = pre[idx].clone();
                if idx < last {
                    for z in act[idx].iter_mut() {
                        *z = self.activation.apply(*z);
                    }
                }
                cur = act[idx].clone();
            }
            let prediction = act[last][0];
            let err = prediction - target;
            loss += err * err / n;

            // Backward. dL/d(pred) = 2 err / n.
            let mut delta = vec![2.0 * err / n];
            let mut offset = grad.len();
            for idx in (0..self.layers.len()).rev() {
                let layer = &self.layers[idx];
                let input: &[f64] = if idx == 0 { row } else { &act[idx - 1] };
                offset -= layer.weights.len() + layer.biases.len();
                let (gw, gb) = grad[offset..offset + layer.weights.len() + layer.biases.len()]
                    .split_at_mut(layer.weights.len());
                let mut next_delta = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    gb[o] += delta[o];
                    for i in 0..layer.in_dim {
                        gw[o * layer.in_dim + i] += delta[o] * input[i];
                        next_delta[i] += delta[o] * layer.weights[o * layer.in_dim + i];
                    }
                }
                if idx > 0 {
                    for (d, &z) in next_delta.iter_mut().zip(&pre[idx - 1]) {
                        *d *= self.activation.derivative(z);
                    }
                }
                delta = next_delta;
            }
        }
        Ok((loss, grad))
    }

    /// trains the network by full-batch gradient descent on squared error,
    /// halving the learning rate when the loss plateaus. Returns the final
    /// training loss.
    pub fn train(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[f64],
        config: &TrainConfig,
    ) -> Result<f64, MlpError> {
        let mut lr = config.learning_rate;
        let mut best = f64::INFINITY;
        let mut stalled = 0usize;
        let mut loss = 0.0;
        for epoch in 0..config.epochs {
            let (l, grad) = self.loss_and_gradient(inputs, targets)?;
            loss = l;
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { loss, epoch, lr });
            }
            if loss + 1e-12 < best {
                best = loss;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= config.plateau_patience {
                    lr *= 0.5;
                    stalled = 0;
                }
            }
            let mut flat = self.params();
            for (p, g) in flat.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            self.set_params(&flat);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::Rng;

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = seeding::rng(1);
        let mlp = Mlp::xavier(3, 4, Activation::Relu, &mut rng);
        assert!(mlp.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = seeding::rng(2);
        let mut mlp = Mlp::xavier(2, 5, Activation::Elu, &mut rng);
        let p = mlp.params();
        let mut shifted = p.clone();
        for v in shifted.iter_mut() {
            *v += 0.5;
        }
        mlp.set_params(&shifted);
        assert_eq!(mlp.params(), shifted);
    }

    /// Analytic gradients against central finite differences, step 1e-5,
    /// relative tolerance 1e-4, on random small nets.
    #[test]
    fn gradient_matches_central_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = seeding::rng(100 + seed);
            let activation = if seed % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Elu
            };
            let mlp = Mlp::xavier(3, 4, activation, &mut rng);
            let rows: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let targets: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, analytic) = mlp.loss_and_gradient(&rows, &targets).unwrap();

            let step = 1e-5;
            let base = mlp.params();
            for k in 0..base.len() {
                let mut probe = mlp.clone();
                let mut up = base.clone();
                up[k] += step;
                probe.set_params(&up);
                let (lu, _) = probe.loss_and_gradient(&rows, &targets).unwrap();
                let mut down = base.clone();
                down[k] -= step;
                probe.set_params(&down);
                let (ld, _) = probe.loss_and_gradient(&rows, &targets).unwrap();
                let numeric = (lu - ld) / (2.0 * step);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic[k] - numeric).abs() / denom < 1e-4,
                    "seed {seed} param {k}: analytic {} vs numeric {numeric}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn training_fits_a_linear_map() {
        let mut rng = seeding::rng(7);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| 1.5 * r[0] - 0.5 * r[1] + 0.25).collect();
        let mut mlp = Mlp::xavier(2, 8, Activation::Relu, &mut rng);
        let loss = mlp
            .train(
                &rows,
                &targets,
                &TrainConfig {
                    epochs: 3000,
                    learning_rate: 5e-2,
                    plateau_patience: 100,
                },
            )
            .unwrap();
        assert!(loss < 1e-3, "final loss {loss}");
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let mut rng = seeding::rng(11);
        let mlp = Mlp::random_uniform(2, 4, Activation::Elu, (0.0, 1.0), (0.0, 0.0), &mut rng);
        let text = serde_json::to_string(&mlp).unwrap();
        let back: Mlp = serde_json::from_str(&text).unwrap();
        assert_eq!(mlp, back);
    }
}
