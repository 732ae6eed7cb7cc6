//! Mixture-density world model.
//!
//! A fully connected tanh trunk maps `(state, one-hot action)` to three
//! heads: a scalar reward, `K` mixture logits, and `K x d` means and
//! log-standard-deviations of a diagonal Gaussian mixture over the next
//! state. Training minimizes squared reward error plus the mixture
//! negative log-likelihood of the observed next state.

mod adam;
mod checkpoint;
mod forward;
mod grad;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use forward::{forward, loss, MdnOutput};
pub use grad::{batch_loss, gradients, Gradients};
pub use params::{init, Dense, ModelParams, Real};
pub use train::{fit, train, Trained};

/// Lower clamp on predicted standard deviations.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper clamp on predicted standard deviations.
pub const SIGMA_MAX: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// State dimension.
    pub d: usize,
    /// Number of mixture components.
    pub num_components: usize,
    pub hidden_sizes: Vec<usize>,
    /// Probability of zeroing each state feature during training.
    pub input_dropout_rate: f64,
    /// History length fed to the model. Only 1 is supported.
    pub history: usize,
    /// Predict the next state as `state + head` instead of the raw head.
    pub residual_mean: bool,
    pub learn_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Optimizer steps.
    pub train_batches: usize,
    pub batch_size: usize,
    /// Initialization, batch-order, dropout and shuffle streams derive from
    /// this. Ensemble members get their own derived seeds.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 10,
            num_components: 5,
            hidden_sizes: vec![32, 32],
            input_dropout_rate: 0.2,
            history: 1,
            residual_mean: true,
            learn_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_batches: 1000,
            batch_size: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 {
            return bad("model d must be >= 1");
        }
        if self.num_components == 0 {
            return bad("number of mixture components must be >= 1");
        }
        if self.history != 1 {
            return bad("only single-step history (M = 1) is supported");
        }
        if !(0.0..1.0).contains(&self.input_dropout_rate) {
            return bad("input_dropout_rate must lie in [0, 1)");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return bad("learn_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d + crate::env::NUM_ACTIONS
    }

    /// Width of the output layer: reward, logits, means, log-sigmas.
    pub fn output_dim(&self) -> usize {
        1 + self.num_components + 2 * self.num_components * self.d
    }

    /// `(fan_in, fan_out)` of every dense layer, trunk first, heads last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden_sizes);
        widths.push(self.output_dim());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// True when parameters produced under `other` fit this configuration.
    pub fn same_shape(&self, other: &ModelConfig) -> bool {
        self.layer_shapes() == other.layer_shapes()
            && self.d == other.d
            && self.num_components == other.num_components
    }
}
