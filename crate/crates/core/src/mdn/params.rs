use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::rng::{self, stream};

/// Floating point type the network can be evaluated in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Default
        + Send
        + Sync
        + Sum
        + AddAssign
        + MulAssign
        + 'static
{
}

/// Fully connected layer. Weights are stored input-major:
/// `w[j * fan_out + o]` connects input `j` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            w: vec![T::zero(); fan_in * fan_out],
            b: vec![T::zero(); fan_out],
        }
    }

    /// `out = b + W^T x`, written as a sum of scaled weight rows.
    pub(crate) fn apply(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.b);
        for (xj, row) in x.iter().zip(self.w.chunks_exact(self.fan_out)) {
            if *xj == T::zero() {
                continue;
            }
            for (o, wj) in out.iter_mut().zip(row) {
                *o += *xj * *wj;
            }
        }
    }
}

/// Network weights. Layer order: hidden layers in sequence, then the
/// output layer whose units are laid out as
/// `[reward | logits (K) | mean (K x d) | log-sigma (K x d)]`,
/// component-major within the mean and log-sigma blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            config: config.clone(),
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    w: l.w.iter().map(|v| U::of(v.f64())).collect(),
                    b: l.b.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// All parameters in layer order, each layer as weights then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.config.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn from_flat(config: &ModelConfig, flat: &[T]) -> Option<Self> {
        if flat.len() != config.param_count() {
            return None;
        }
        let mut p = Self::zeros(config);
        let mut rest = flat;
        for l in &mut p.layers {
            let (w, r) = rest.split_at(l.w.len());
            let (b, r) = r.split_at(l.b.len());
            l.w.copy_from_slice(w);
            l.b.copy_from_slice(b);
            rest = r;
        }
        Some(p)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Mutable view of every scalar, in `flatten` order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

/// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero
/// (so initial log-sigmas sit near 0 and sigmas near 1).
pub fn init<T: Real>(config: &ModelConfig) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = rng::rng_from(rng::derive(config.seed, stream::INIT));
    let mut p = ModelParams::zeros(config);
    for l in &mut p.layers {
        let bound = 1.0 / (l.fan_in as f64).sqrt();
        for w in &mut l.w {
            *w = T::of(rng.random_range(-bound..bound));
        }
    }
    Ok(p)
}
