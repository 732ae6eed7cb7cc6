use rand::Rng;

use super::forward::{decode, mixture_nll, run, Heads, Pass};
use super::params::{Dense, ModelParams, Real};
use crate::dataset::MiniBatch;
use crate::error::{Error, Result};
use crate::rng;

/// Mean-over-batch gradient, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
    /// Mean batch loss at the evaluated parameters.
    pub loss: f64,
}

/// Per-row input scales: 0 for dropped features, `1 / keep` otherwise.
fn dropout_scales<T: Real>(rate: f64, rows: usize, d: usize, seed: u64) -> Option<Vec<T>> {
    if rate == 0.0 {
        return None;
    }
    let mut rng = rng::rng_from(seed);
    let kept = T::of(1.0 / (1.0 - rate));
    Some(
        (0..rows * d)
            .map(|_| {
                if rng.random::<f64>() >= rate {
                    kept
                } else {
                    T::zero()
                }
            })
            .collect(),
    )
}

fn layer_name(idx: usize, n: usize) -> String {
    if idx + 1 == n {
        "output layer".into()
    } else {
        format!("hidden layer {}", idx + 1)
    }
}

struct Example<T> {
    state: Vec<T>,
    next: Vec<T>,
}

fn example<T: Real>(batch: &MiniBatch, row: usize) -> Example<T> {
    Example {
        state: batch.state(row).iter().map(|&v| T::of(v)).collect(),
        next: batch.next_state(row).iter().map(|&v| T::of(v)).collect(),
    }
}

/// Mean loss over the batch with the same dropout masks `gradients` uses.
pub fn batch_loss<T: Real>(
    params: &ModelParams<T>,
    batch: &MiniBatch,
    dropout_seed: u64,
) -> Result<f64> {
    let cfg = &params.config;
    let scales = dropout_scales::<T>(cfg.input_dropout_rate, batch.len(), cfg.d, dropout_seed);
    let mut pass = Pass::new(cfg);
    let mut heads = Heads::new(cfg);
    let mut log_joint = vec![T::zero(); cfg.num_components];
    let mut total = 0.0;
    for row in 0..batch.len() {
        let ex = example::<T>(batch, row);
        let scale = scales.as_ref().map(|s| &s[row * cfg.d..(row + 1) * cfg.d]);
        run(params, &ex.state, batch.actions[row], scale, &mut pass);
        decode(cfg, &ex.state, &pass.out, &mut heads);
        let nll = mixture_nll(
            &heads.log_alpha,
            &heads.mu,
            &heads.sigma,
            &heads.log_sigma,
            &ex.next,
            &mut log_joint,
        );
        let dr = heads.r_hat - T::of(batch.rewards[row]);
        total += (dr * dr + nll).f64();
    }
    let mean = total / batch.len() as f64;
    if !mean.is_finite() {
        return Err(Error::training(format!("non-finite loss {mean}")));
    }
    Ok(mean)
}

/// Backpropagate the mean batch loss. Dropout masks are drawn per example
/// from `dropout_seed`. Sigmas sitting on a clamp bound pass no gradient to
/// their log-sigma unit.
pub fn gradients<T: Real>(
    params: &ModelParams<T>,
    batch: &MiniBatch,
    dropout_seed: u64,
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(Error::training("empty mini-batch"));
    }
    let cfg = &params.config;
    let (d, k) = (cfg.d, cfg.num_components);
    let kd = k * d;
    let inv_b = T::of(1.0 / batch.len() as f64);
    let two = T::of(2.0);

    let scales = dropout_scales::<T>(cfg.input_dropout_rate, batch.len(), d, dropout_seed);
    let mut grads: Vec<Dense<T>> = params
        .layers
        .iter()
        .map(|l| Dense::zeros(l.fan_in, l.fan_out))
        .collect();

    let mut pass = Pass::new(cfg);
    let mut heads = Heads::new(cfg);
    let mut log_joint = vec![T::zero(); k];
    let mut g_out = vec![T::zero(); cfg.output_dim()];
    let widest = cfg.hidden_sizes.iter().copied().max().unwrap_or(0).max(cfg.output_dim());
    let mut g_cur = vec![T::zero(); widest];
    let mut g_prev = vec![T::zero(); widest];
    let mut total = 0.0;

    for row in 0..batch.len() {
        let ex = example::<T>(batch, row);
        let scale = scales.as_ref().map(|s| &s[row * d..(row + 1) * d]);
        run(params, &ex.state, batch.actions[row], scale, &mut pass);
        decode(cfg, &ex.state, &pass.out, &mut heads);
        let nll = mixture_nll(
            &heads.log_alpha,
            &heads.mu,
            &heads.sigma,
            &heads.log_sigma,
            &ex.next,
            &mut log_joint,
        );
        let dr = heads.r_hat - T::of(batch.rewards[row]);
        total += (dr * dr + nll).f64();

        // Output-unit gradients.
        g_out[0] = two * dr * inv_b;
        for c in 0..k {
            let resp = (log_joint[c] + nll).exp();
            g_out[1 + c] = (heads.log_alpha[c].exp() - resp) * inv_b;
            for i in 0..d {
                let idx = c * d + i;
                let s = heads.sigma[idx];
                let diff = ex.next[i] - heads.mu[idx];
                g_out[1 + k + idx] = -resp * diff / (s * s) * inv_b;
                g_out[1 + k + kd + idx] = if heads.sigma_free[idx] {
                    let z = diff / s;
                    resp * (T::one() - z * z) * inv_b
                } else {
                    T::zero()
                };
            }
        }

        // Back through the dense stack.
        let n = params.layers.len();
        let width = g_out.len();
        g_cur[..width].copy_from_slice(&g_out);
        let mut width = width;
        for li in (0..n).rev() {
            let layer = &params.layers[li];
            let input: &[T] = if li == 0 {
                &pass.input
            } else {
                &pass.hidden[li - 1]
            };
            let g = &mut grads[li];
            let delta = &g_cur[..width];
            for (o, gb) in g.b.iter_mut().enumerate() {
                *gb += delta[o];
            }
            for (xj, grow) in input.iter().zip(g.w.chunks_exact_mut(layer.fan_out)) {
                if *xj == T::zero() {
                    continue;
                }
                for (gw, dl) in grow.iter_mut().zip(delta) {
                    *gw += *xj * *dl;
                }
            }
            if li == 0 {
                break;
            }
            // Gradient w.r.t. the previous activation, then through tanh.
            for (j, wrow) in layer.w.chunks_exact(layer.fan_out).enumerate() {
                let s: T = wrow.iter().zip(delta).map(|(w, dl)| *w * *dl).sum();
                let h = input[j];
                g_prev[j] = s * (T::one() - h * h);
            }
            width = layer.fan_in;
            std::mem::swap(&mut g_cur, &mut g_prev);
        }
    }

    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::training(format!("non-finite loss {loss}")));
    }
    let n = grads.len();
    for (li, g) in grads.iter().enumerate() {
        if g.w.iter().chain(&g.b).any(|v| !v.is_finite()) {
            return Err(Error::training(format!(
                "non-finite gradient in {}",
                layer_name(li, n)
            )));
        }
    }
    Ok(Gradients {
        layers: grads,
        loss,
    })
}

impl<T: Real> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }
}
