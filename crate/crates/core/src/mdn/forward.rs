use super::params::{ModelParams, Real};
use super::{ModelConfig, SIGMA_MAX, SIGMA_MIN};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One prediction of the world model.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnOutput {
    pub r_hat: f64,
    /// Mixture weights, length `K`.
    pub alpha: Vec<f64>,
    /// Component means, row-major `K x d`.
    pub mu: Vec<f64>,
    /// Component standard deviations, row-major `K x d`.
    pub sigma: Vec<f64>,
}

impl MdnOutput {
    pub fn num_components(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.len() / self.alpha.len()
    }

    pub fn mu_k(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.mu[k * d..(k + 1) * d]
    }

    pub fn sigma_k(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.sigma[k * d..(k + 1) * d]
    }
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Pass<T> {
    pub input: Vec<T>,
    /// Post-tanh activations of each hidden layer.
    pub hidden: Vec<Vec<T>>,
    pub out: Vec<T>,
}

impl<T: Real> Pass<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            input: vec![T::zero(); config.input_dim()],
            hidden: config.hidden_sizes.iter().map(|&h| vec![T::zero(); h]).collect(),
            out: vec![T::zero(); config.output_dim()],
        }
    }
}

/// Decoded output heads in working precision.
#[derive(Debug, Clone)]
pub(crate) struct Heads<T> {
    pub r_hat: T,
    pub log_alpha: Vec<T>,
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub log_sigma: Vec<T>,
    /// Whether `exp(log-sigma)` lay strictly inside the clamp range.
    pub sigma_free: Vec<bool>,
}

impl<T: Real> Heads<T> {
    pub fn new(config: &ModelConfig) -> Self {
        let kd = config.num_components * config.d;
        Self {
            r_hat: T::zero(),
            log_alpha: vec![T::zero(); config.num_components],
            mu: vec![T::zero(); kd],
            sigma: vec![T::zero(); kd],
            log_sigma: vec![T::zero(); kd],
            sigma_free: vec![true; kd],
        }
    }
}

/// Run the trunk and output layer. `scale` multiplies the state features
/// (dropout mask already divided by the keep probability).
pub(crate) fn run<T: Real>(
    params: &ModelParams<T>,
    state: &[T],
    action: u8,
    scale: Option<&[T]>,
    pass: &mut Pass<T>,
) {
    let d = params.config.d;
    match scale {
        Some(s) => {
            for ((x, v), m) in pass.input[..d].iter_mut().zip(state).zip(s) {
                *x = *v * *m;
            }
        }
        None => pass.input[..d].copy_from_slice(state),
    }
    pass.input[d] = if action == 0 { T::one() } else { T::zero() };
    pass.input[d + 1] = if action == 0 { T::zero() } else { T::one() };

    let (trunk, head) = params.layers.split_at(params.layers.len() - 1);
    let mut prev: &[T] = &pass.input;
    for (layer, act) in trunk.iter().zip(pass.hidden.iter_mut()) {
        layer.apply(prev, act);
        for a in act.iter_mut() {
            *a = a.tanh();
        }
        prev = act;
    }
    head[0].apply(prev, &mut pass.out);
}

pub(crate) fn decode<T: Real>(config: &ModelConfig, state: &[T], out: &[T], heads: &mut Heads<T>) {
    let k = config.num_components;
    let kd = k * config.d;
    heads.r_hat = out[0];

    let logits = &out[1..1 + k];
    let lse = log_sum_exp(logits);
    for (la, l) in heads.log_alpha.iter_mut().zip(logits) {
        *la = *l - lse;
    }

    let mu_raw = &out[1 + k..1 + k + kd];
    heads.mu.copy_from_slice(mu_raw);
    if config.residual_mean {
        for row in heads.mu.chunks_exact_mut(config.d) {
            for (m, s) in row.iter_mut().zip(state) {
                *m += *s;
            }
        }
    }

    let (lo, hi) = (T::of(SIGMA_MIN), T::of(SIGMA_MAX));
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    for (idx, ls) in out[1 + k + kd..].iter().enumerate() {
        let (sigma, log_sigma, free) = if *ls <= ln_lo {
            (lo, ln_lo, false)
        } else if *ls >= ln_hi {
            (hi, ln_hi, false)
        } else {
            (ls.exp(), *ls, true)
        };
        heads.sigma[idx] = sigma;
        heads.log_sigma[idx] = log_sigma;
        heads.sigma_free[idx] = free;
    }
}

pub(crate) fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|x| (*x - max).exp()).sum();
    max + s.ln()
}

/// Mixture negative log-likelihood of `x`. Writes per-component log
/// joint terms `ln alpha_k + ln N_k(x)` into `log_joint`.
pub(crate) fn mixture_nll<T: Real>(
    log_alpha: &[T],
    mu: &[T],
    sigma: &[T],
    log_sigma: &[T],
    x: &[T],
    log_joint: &mut [T],
) -> T {
    let d = x.len();
    let half_ln_2pi = T::of(HALF_LN_2PI);
    let half = T::of(0.5);
    for (k, lj) in log_joint.iter_mut().enumerate() {
        let range = k * d..(k + 1) * d;
        let mut acc = log_alpha[k] - T::of(d as f64) * half_ln_2pi;
        for (((xi, m), s), ls) in x
            .iter()
            .zip(&mu[range.clone()])
            .zip(&sigma[range.clone()])
            .zip(&log_sigma[range])
        {
            let z = (*xi - *m) / *s;
            acc = acc - *ls - half * z * z;
        }
        *lj = acc;
    }
    -log_sum_exp(log_joint)
}

/// Evaluate the model on one `(state, action)`. The optional mask is a
/// 0/1 vector over state features; kept features are rescaled by
/// `1 / (1 - input_dropout_rate)`.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    state: &[f64],
    action: u8,
    dropout_mask: Option<&[f64]>,
) -> Result<MdnOutput> {
    let cfg = &params.config;
    if state.len() != cfg.d {
        return Err(Error::Validation(format!(
            "state has dimension {}, model expects {}",
            state.len(),
            cfg.d
        )));
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite state feature".into()));
    }
    if action as usize >= crate::env::NUM_ACTIONS {
        return Err(Error::Validation(format!("action {action} out of range")));
    }
    let s: Vec<T> = state.iter().map(|&v| T::of(v)).collect();
    let scale: Option<Vec<T>> = match dropout_mask {
        Some(m) => {
            if m.len() != cfg.d || m.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::Validation("dropout mask must be a 0/1 d-vector".into()));
            }
            let keep = 1.0 - cfg.input_dropout_rate;
            Some(m.iter().map(|&v| T::of(v / keep)).collect())
        }
        None => None,
    };

    let mut pass = Pass::new(cfg);
    run(params, &s, action, scale.as_deref(), &mut pass);
    let mut heads = Heads::new(cfg);
    decode(cfg, &s, &pass.out, &mut heads);
    Ok(MdnOutput {
        r_hat: heads.r_hat.f64(),
        alpha: heads.log_alpha.iter().map(|v| v.f64().exp()).collect(),
        mu: heads.mu.iter().map(|v| v.f64()).collect(),
        sigma: heads.sigma.iter().map(|v| v.f64()).collect(),
    })
}

/// Squared reward error plus mixture negative log-likelihood of the next
/// state, with a max-shifted log-sum-exp over components.
pub fn loss(out: &MdnOutput, reward_target: f64, next_state_target: &[f64]) -> f64 {
    let log_alpha: Vec<f64> = out.alpha.iter().map(|a| a.ln()).collect();
    let log_sigma: Vec<f64> = out.sigma.iter().map(|s| s.ln()).collect();
    let mut scratch = vec![0.0; out.alpha.len()];
    let nll = mixture_nll(
        &log_alpha,
        &out.mu,
        &out.sigma,
        &log_sigma,
        next_state_target,
        &mut scratch,
    );
    let dr = out.r_hat - reward_target;
    dr * dr + nll
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdn::{init, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn alpha_is_a_simplex_point_and_sigma_is_clamped() {
        let p = init::<f64>(&cfg()).unwrap();
        for a in 0..2 {
            let s: Vec<f64> = (0..10).map(|i| i as f64 * 0.7).collect();
            let out = forward(&p, &s, a, None).unwrap();
            assert!((out.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.alpha.iter().all(|&x| x >= 0.0));
            assert!(out
                .sigma
                .iter()
                .all(|&s| (SIGMA_MIN..=SIGMA_MAX).contains(&s)));
            assert_eq!(out.mu.len(), 50);
        }
    }

    #[test]
    fn all_ones_mask_without_dropout_is_identity() {
        let c = ModelConfig {
            input_dropout_rate: 0.0,
            ..cfg()
        };
        let p = init::<f64>(&c).unwrap();
        let s = vec![1.0; 10];
        let plain = forward(&p, &s, 1, None).unwrap();
        let masked = forward(&p, &s, 1, Some(&[1.0; 10])).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn zero_trunk_gives_uniform_alpha() {
        let mut p = init::<f64>(&cfg()).unwrap();
        let n = p.layers.len();
        for l in &mut p.layers[..n - 1] {
            l.w.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = forward(&p, &[3.0; 10], 0, None).unwrap();
        for a in out.alpha {
            assert!((a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn extreme_log_sigma_is_clamped() {
        let mut p = init::<f64>(&cfg()).unwrap();
        let out_layer = p.layers.last_mut().unwrap();
        let ls_start = 1 + 5 + 50;
        out_layer.b[ls_start] = 50.0;
        out_layer.b[ls_start + 1] = -50.0;
        let out = forward(&p, &[0.0; 10], 0, None).unwrap();
        assert_eq!(out.sigma[0], SIGMA_MAX);
        assert_eq!(out.sigma[1], SIGMA_MIN);
    }

    #[test]
    fn rejects_non_finite_input() {
        let p = init::<f64>(&cfg()).unwrap();
        let mut s = vec![0.0; 10];
        s[2] = f64::NAN;
        assert!(matches!(forward(&p, &s, 0, None), Err(Error::Numeric(_))));
    }

    #[test]
    fn standard_gaussian_at_its_mean() {
        let d = 10;
        let x: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let out = MdnOutput {
            r_hat: 0.5,
            alpha: vec![1.0],
            mu: x.clone(),
            sigma: vec![1.0; d],
        };
        let expected = d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((loss(&out, 0.5, &x) - expected).abs() < 1e-12);
        assert!((expected - 9.189_385_332).abs() < 1e-9);

        let shifted = MdnOutput {
            r_hat: 2.5,
            ..out.clone()
        };
        assert!((loss(&shifted, 0.5, &x) - loss(&out, 0.5, &x) - 4.0).abs() < 1e-12);
    }
}
