//! Reference computations written directly from the model and environment
//! definitions, without calling into the library's numerics.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mdpval::analysis::WorldModel;
use mdpval::dataset::MiniBatch;
use mdpval::env::{make_env, EnvSpec};
use mdpval::mdn::{batch_loss, gradients, ModelParams};
use mdpval::{MdnOutput, Result};

// ---- environments ---------------------------------------------------------

/// P(f_i increments | a, h) from the environment tables, d = 10.
pub fn increment_table(env: u8, i: usize, a: u8, h: Option<u8>) -> f64 {
    let up = 1.0 - i as f64 / 10.0;
    let low = i as f64 / 10.0;
    match (env, a, h) {
        (1 | 2 | 4, _, _) => up,
        (3 | 5, 1, _) => up,
        (3 | 5, 0, _) => 0.0,
        (6, _, Some(1)) => up,
        (6, _, Some(0)) => low,
        (7, 0, _) => 0.0,
        (7, 1, Some(1)) => up,
        (7, 1, Some(0)) => low,
        _ => panic!("no table cell for env {env}, a {a}, h {h:?}"),
    }
}

/// P(r = 1 | f_0, a, h) from the environment tables.
pub fn reward_table(env: u8, f0: f64, a: u8, h: Option<u8>) -> f64 {
    match (env, a, h) {
        (1 | 3, _, _) => 0.5,
        (2, 1, _) => 1.0,
        (2, 0, _) => 0.5,
        (4 | 5, _, _) => {
            if f0 > 4.0 {
                1.0
            } else {
                0.0
            }
        }
        (6 | 7, _, Some(1)) => 0.8,
        (6 | 7, _, Some(0)) => 0.2,
        _ => panic!("no reward cell for env {env}"),
    }
}

/// One conditioning cell of the frequency tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cell {
    Increment { feature: usize, a: u8, h: Option<u8> },
    Reward { above: bool, a: u8, h: Option<u8> },
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Count {
    pub hits: u64,
    pub total: u64,
}

/// Worst absolute deviation between empirical and tabulated frequencies over
/// every cell with at least `min_count` observations, plus the per-cell
/// counts. Also checks the structural invariants along the way.
pub struct Conformance {
    pub steps: u64,
    pub max_dev: f64,
    pub worst: Option<(Cell, f64, f64)>,
    pub cells: usize,
    pub invariant_violations: Vec<String>,
}

pub fn env_conformance(env_id: u8, steps: u64, seed: u64, min_count: u64) -> Conformance {
    let mut env = make_env(EnvSpec::new(env_id, 10, 10, seed)).unwrap();
    let mut policy = rand_policy(seed ^ 0xA5A5);
    let mut counts: BTreeMap<Cell, Count> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut done_steps = 0;
    while done_steps < steps {
        let s0 = env.reset();
        let h = s0.hidden_h;
        if matches!(env_id, 6 | 7) != h.is_some() {
            violations.push(format!("env {env_id}: hidden factor presence wrong"));
        }
        if s0.features.iter().any(|f| *f != 0.0) || s0.t != 0 {
            violations.push("reset state is not all zeros at t = 0".into());
        }
        let mut state = s0.features.clone();
        for t in 0..10 {
            let a = policy();
            let (next, r, done) = env.step(a).unwrap();
            if env.state().unwrap().hidden_h != h {
                violations.push("hidden factor changed within an episode".into());
            }
            if done != (t == 9) {
                violations.push(format!("done flag wrong at t = {t}"));
            }
            if r != 0.0 && r != 1.0 {
                violations.push(format!("reward {r} not binary"));
            }
            for i in 0..10 {
                let inc = next[i] - state[i];
                if inc != 0.0 && inc != 1.0 {
                    violations.push(format!("increment {inc} not in {{0, 1}}"));
                }
                let c = counts
                    .entry(Cell::Increment { feature: i, a, h })
                    .or_default();
                c.total += 1;
                c.hits += (inc == 1.0) as u64;
            }
            let c = counts
                .entry(Cell::Reward {
                    above: state[0] > 4.0,
                    a,
                    h,
                })
                .or_default();
            c.total += 1;
            c.hits += (r == 1.0) as u64;
            state = next;
            done_steps += 1;
        }
        if env.step(0).is_ok() {
            violations.push("stepping a finished episode succeeded".into());
        }
    }
    let mut max_dev = 0.0;
    let mut worst = None;
    let mut cells = 0;
    for (cell, c) in &counts {
        if c.total < min_count {
            continue;
        }
        cells += 1;
        let p = match *cell {
            Cell::Increment { feature, a, h } => increment_table(env_id, feature, a, h),
            Cell::Reward { above, a, h } => {
                reward_table(env_id, if above { 5.0 } else { 0.0 }, a, h)
            }
        };
        let emp = c.hits as f64 / c.total as f64;
        let dev = (emp - p).abs();
        if dev > max_dev {
            max_dev = dev;
            worst = Some((*cell, emp, p));
        }
    }
    Conformance {
        steps: done_steps,
        max_dev,
        worst,
        cells,
        invariant_violations: violations,
    }
}

/// Coin-flip policy independent of the library's policy stream.
fn rand_policy(seed: u64) -> impl FnMut() -> u8 {
    let mut x = seed | 1;
    move || {
        // xorshift64*
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        (x.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 63) as u8
    }
}

// ---- loss -----------------------------------------------------------------

/// Squared reward error plus `-ln sum_k alpha_k prod_i N(x_i; mu_ki, sigma_ki)`,
/// evaluated literally: densities multiplied out, no log-space tricks.
pub fn direct_loss(out: &MdnOutput, r: f64, x: &[f64]) -> f64 {
    let d = x.len();
    let mut mixture = 0.0;
    for k in 0..out.alpha.len() {
        let mut density = 1.0;
        for i in 0..d {
            let mu = out.mu[k * d + i];
            let s = out.sigma[k * d + i];
            density *= (2.0 * std::f64::consts::PI * s * s).powf(-0.5)
                * (-(x[i] - mu) * (x[i] - mu) / (2.0 * s * s)).exp();
        }
        mixture += out.alpha[k] * density;
    }
    (out.r_hat - r).powi(2) - mixture.ln()
}

// ---- gradients ------------------------------------------------------------

pub struct GradCheck {
    pub params: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Parameters outside both tolerances.
    pub failures: usize,
}

/// Compare analytic gradients with central differences of the batch loss
/// for every parameter.
pub fn gradient_check(
    params: &ModelParams<f64>,
    batch: &MiniBatch,
    dropout_seed: u64,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheck {
    let analytic = gradients(params, batch, dropout_seed).unwrap().flatten();
    let flat = params.flatten();
    let mut probe = flat.clone();
    let mut out = GradCheck {
        params: flat.len(),
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failures: 0,
    };
    for p in 0..flat.len() {
        probe[p] = flat[p] + h;
        let up = batch_loss(&ModelParams::from_flat(&params.config, &probe).unwrap(), batch, dropout_seed)
            .unwrap();
        probe[p] = flat[p] - h;
        let down =
            batch_loss(&ModelParams::from_flat(&params.config, &probe).unwrap(), batch, dropout_seed)
                .unwrap();
        probe[p] = flat[p];
        let numeric = (up - down) / (2.0 * h);
        let abs = (analytic[p] - numeric).abs();
        let rel = abs / analytic[p].abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        out.max_abs_err = out.max_abs_err.max(abs);
        if abs > abs_tol {
            out.max_rel_err = out.max_rel_err.max(rel);
        }
        if abs > abs_tol && rel > rel_tol {
            out.failures += 1;
        }
    }
    out
}

// ---- formula fixtures -----------------------------------------------------

/// A model whose reward is `3 * f_0` and whose mixture ignores its input.
pub struct LinearReward;

impl WorldModel for LinearReward {
    fn dim(&self) -> usize {
        2
    }

    fn predict(&self, state: &[f64], _action: u8) -> Result<MdnOutput> {
        Ok(MdnOutput {
            r_hat: 3.0 * state[0],
            alpha: vec![1.0],
            mu: state.to_vec(),
            sigma: vec![1.0; state.len()],
        })
    }
}

/// Two components whose weights and feature-0 means depend on the action:
/// a = 0 gives alpha (0.6, 0.4), means (0, 0); a = 1 gives (0.2, 0.8),
/// means (1, 2).
pub struct TwoComponentProbe;

impl WorldModel for TwoComponentProbe {
    fn dim(&self) -> usize {
        2
    }

    fn predict(&self, _state: &[f64], action: u8) -> Result<MdnOutput> {
        let (alpha, mu) = if action == 0 {
            (vec![0.6, 0.4], vec![0.0, 5.0, 0.0, 5.0])
        } else {
            (vec![0.2, 0.8], vec![1.0, 5.0, 2.0, 5.0])
        };
        Ok(MdnOutput {
            r_hat: 0.0,
            alpha,
            mu,
            sigma: vec![1.0; 4],
        })
    }
}

/// Reward contribution of feature `i`, spelled out: MAE with column `i`
/// replaced by its batch mean, minus the plain MAE.
pub fn reward_contribution_by_hand<M: WorldModel>(m: &M, states: &[Vec<f64>], actions: &[u8], rewards: &[f64], i: usize) -> f64 {
    let n = states.len() as f64;
    let mae = |rows: &[Vec<f64>]| {
        rows.iter()
            .zip(actions)
            .zip(rewards)
            .map(|((s, a), r)| (m.predict(s, *a).unwrap().r_hat - r).abs())
            .sum::<f64>()
            / n
    };
    let mean = states.iter().map(|s| s[i]).sum::<f64>() / n;
    let replaced: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s[i] = mean;
            s
        })
        .collect();
    mae(&replaced) - mae(states)
}

/// Action sensitivity of one example, spelled out from the formula.
pub fn sensitivity_by_hand(orig: &MdnOutput, shuf: &MdnOutput, feature: usize) -> f64 {
    let d = orig.mu.len() / orig.alpha.len();
    (0..orig.alpha.len())
        .map(|k| {
            (orig.alpha[k] + shuf.alpha[k]) / 2.0
                * (orig.mu[k * d + feature] - shuf.mu[k * d + feature]).abs()
        })
        .sum()
}

pub fn minibatch(states: &[Vec<f64>], actions: &[u8], rewards: &[f64]) -> MiniBatch {
    MiniBatch {
        d: states[0].len(),
        states: states.concat(),
        actions: actions.to_vec(),
        rewards: rewards.to_vec(),
        next_states: states.concat(),
    }
}

// ---- random instances -----------------------------------------------------

use mdpval::mdn::{init, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random network, batch and dropout seed for gradient checks.
pub fn random_grad_instance(seed: u64) -> (ModelParams<f64>, MiniBatch, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=4);
    let layers = rng.random_range(1..=2);
    let cfg = ModelConfig {
        d,
        num_components: rng.random_range(1..=3),
        hidden_sizes: (0..layers).map(|_| rng.random_range(2..=6)).collect(),
        input_dropout_rate: if rng.random_bool(0.5) { 0.0 } else { 0.3 },
        residual_mean: rng.random_bool(0.5),
        seed,
        ..ModelConfig::default()
    };
    let mut params = init::<f64>(&cfg).unwrap();
    for v in params.values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let rows = rng.random_range(1..=6);
    let mut states = Vec::new();
    let mut next = Vec::new();
    for _ in 0..rows * d {
        let s = rng.random_range(0..5) as f64;
        states.push(s);
        next.push(s + rng.random_range(0..2) as f64);
    }
    let batch = MiniBatch {
        d,
        states,
        actions: (0..rows).map(|_| rng.random_range(0..2)).collect(),
        rewards: (0..rows).map(|_| rng.random_range(0..2) as f64).collect(),
        next_states: next,
    };
    (params, batch, rng.random())
}

/// Random mixture output with every target within three sigmas.
pub fn random_mixture(seed: u64) -> (MdnOutput, f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=5);
    let d = rng.random_range(1..=6);
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let alpha = logits.iter().map(|l| l.exp() / z).collect();
    let sigma: Vec<f64> = (0..k * d).map(|_| rng.random_range(0.3..3.0)).collect();
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mu = (0..k * d)
        .map(|j| x[j % d] + sigma[j] * rng.random_range(-3.0..3.0))
        .collect();
    let out = MdnOutput {
        r_hat: rng.random_range(-1.0..2.0),
        alpha,
        mu,
        sigma,
    };
    (out, rng.random_range(0..2) as f64, x)
}
