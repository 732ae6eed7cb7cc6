//! The seven synthetic environments used to exercise the validator.
//!
//! Every environment has `d` counter features that start at zero and can
//! only grow by one per step, two actions `{0, 1}` and binary rewards.
//! They differ in which of action, state and a hidden per-episode factor
//! drive feature increments and reward:
//!
//! | id | increments                         | reward                     |
//! |----|------------------------------------|----------------------------|
//! | 1  | `1 - i/d`                          | coin flip                  |
//! | 2  | `1 - i/d`                          | 1 if `a = 1`, else coin    |
//! | 3  | `1 - i/d` if `a = 1`, else frozen  | coin flip                  |
//! | 4  | `1 - i/d`                          | `f_0 > 4`                  |
//! | 5  | as env 3                           | `f_0 > 4`                  |
//! | 6  | `1 - i/d` if `h = 1`, else `i/d`   | `P(r=1) = 0.8` / `0.2`     |
//! | 7  | as env 6 if `a = 1`, else frozen   | as env 6                   |
//!
//! Features are 0-based, so `f_0` increments with probability one under
//! the `1 - i/d` law. Rewards are evaluated on the pre-transition state.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::Outcome;
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

pub const NUM_ENVS: u8 = 7;
pub const NUM_ACTIONS: usize = 2;

/// Threshold on `f_0` above which envs 4 and 5 pay a reward.
pub const REWARD_THRESHOLD: f64 = 4.0;
/// `P(r = 1 | h = 1)` for envs 6 and 7; `P(r = 1 | h = 0)` is `1 -` this.
pub const CONFOUNDED_REWARD_PROB: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: u8,
    /// State dimension.
    pub d: usize,
    /// Episode length in steps.
    pub horizon: usize,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(env_id: u8, d: usize, horizon: usize, seed: u64) -> Self {
        Self {
            env_id,
            d,
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=NUM_ENVS).contains(&self.env_id) {
            return Err(Error::Config(format!(
                "unknown env_id {} (expected 1..={NUM_ENVS})",
                self.env_id
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("state dimension d must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("episode length T must be >= 1".into()));
        }
        Ok(())
    }

    pub fn has_hidden_factor(&self) -> bool {
        matches!(self.env_id, 6 | 7)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub features: Vec<f64>,
    /// Per-episode confounder; only present for envs 6 and 7.
    pub hidden_h: Option<u8>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode_id: u64,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: u8,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub hidden_h: Option<u8>,
    pub transitions: Vec<Transition>,
}

/// Uniform coin-flip behaviour policy.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng::rng_from(seed),
        }
    }

    pub fn act(&mut self) -> u8 {
        self.rng.random_range(0..NUM_ACTIONS as u8)
    }
}

/// A seeded instance of one of the seven environments.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    state: Option<EnvState>,
}

pub fn make_env(spec: EnvSpec) -> Result<Env> {
    Env::new(spec)
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rng: rng::rng_from(spec.seed),
            state: None,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self) -> EnvState {
        let hidden_h = if self.spec.has_hidden_factor() {
            Some(self.rng.random_range(0..2u8))
        } else {
            None
        };
        let state = EnvState {
            features: vec![0.0; self.spec.d],
            hidden_h,
            t: 0,
        };
        self.state = Some(state.clone());
        state
    }

    /// Probability that feature `i` increments given action and hidden factor.
    pub fn increment_prob(&self, i: usize, action: u8, hidden_h: Option<u8>) -> f64 {
        let frac = i as f64 / self.spec.d as f64;
        let forward = 1.0 - frac;
        match self.spec.env_id {
            1 | 2 | 4 => forward,
            3 | 5 => {
                if action == 1 {
                    forward
                } else {
                    0.0
                }
            }
            6 => {
                if hidden_h == Some(1) {
                    forward
                } else {
                    frac
                }
            }
            7 => match (action, hidden_h) {
                (0, _) => 0.0,
                (_, Some(1)) => forward,
                _ => frac,
            },
            _ => unreachable!("env_id validated at construction"),
        }
    }

    /// `P(r = 1)` for the pre-transition state and action.
    pub fn reward_prob(&self, features: &[f64], action: u8, hidden_h: Option<u8>) -> f64 {
        let threshold = || {
            if features[0] > REWARD_THRESHOLD {
                1.0
            } else {
                0.0
            }
        };
        match self.spec.env_id {
            1 | 3 => 0.5,
            2 => {
                if action == 1 {
                    1.0
                } else {
                    0.5
                }
            }
            4 | 5 => threshold(),
            6 | 7 => {
                if hidden_h == Some(1) {
                    CONFOUNDED_REWARD_PROB
                } else {
                    1.0 - CONFOUNDED_REWARD_PROB
                }
            }
            _ => unreachable!("env_id validated at construction"),
        }
    }

    /// Advance one step. Returns `(next_state, reward, done)`.
    pub fn step(&mut self, action: u8) -> Result<(Vec<f64>, f64, bool)> {
        if action as usize >= NUM_ACTIONS {
            return Err(Error::Usage(format!("action {action} is not in {{0, 1}}")));
        }
        let Some(state) = self.state.take() else {
            return Err(Error::Usage("step called before reset".into()));
        };
        if state.t >= self.spec.horizon {
            self.state = Some(state);
            return Err(Error::Usage("episode already terminated".into()));
        }

        // One uniform per feature, then one for the reward.
        let mut next = state.features.clone();
        for (i, f) in next.iter_mut().enumerate() {
            let p = self.increment_prob(i, action, state.hidden_h);
            let u: f64 = self.rng.random();
            if u < p {
                *f += 1.0;
            }
        }
        let p_reward = self.reward_prob(&state.features, action, state.hidden_h);
        let u: f64 = self.rng.random();
        let reward = if u < p_reward { 1.0 } else { 0.0 };

        let t = state.t + 1;
        let done = t == self.spec.horizon;
        self.state = Some(EnvState {
            features: next.clone(),
            hidden_h: state.hidden_h,
            t,
        });
        Ok((next, reward, done))
    }

    /// Reset and play one full episode with `policy`.
    pub fn rollout_with(&mut self, policy: &mut RandomPolicy, episode_id: u64) -> Episode {
        let start = self.reset();
        let mut transitions = Vec::with_capacity(self.spec.horizon);
        let mut state = start.features;
        for t in 0..self.spec.horizon {
            let action = policy.act();
            let (next_state, reward, _) = self
                .step(action)
                .expect("episode cannot terminate before its horizon");
            transitions.push(Transition {
                episode_id,
                t,
                state: std::mem::replace(&mut state, next_state.clone()),
                action,
                reward,
                next_state,
            });
        }
        Episode {
            episode_id,
            hidden_h: start.hidden_h,
            transitions,
        }
    }

    pub fn rollout_episode(&mut self, policy_seed: u64) -> Episode {
        let mut policy = RandomPolicy::new(policy_seed);
        self.rollout_with(&mut policy, 0)
    }
}

/// Constraint on a set of significant features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetExpectation {
    Empty,
    NonEmpty,
    All,
    Exactly(BTreeSet<usize>),
}

impl SetExpectation {
    pub fn matches(&self, set: &BTreeSet<usize>, d: usize) -> bool {
        match self {
            SetExpectation::Empty => set.is_empty(),
            SetExpectation::NonEmpty => !set.is_empty(),
            SetExpectation::All => set.len() == d && set.iter().all(|&i| i < d),
            SetExpectation::Exactly(want) => set == want,
        }
    }
}

/// What a correct analysis of an environment should report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedPattern {
    pub env_id: u8,
    pub reward_features: SetExpectation,
    /// Expectation on the offset action-sensitivity significant set.
    pub action_features: SetExpectation,
    pub outcome: Outcome,
}

pub fn expected_significance(env_id: u8) -> Result<ExpectedPattern> {
    use SetExpectation::*;
    let only_f0 = || Exactly(BTreeSet::from([0]));
    let (reward_features, action_features, outcome) = match env_id {
        1 | 2 => (Empty, Empty, Outcome::NoRewardSignal),
        3 => (Empty, All, Outcome::NoRewardSignal),
        4 => (only_f0(), Empty, Outcome::NoActionControl),
        5 => (only_f0(), All, Outcome::PotentiallySuitable),
        6 => (NonEmpty, Empty, Outcome::NoActionControl),
        7 => (All, All, Outcome::PotentiallySuitable),
        other => {
            return Err(Error::Config(format!(
                "unknown env_id {other} (expected 1..={NUM_ENVS})"
            )))
        }
    };
    Ok(ExpectedPattern {
        env_id,
        reward_features,
        action_features,
        outcome,
    })
}
