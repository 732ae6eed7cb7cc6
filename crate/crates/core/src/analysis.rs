//! Ensemble feature analysis.
//!
//! Two ensembles are trained on the same data: the original one and a
//! baseline whose training actions are shuffled within each mini-batch.
//! On evaluation batches we measure, per state feature,
//!
//! * reward contribution: increase of reward MAE when the feature column
//!   is replaced by its batch mean;
//! * action sensitivity: affinity-weighted absolute change of the
//!   component means when the batch's actions are shuffled.
//!
//! The baseline's sensitivity is subtracted sample-by-sample from the
//! original's, and a percentile rule over the `N * num_eval_batches`
//! samples decides which features are significant.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{batches, shuffle_actions_within_batch, BatchPolicy, Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::mdn::{self, fit, ModelConfig, ModelParams, MdnOutput, Real};
use crate::rng::derive;

/// Anything that predicts reward and a next-state mixture.
pub trait WorldModel: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, state: &[f64], action: u8) -> Result<MdnOutput>;
}

impl<T: Real> WorldModel for ModelParams<T> {
    fn dim(&self) -> usize {
        self.config.d
    }

    fn predict(&self, state: &[f64], action: u8) -> Result<MdnOutput> {
        mdn::forward(self, state, action, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Original,
    ShuffledBaseline,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub kind: EnsembleKind,
    pub models: Vec<ModelParams<f32>>,
    pub seeds: Vec<u64>,
    pub loss_curves: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Double-precision copies for analysis.
    pub fn to_f64(&self) -> Vec<ModelParams<f64>> {
        self.models.iter().map(|m| m.cast()).collect()
    }
}

/// Seed of ensemble member `index`.
pub fn member_seed(base_seed: u64, index: usize) -> u64 {
    derive(base_seed, index as u64)
}

/// Train `n` models, member `j` seeded with `member_seed(base_seed, j)`.
/// Members train in parallel on the current rayon pool.
pub fn train_ensemble(
    ds: &Dataset,
    config: &ModelConfig,
    n: usize,
    base_seed: u64,
    shuffle_actions: bool,
) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::Config("ensemble size N must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..n).map(|j| member_seed(base_seed, j)).collect();
    let trained: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| train_member(ds, config, base_seed, j, shuffle_actions))
        .collect::<Result<_>>()?;
    let (models, loss_curves) = trained
        .into_iter()
        .map(|t| (t.params, t.loss_curve))
        .unzip();
    Ok(Ensemble {
        kind: if shuffle_actions {
            EnsembleKind::ShuffledBaseline
        } else {
            EnsembleKind::Original
        },
        models,
        seeds,
        loss_curves,
    })
}

/// Train ensemble member `index` alone.
pub fn train_member(
    ds: &Dataset,
    config: &ModelConfig,
    base_seed: u64,
    index: usize,
    shuffle_actions: bool,
) -> Result<mdn::Trained<f32>> {
    let cfg = ModelConfig {
        seed: member_seed(base_seed, index),
        ..config.clone()
    };
    fit::<f32>(ds, &cfg, shuffle_actions).map_err(|e| e.for_model(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    RewardContribution,
    ActionSensitivity,
    OffsetActionSensitivity,
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatKind::RewardContribution => "reward_contribution",
            StatKind::ActionSensitivity => "action_sensitivity",
            StatKind::OffsetActionSensitivity => "offset_action_sensitivity",
        })
    }
}

/// Per-feature samples. `values[i][j * num_batches + b]` is the statistic
/// of feature `i` for model `j` on evaluation batch `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatPopulation {
    pub kind: StatKind,
    pub num_models: usize,
    pub num_batches: usize,
    pub values: Vec<Vec<f64>>,
}

impl StatPopulation {
    pub fn num_features(&self) -> usize {
        self.values.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_models * self.num_batches
    }

    fn from_columns(
        kind: StatKind,
        d: usize,
        num_models: usize,
        num_batches: usize,
        columns: Vec<Vec<f64>>,
    ) -> Self {
        let values = (0..d)
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        Self {
            kind,
            num_models,
            num_batches,
            values,
        }
    }

    /// CSV with one row per feature and one column per (model, batch) sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for j in 0..self.num_models {
            for b in 0..self.num_batches {
                out.push_str(&format!(",m{j}_b{b}"));
            }
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn eval_batches(eval: &Dataset, batch_size: usize) -> Result<Vec<MiniBatch>> {
    if eval.transitions.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    batches(eval, batch_size, None, BatchPolicy::DropRemainder)
}

fn mean_abs_reward_error<M: WorldModel>(model: &M, batch: &MiniBatch, states: &[f64]) -> Result<f64> {
    let d = batch.d;
    let mut total = 0.0;
    for row in 0..batch.len() {
        let out = model.predict(&states[row * d..(row + 1) * d], batch.actions[row])?;
        total += (out.r_hat - batch.rewards[row]).abs();
    }
    Ok(total / batch.len() as f64)
}

/// Reward contribution of every feature on one batch: MAE with the feature
/// column set to its batch mean, minus the unperturbed MAE.
pub fn reward_contribution_for_batch<M: WorldModel>(model: &M, batch: &MiniBatch) -> Result<Vec<f64>> {
    let d = batch.d;
    let base = mean_abs_reward_error(model, batch, &batch.states)?;
    let mut perturbed = batch.states.clone();
    (0..d)
        .map(|i| {
            let mean = (0..batch.len()).map(|r| batch.states[r * d + i]).sum::<f64>()
                / batch.len() as f64;
            for r in 0..batch.len() {
                perturbed[r * d + i] = mean;
            }
            let mae = mean_abs_reward_error(model, batch, &perturbed)?;
            for r in 0..batch.len() {
                perturbed[r * d + i] = batch.states[r * d + i];
            }
            Ok(mae - base)
        })
        .collect()
}

/// Action sensitivity of every feature on one batch, given the shuffled
/// actions `shuffled`:
/// `sum_rows sum_k (alpha_k(s,a) + alpha_k(s,a')) / 2 * |mu_k(s,a) - mu_k(s,a')|`.
pub fn action_sensitivity_for_batch<M: WorldModel>(
    model: &M,
    batch: &MiniBatch,
    shuffled: &[u8],
) -> Result<Vec<f64>> {
    let d = batch.d;
    let mut acc = vec![0.0; d];
    for row in 0..batch.len() {
        let (a, a_bar) = (batch.actions[row], shuffled[row]);
        if a == a_bar {
            continue;
        }
        let s = batch.state(row);
        let orig = model.predict(s, a)?;
        let shuf = model.predict(s, a_bar)?;
        accumulate_sensitivity(&orig, &shuf, &mut acc);
    }
    Ok(acc)
}

pub(crate) fn accumulate_sensitivity(orig: &MdnOutput, shuf: &MdnOutput, acc: &mut [f64]) {
    for k in 0..orig.num_components() {
        let w = 0.5 * (orig.alpha[k] + shuf.alpha[k]);
        for ((a, m0), m1) in acc.iter_mut().zip(orig.mu_k(k)).zip(shuf.mu_k(k)) {
            *a += w * (m0 - m1).abs();
        }
    }
}

/// Evaluate `stat(model j, batch b)` for every pair, in parallel, and
/// assemble the population in (model, batch) order.
fn population<M, F>(kind: StatKind, models: &[M], batches: &[MiniBatch], stat: F) -> Result<StatPopulation>
where
    M: WorldModel,
    F: Fn(&M, usize, &MiniBatch) -> Result<Vec<f64>> + Sync,
{
    if models.is_empty() {
        return Err(Error::Config("ensemble is empty".into()));
    }
    let d = models[0].dim();
    let nb = batches.len();
    let columns: Vec<Vec<f64>> = (0..models.len() * nb)
        .into_par_iter()
        .map(|idx| stat(&models[idx / nb], idx % nb, &batches[idx % nb]))
        .collect::<Result<_>>()?;
    Ok(StatPopulation::from_columns(kind, d, models.len(), nb, columns))
}

pub fn reward_contribution_batches<M: WorldModel>(
    models: &[M],
    batches: &[MiniBatch],
) -> Result<StatPopulation> {
    population(StatKind::RewardContribution, models, batches, |m, _, b| {
        reward_contribution_for_batch(m, b)
    })
}

/// Shuffled actions for evaluation batch `b`; one permutation per batch,
/// shared by every model.
pub fn shuffled_eval_actions(batches: &[MiniBatch], shuffle_seed: u64) -> Vec<Vec<u8>> {
    batches
        .iter()
        .enumerate()
        .map(|(b, batch)| shuffle_actions_within_batch(batch, derive(shuffle_seed, b as u64)).actions)
        .collect()
}

pub fn action_sensitivity_batches<M: WorldModel>(
    models: &[M],
    batches: &[MiniBatch],
    shuffled: &[Vec<u8>],
) -> Result<StatPopulation> {
    if shuffled.len() != batches.len() {
        return Err(Error::Analysis("one shuffled action vector per batch required".into()));
    }
    population(StatKind::ActionSensitivity, models, batches, |m, b, batch| {
        action_sensitivity_for_batch(m, batch, &shuffled[b])
    })
}

pub fn reward_contribution(ens: &Ensemble, eval: &Dataset, batch_size: usize) -> Result<StatPopulation> {
    if ens.kind != EnsembleKind::Original {
        return Err(Error::Analysis(
            "reward contribution is measured on the original ensemble".into(),
        ));
    }
    let bs = eval_batches(eval, batch_size)?;
    reward_contribution_batches(&ens.to_f64(), &bs)
}

pub fn action_sensitivity(
    ens: &Ensemble,
    eval: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<StatPopulation> {
    let bs = eval_batches(eval, batch_size)?;
    let shuffled = shuffled_eval_actions(&bs, shuffle_seed);
    action_sensitivity_batches(&ens.to_f64(), &bs, &shuffled)
}

/// `actual - baseline`, paired by (model, batch).
pub fn offset_sensitivity(actual: &StatPopulation, baseline: &StatPopulation) -> Result<StatPopulation> {
    let same_shape = actual.num_models == baseline.num_models
        && actual.num_batches == baseline.num_batches
        && actual.values.len() == baseline.values.len()
        && actual
            .values
            .iter()
            .zip(&baseline.values)
            .all(|(a, b)| a.len() == b.len());
    if !same_shape {
        return Err(Error::Analysis(format!(
            "population shapes differ: {}x{}x{} vs {}x{}x{}",
            actual.values.len(),
            actual.num_models,
            actual.num_batches,
            baseline.values.len(),
            baseline.num_models,
            baseline.num_batches
        )));
    }
    Ok(StatPopulation {
        kind: StatKind::OffsetActionSensitivity,
        num_models: actual.num_models,
        num_batches: actual.num_batches,
        values: actual
            .values
            .iter()
            .zip(&baseline.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect(),
    })
}

/// `q`-th percentile (0..=100) of sorted data, linearly interpolated
/// between closest ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

/// Percentile level(s) for the significance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Global(f64),
    PerFeature(Vec<f64>),
}

impl Level {
    /// Global level with individual features overridden.
    pub fn with_overrides(global: f64, d: usize, overrides: &[(usize, f64)]) -> Self {
        let mut v = vec![global; d];
        for &(i, x) in overrides {
            if i < d {
                v[i] = x;
            }
        }
        Level::PerFeature(v)
    }

    fn resolve(&self, d: usize) -> Result<Vec<f64>> {
        let levels = match self {
            Level::Global(x) => vec![*x; d],
            Level::PerFeature(v) if v.len() == d => v.clone(),
            Level::PerFeature(v) => {
                return Err(Error::Analysis(format!(
                    "{} per-feature percentile levels for {d} features",
                    v.len()
                )))
            }
        };
        if let Some(bad) = levels.iter().find(|x| !(**x > 0.0 && **x < 100.0)) {
            return Err(Error::Analysis(format!(
                "percentile level {bad} outside (0, 100)"
            )));
        }
        Ok(levels)
    }
}

/// How the X-percentile rule is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileConvention {
    /// Significant iff the ascending X-th percentile is above 0.
    Ascending,
    /// Significant iff the lower box edge of the central X% is above 0:
    /// the (100 - X)-th ascending percentile, i.e. at least X% of the
    /// samples are positive. Raising X can only remove significance.
    #[default]
    LowerEdge,
}

impl PercentileConvention {
    /// Ascending percentile that is compared against 0 for level `x`.
    pub fn quantile(self, x: f64) -> f64 {
        match self {
            PercentileConvention::Ascending => x,
            PercentileConvention::LowerEdge => 100.0 - x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSignificance {
    pub feature: usize,
    /// Requested level X.
    pub level: f64,
    /// Ascending percentile actually evaluated.
    pub quantile: f64,
    pub percentile_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub kind: StatKind,
    pub convention: PercentileConvention,
    pub features: Vec<FeatureSignificance>,
}

impl SignificanceReport {
    pub fn significant(&self) -> BTreeSet<usize> {
        self.features
            .iter()
            .filter(|f| f.significant)
            .map(|f| f.feature)
            .collect()
    }
}

/// Mark feature `i` significant iff the `level_i`-th percentile of its
/// samples is strictly positive.
pub fn percentile_significance(pop: &StatPopulation, level: &Level) -> Result<SignificanceReport> {
    significance(pop, level, PercentileConvention::Ascending)
}

/// Percentile rule under an explicit convention.
pub fn significance(
    pop: &StatPopulation,
    level: &Level,
    convention: PercentileConvention,
) -> Result<SignificanceReport> {
    let d = pop.num_features();
    if d == 0 || pop.values.iter().any(|v| v.is_empty()) {
        return Err(Error::Analysis("empty population".into()));
    }
    let levels = level.resolve(d)?;
    let features = pop
        .values
        .iter()
        .zip(levels)
        .enumerate()
        .map(|(feature, (vals, level))| {
            let quantile = convention.quantile(level);
            let percentile_value = percentile(vals, quantile);
            FeatureSignificance {
                feature,
                level,
                quantile,
                percentile_value,
                significant: percentile_value > 0.0,
            }
        })
        .collect();
    Ok(SignificanceReport {
        kind: pop.kind,
        convention,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// No state feature predicts reward; a bandit formulation at best.
    NoRewardSignal,
    /// Reward-predictive features exist but actions cannot move them.
    NoActionControl,
    PotentiallySuitable,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::NoRewardSignal => "NoRewardSignal",
            Outcome::NoActionControl => "NoActionControl",
            Outcome::PotentiallySuitable => "PotentiallySuitable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub reward_features: BTreeSet<usize>,
    pub actionable_features: BTreeSet<usize>,
}

pub fn decide_verdict(reward: &SignificanceReport, offset_action: &SignificanceReport) -> Verdict {
    let reward_features = reward.significant();
    if reward_features.is_empty() {
        return Verdict {
            outcome: Outcome::NoRewardSignal,
            reward_features,
            actionable_features: BTreeSet::new(),
        };
    }
    let actionable_features: BTreeSet<usize> = reward_features
        .intersection(&offset_action.significant())
        .copied()
        .collect();
    let outcome = if actionable_features.is_empty() {
        Outcome::NoActionControl
    } else {
        Outcome::PotentiallySuitable
    };
    Verdict {
        outcome,
        reward_features,
        actionable_features,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub batch_size: usize,
    pub percentile: Level,
    pub convention: PercentileConvention,
    /// Evaluation-action shuffles for the original ensemble.
    pub shuffle_seed: u64,
    /// Evaluation-action shuffles for the baseline ensemble.
    pub baseline_shuffle_seed: u64,
}

/// Everything the decision flow produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnalysis {
    pub reward: StatPopulation,
    pub action: StatPopulation,
    pub baseline_action: StatPopulation,
    pub offset: StatPopulation,
    pub reward_report: SignificanceReport,
    pub action_report: SignificanceReport,
    pub verdict: Verdict,
}

/// Full feature analysis: reward contribution on the original ensemble,
/// action sensitivity on both, the paired offset, significance and verdict.
pub fn analyze(
    original: &Ensemble,
    baseline: &Ensemble,
    eval: &Dataset,
    settings: &AnalysisSettings,
) -> Result<FeatureAnalysis> {
    if original.kind != EnsembleKind::Original || baseline.kind != EnsembleKind::ShuffledBaseline {
        return Err(Error::Analysis(
            "expected an original and a shuffled-baseline ensemble".into(),
        ));
    }
    if original.len() != baseline.len() {
        return Err(Error::Analysis(format!(
            "ensemble sizes differ: {} original vs {} baseline",
            original.len(),
            baseline.len()
        )));
    }
    let bs = eval_batches(eval, settings.batch_size)?;
    let orig = original.to_f64();
    let base = baseline.to_f64();
    let reward = reward_contribution_batches(&orig, &bs)?;
    let action = action_sensitivity_batches(&orig, &bs, &shuffled_eval_actions(&bs, settings.shuffle_seed))?;
    let baseline_action = action_sensitivity_batches(
        &base,
        &bs,
        &shuffled_eval_actions(&bs, settings.baseline_shuffle_seed),
    )?;
    let offset = offset_sensitivity(&action, &baseline_action)?;
    let reward_report = significance(&reward, &settings.percentile, settings.convention)?;
    let action_report = significance(&offset, &settings.percentile, settings.convention)?;
    let verdict = decide_verdict(&reward_report, &action_report);
    Ok(FeatureAnalysis {
        reward,
        action,
        baseline_action,
        offset,
        reward_report,
        action_report,
        verdict,
    })
}
