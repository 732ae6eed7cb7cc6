//! Run configuration: one JSON file, command-line overrides on top.
//!
//! Every seed is explicit in the resolved configuration. Seeds the user
//! leaves out are derived from `seeds.master` with [`rng::derive`] and the
//! tags in [`rng::stream`]; the baseline ensemble reuses the original
//! ensemble's base seed unless set, so member `j` of both ensembles shares
//! initialization, batch order and dropout masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisSettings, Level, PercentileConvention};
use crate::dataset::RemainderPolicy;
use crate::env::{EnvSpec, NUM_ENVS};
use crate::error::{Error, Result};
use crate::mdn::ModelConfig;
use crate::rng::{derive, stream};

/// Ensemble size, train steps, batch size and eval batches of the
/// quick profile.
pub const REDUCED_PROFILE: (usize, usize, usize, usize) = (5, 300, 250, 50);

/// Where transitions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Env {
        env_id: u8,
        #[serde(default = "default_dim")]
        d: usize,
        #[serde(default = "default_dim")]
        horizon: usize,
    },
    Files {
        train: PathBuf,
        eval: PathBuf,
    },
}

fn default_dim() -> usize {
    10
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Env {
            env_id: 1,
            d: 10,
            horizon: 10,
        }
    }
}

impl DataSource {
    pub fn env_id(&self) -> Option<u8> {
        match self {
            DataSource::Env { env_id, .. } => Some(*env_id),
            DataSource::Files { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Models per ensemble (N).
    pub ensemble_size: usize,
    pub num_eval_batches: usize,
    /// Percentile level X, global or one per feature.
    pub percentile: Level,
    pub convention: PercentileConvention,
    /// Shade the expected pattern of built-in environments in the plots.
    pub overlay_expected: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 10,
            num_eval_batches: 200,
            percentile: Level::Global(75.0),
            convention: PercentileConvention::default(),
            overlay_expected: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    pub train_env: Option<u64>,
    pub train_policy: Option<u64>,
    pub eval_env: Option<u64>,
    pub eval_policy: Option<u64>,
    pub original_ensemble: Option<u64>,
    pub baseline_ensemble: Option<u64>,
    pub analysis_shuffle: Option<u64>,
    pub baseline_analysis_shuffle: Option<u64>,
}

/// Seeds with every derivation applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSet {
    pub train_env: u64,
    pub train_policy: u64,
    pub eval_env: u64,
    pub eval_policy: u64,
    pub original_ensemble: u64,
    pub baseline_ensemble: u64,
    pub analysis_shuffle: u64,
    pub baseline_analysis_shuffle: u64,
}

impl Seeds {
    pub fn resolved(&self) -> SeedSet {
        let m = self.master;
        let original_ensemble = self
            .original_ensemble
            .unwrap_or_else(|| derive(m, stream::ORIGINAL_ENSEMBLE));
        SeedSet {
            train_env: self.train_env.unwrap_or_else(|| derive(m, stream::TRAIN_ENV)),
            train_policy: self.train_policy.unwrap_or_else(|| derive(m, stream::TRAIN_POLICY)),
            eval_env: self.eval_env.unwrap_or_else(|| derive(m, stream::EVAL_ENV)),
            eval_policy: self.eval_policy.unwrap_or_else(|| derive(m, stream::EVAL_POLICY)),
            original_ensemble,
            baseline_ensemble: self.baseline_ensemble.unwrap_or(original_ensemble),
            analysis_shuffle: self
                .analysis_shuffle
                .unwrap_or_else(|| derive(m, stream::ANALYSIS_SHUFFLE)),
            baseline_analysis_shuffle: self
                .baseline_analysis_shuffle
                .unwrap_or_else(|| derive(m, stream::BASELINE_ANALYSIS_SHUFFLE)),
        }
    }

    fn fill(&mut self) {
        let s = self.resolved();
        self.train_env = Some(s.train_env);
        self.train_policy = Some(s.train_policy);
        self.eval_env = Some(s.eval_env);
        self.eval_policy = Some(s.eval_policy);
        self.original_ensemble = Some(s.original_ensemble);
        self.baseline_ensemble = Some(s.baseline_ensemble);
        self.analysis_shuffle = Some(s.analysis_shuffle);
        self.baseline_analysis_shuffle = Some(s.baseline_analysis_shuffle);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: DataSource,
    pub model: ModelConfig,
    pub analysis: AnalysisConfig,
    /// Episode/batch alignment when collecting. Table 1's batch size of
    /// 1024 does not split into 10-step episodes, hence the default.
    pub remainder: RemainderPolicy,
    pub seeds: Seeds,
    pub output_dir: Option<PathBuf>,
    /// Apply the quick profile (see [`REDUCED_PROFILE`]).
    pub reduced_scale: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: DataSource::default(),
            model: ModelConfig::default(),
            analysis: AnalysisConfig::default(),
            remainder: RemainderPolicy::PadEpisodes,
            seeds: Seeds::default(),
            output_dir: None,
            reduced_scale: false,
        }
    }
}

/// Command-line flags that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub env: Option<u8>,
    pub out: Option<PathBuf>,
    pub reduced: bool,
    pub percentile: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(id) = ov.env {
            self.env = match self.env {
                DataSource::Env { d, horizon, .. } => DataSource::Env {
                    env_id: id,
                    d,
                    horizon,
                },
                DataSource::Files { .. } => DataSource::Env {
                    env_id: id,
                    d: default_dim(),
                    horizon: default_dim(),
                },
            };
        }
        if let Some(out) = &ov.out {
            self.output_dir = Some(out.clone());
        }
        if ov.reduced {
            self.reduced_scale = true;
        }
        if let Some(x) = ov.percentile {
            self.analysis.percentile = Level::Global(x);
        }
        if let Some(seed) = ov.seed {
            // a new master seed re-derives everything
            self.seeds = Seeds {
                master: seed,
                ..Seeds::default()
            };
        }
    }

    /// Apply the profile, fill in derived seeds and validate.
    pub fn resolve(mut self) -> Result<Self> {
        if self.reduced_scale {
            let (n, steps, bs, eval) = REDUCED_PROFILE;
            self.analysis.ensemble_size = n;
            self.model.train_batches = steps;
            self.model.batch_size = bs;
            self.analysis.num_eval_batches = eval;
        }
        if let DataSource::Env { env_id, d, horizon } = self.env {
            EnvSpec::new(env_id, d, horizon, 0).validate()?;
            self.model.d = d;
        }
        self.seeds.fill();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let DataSource::Env { env_id, .. } = self.env {
            if !(1..=NUM_ENVS).contains(&env_id) {
                return Err(Error::Config(format!("unknown env_id {env_id}")));
            }
        }
        if self.analysis.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size N must be >= 1".into()));
        }
        if self.analysis.num_eval_batches == 0 || self.model.train_batches == 0 {
            return Err(Error::Config("batch counts must be positive".into()));
        }
        let levels = match &self.analysis.percentile {
            Level::Global(x) => vec![*x],
            Level::PerFeature(v) => {
                if v.len() != self.model.d {
                    return Err(Error::Config(format!(
                        "{} per-feature percentiles for d = {}",
                        v.len(),
                        self.model.d
                    )));
                }
                v.clone()
            }
        };
        if let Some(x) = levels.iter().find(|x| !(**x > 0.0 && **x < 100.0)) {
            return Err(Error::Config(format!("percentile {x} outside (0, 100)")));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::Usage("no output directory: pass --out or set output_dir".into()))
    }

    pub fn analysis_settings(&self) -> AnalysisSettings {
        let s = self.seeds.resolved();
        AnalysisSettings {
            batch_size: self.model.batch_size,
            percentile: self.analysis.percentile.clone(),
            convention: self.analysis.convention,
            shuffle_seed: s.analysis_shuffle,
            baseline_shuffle_seed: s.baseline_analysis_shuffle,
        }
    }
}
