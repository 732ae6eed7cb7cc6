//! Run orchestration: generate → train → analyze.
//!
//! A run directory holds
//!
//! ```text
//! config.json            resolved configuration
//! train.jsonl eval.jsonl datasets
//! checkpoints/           original_XX.ckpt, baseline_XX.ckpt, loss_curves.csv
//! report.json            verdict, significance reports, config echo
//! *.csv boxplots.svg     populations and plots
//! stages.json            per-stage input hashes and wall-clock seconds
//! ```
//!
//! `run_all` skips a stage when the hash of its inputs matches the one
//! recorded after its last successful run and its outputs are present.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    analyze, member_seed, train_member, Ensemble, EnsembleKind, FeatureAnalysis, SignificanceReport,
    Verdict,
};
use crate::config::{DataSource, RunConfig};
use crate::dataset::{collect, Dataset};
use crate::env::{expected_significance, make_env, EnvSpec, ExpectedPattern};
use crate::error::{Error, Result};
use crate::mdn::{load_checkpoint_expecting, save_checkpoint, ModelConfig};
use crate::plot::{render_boxplots, Panel};

pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOSS_CURVES_FILE: &str = "loss_curves.csv";
pub const REPORT_FILE: &str = "report.json";
pub const REWARD_CSV: &str = "reward_contribution.csv";
pub const ACTION_CSV: &str = "action_sensitivity.csv";
pub const OFFSET_CSV: &str = "offset_action_sensitivity.csv";
pub const SVG_FILE: &str = "boxplots.svg";
pub const STAGES_FILE: &str = "stages.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Train,
    Analyze,
}

impl Stage {
    fn key(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StageRecord {
    hash: String,
    seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StageLog(BTreeMap<String, StageRecord>);

impl StageLog {
    fn load(out: &Path) -> Self {
        fs::read(out.join(STAGES_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    fn record(out: &Path, stage: Stage, hash: String, seconds: f64) -> Result<()> {
        let mut log = Self::load(out);
        log.0.insert(stage.key().into(), StageRecord { hash, seconds });
        write(&out.join(STAGES_FILE), serde_json::to_string_pretty(&log)? + "\n")
    }

    fn hash_of(&self, stage: Stage) -> Option<&str> {
        self.0.get(stage.key()).map(|r| r.hash.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeeds {
    pub original: Vec<u64>,
    pub baseline: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCheck {
    pub outcome: bool,
    pub reward_features: bool,
    pub action_features: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub config: RunConfig,
    pub ensemble_seeds: EnsembleSeeds,
    pub verdict: Verdict,
    pub reward_report: SignificanceReport,
    /// Significance of the offset (actual minus baseline) action sensitivity.
    pub action_report: SignificanceReport,
    pub expected: Option<ExpectedPattern>,
    pub matches_expected: Option<PatternCheck>,
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per stage; the only non-reproducible field.
    pub timings: BTreeMap<String, f64>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_parts(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

pub fn checkpoint_path(out: &Path, kind: EnsembleKind, index: usize) -> PathBuf {
    let stem = match kind {
        EnsembleKind::Original => "original",
        EnsembleKind::ShuffledBaseline => "baseline",
    };
    out.join(CHECKPOINT_DIR).join(format!("{stem}_{index:02}.ckpt"))
}

fn checkpoint_paths(cfg: &RunConfig, out: &Path) -> Vec<PathBuf> {
    [EnsembleKind::Original, EnsembleKind::ShuffledBaseline]
        .into_iter()
        .flat_map(|k| (0..cfg.analysis.ensemble_size).map(move |j| checkpoint_path(out, k, j)))
        .collect()
}

fn ensemble_seeds(cfg: &RunConfig) -> EnsembleSeeds {
    let s = cfg.seeds.resolved();
    let n = cfg.analysis.ensemble_size;
    EnsembleSeeds {
        original: (0..n).map(|j| member_seed(s.original_ensemble, j)).collect(),
        baseline: (0..n).map(|j| member_seed(s.baseline_ensemble, j)).collect(),
    }
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write(&out.join(CONFIG_FILE), cfg.to_json())
}

// ---- hashes -------------------------------------------------------------

fn generate_hash(cfg: &RunConfig) -> Result<String> {
    let s = cfg.seeds.resolved();
    let source = match &cfg.env {
        DataSource::Env { .. } => json(&cfg.env),
        DataSource::Files { train, eval } => format!("{}:{}", file_hash(train)?, file_hash(eval)?),
    };
    Ok(hash_parts(&[
        source,
        json(&(cfg.model.d, cfg.model.train_batches, cfg.model.batch_size)),
        json(&(cfg.analysis.num_eval_batches, cfg.remainder)),
        json(&(s.train_env, s.train_policy, s.eval_env, s.eval_policy)),
    ]))
}

fn train_hash(cfg: &RunConfig, out: &Path) -> Result<String> {
    Ok(hash_parts(&[
        file_hash(&out.join(TRAIN_FILE))?,
        json(&ModelConfig {
            seed: 0,
            ..cfg.model.clone()
        }),
        json(&ensemble_seeds(cfg)),
    ]))
}

fn analyze_hash(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mut parts = vec![
        file_hash(&out.join(EVAL_FILE))?,
        json(&cfg.analysis),
        json(&cfg.analysis_settings()),
        json(&cfg.env.env_id()),
    ];
    for p in checkpoint_paths(cfg, out) {
        parts.push(file_hash(&p)?);
    }
    Ok(hash_parts(&parts))
}

// ---- stages -------------------------------------------------------------

/// Write `train.jsonl` and `eval.jsonl`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    write_config(cfg, out)?;
    let start = Instant::now();
    let hash = generate_hash(cfg)?;
    let (train, eval) = match &cfg.env {
        DataSource::Env { env_id, d, horizon } => {
            let s = cfg.seeds.resolved();
            let mut env = make_env(EnvSpec::new(*env_id, *d, *horizon, s.train_env))?;
            let train = collect(
                &mut env,
                cfg.model.train_batches,
                cfg.model.batch_size,
                s.train_policy,
                cfg.remainder,
            )?;
            let mut env = make_env(EnvSpec::new(*env_id, *d, *horizon, s.eval_env))?;
            let eval = collect(
                &mut env,
                cfg.analysis.num_eval_batches,
                cfg.model.batch_size,
                s.eval_policy,
                cfg.remainder,
            )?;
            (train, eval)
        }
        DataSource::Files { train, eval } => (Dataset::load(train)?, Dataset::load(eval)?),
    };
    for ds in [&train, &eval] {
        if ds.d != cfg.model.d {
            return Err(Error::Config(format!(
                "dataset has d = {}, model expects {}",
                ds.d, cfg.model.d
            )));
        }
    }
    train.save(out.join(TRAIN_FILE))?;
    eval.save(out.join(EVAL_FILE))?;
    StageLog::record(out, Stage::Generate, hash, start.elapsed().as_secs_f64())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("missing {}; {hint}", path.display())))
    }
}

/// Train both ensembles and write `2N` checkpoints plus loss curves.
/// A failing member does not stop the others; the call still errors.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    require(&out.join(TRAIN_FILE), "run `validate generate` first")?;
    require(&out.join(EVAL_FILE), "run `validate generate` first")?;
    write_config(cfg, out)?;
    let start = Instant::now();
    let hash = train_hash(cfg, out)?;
    let train = Dataset::load(out.join(TRAIN_FILE))?;
    ensure_dir(&out.join(CHECKPOINT_DIR))?;

    let s = cfg.seeds.resolved();
    let n = cfg.analysis.ensemble_size;
    let jobs: Vec<(EnsembleKind, usize)> = [EnsembleKind::Original, EnsembleKind::ShuffledBaseline]
        .into_iter()
        .flat_map(|k| (0..n).map(move |j| (k, j)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(kind, j)| {
            let (base, shuffle) = match kind {
                EnsembleKind::Original => (s.original_ensemble, false),
                EnsembleKind::ShuffledBaseline => (s.baseline_ensemble, true),
            };
            let t = train_member(&train, &cfg.model, base, j, shuffle)?;
            save_checkpoint(&t.params, &t.loss_curve, checkpoint_path(out, kind, j))?;
            Ok(t.loss_curve)
        })
        .collect();

    let mut failures = Vec::new();
    let mut curves = Vec::new();
    for ((kind, j), r) in jobs.iter().zip(results) {
        let name = format!(
            "{}_{j:02}",
            if *kind == EnsembleKind::Original { "original" } else { "baseline" }
        );
        match r {
            Ok(c) => curves.push((name, c)),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    write(&out.join(LOSS_CURVES_FILE), loss_curves_csv(&curves))?;
    if !failures.is_empty() {
        return Err(Error::Training {
            model: None,
            msg: format!(
                "{} of {} models failed: {}",
                failures.len(),
                jobs.len(),
                failures.join("; ")
            ),
        });
    }
    StageLog::record(out, Stage::Train, hash, start.elapsed().as_secs_f64())
}

fn loss_curves_csv(curves: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("step");
    for (name, _) in curves {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let steps = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for t in 0..steps {
        s.push_str(&t.to_string());
        for (_, c) in curves {
            s.push(',');
            if let Some(v) = c.get(t) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

fn load_ensemble(cfg: &RunConfig, out: &Path, kind: EnsembleKind, seeds: &[u64]) -> Result<Ensemble> {
    let mut models = Vec::with_capacity(seeds.len());
    let mut loss_curves = Vec::with_capacity(seeds.len());
    for (j, &seed) in seeds.iter().enumerate() {
        let path = checkpoint_path(out, kind, j);
        require(&path, "run `validate train` first")?;
        let ckpt = load_checkpoint_expecting(&path, &cfg.model)?;
        let expected = ModelConfig {
            seed,
            ..cfg.model.clone()
        };
        if ckpt.params.config != expected {
            return Err(Error::Checkpoint(format!(
                "{}: checkpoint/config mismatch (stored seed {}, expected {seed}); retrain",
                path.display(),
                ckpt.params.config.seed
            )));
        }
        models.push(ckpt.params);
        loss_curves.push(ckpt.loss_curve);
    }
    Ok(Ensemble {
        kind,
        models,
        seeds: seeds.to_vec(),
        loss_curves,
    })
}

/// Panels for the two statistics the verdict is based on.
pub fn render_analysis(fa: &FeatureAnalysis, expected: Option<&ExpectedPattern>) -> String {
    render_boxplots(&[
        Panel {
            title: "Reward contribution".into(),
            population: &fa.reward,
            report: &fa.reward_report,
            expected: expected.map(|e| &e.reward_features),
        },
        Panel {
            title: "Offset action sensitivity".into(),
            population: &fa.offset,
            report: &fa.action_report,
            expected: expected.map(|e| &e.action_features),
        },
    ])
}

/// Analyze the checkpoints, write report, CSVs and plots, and return the
/// report. The caller prints the verdict.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<RunReport> {
    let out = cfg.out_dir()?;
    require(&out.join(EVAL_FILE), "run `validate generate` first")?;
    write_config(cfg, out)?;
    let start = Instant::now();
    let hash = analyze_hash(cfg, out)?;
    let eval = Dataset::load(out.join(EVAL_FILE))?;
    if eval.d != cfg.model.d {
        return Err(Error::Config(format!(
            "eval dataset has d = {}, model expects {}",
            eval.d, cfg.model.d
        )));
    }
    let seeds = ensemble_seeds(cfg);
    let original = load_ensemble(cfg, out, EnsembleKind::Original, &seeds.original)?;
    let baseline = load_ensemble(cfg, out, EnsembleKind::ShuffledBaseline, &seeds.baseline)?;
    let fa = analyze(&original, &baseline, &eval, &cfg.analysis_settings())?;

    let expected = cfg.env.env_id().map(expected_significance).transpose()?;
    let overlay = expected.as_ref().filter(|_| cfg.analysis.overlay_expected);
    write(&out.join(REWARD_CSV), fa.reward.to_csv())?;
    write(&out.join(ACTION_CSV), fa.action.to_csv())?;
    write(&out.join(OFFSET_CSV), fa.offset.to_csv())?;
    write(&out.join(SVG_FILE), render_analysis(&fa, overlay))?;

    let d = cfg.model.d;
    let matches_expected = expected.as_ref().map(|e| PatternCheck {
        outcome: e.outcome == fa.verdict.outcome,
        reward_features: e.reward_features.matches(&fa.reward_report.significant(), d),
        action_features: e.action_features.matches(&fa.action_report.significant(), d),
    });
    let artifacts = [
        ("reward_contribution", REWARD_CSV),
        ("action_sensitivity", ACTION_CSV),
        ("offset_action_sensitivity", OFFSET_CSV),
        ("boxplots", SVG_FILE),
        ("train", TRAIN_FILE),
        ("eval", EVAL_FILE),
        ("loss_curves", LOSS_CURVES_FILE),
        ("checkpoints", CHECKPOINT_DIR),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();

    let seconds = start.elapsed().as_secs_f64();
    let mut timings: BTreeMap<String, f64> = StageLog::load(out)
        .0
        .into_iter()
        .filter(|(k, _)| k != Stage::Analyze.key())
        .map(|(k, r)| (k, r.seconds))
        .collect();
    timings.insert(Stage::Analyze.key().into(), seconds);

    let report = RunReport {
        tool: format!("mdpval {}", env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        ensemble_seeds: seeds,
        verdict: fa.verdict,
        reward_report: fa.reward_report,
        action_report: fa.action_report,
        expected,
        matches_expected,
        artifacts,
        timings,
    };
    write(&out.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    StageLog::record(out, Stage::Analyze, hash, seconds)?;
    Ok(report)
}

pub fn load_report(out: &Path) -> Result<RunReport> {
    let path = out.join(REPORT_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone)]
pub struct RunAll {
    pub report: RunReport,
    /// Stages that actually ran (the rest were up to date).
    pub ran: Vec<Stage>,
}

fn up_to_date(log: &StageLog, stage: Stage, hash: &str, outputs: &[PathBuf]) -> bool {
    log.hash_of(stage) == Some(hash) && outputs.iter().all(|p| p.is_file())
}

/// All three stages, skipping those whose inputs are unchanged.
pub fn cmd_run_all(cfg: &RunConfig) -> Result<RunAll> {
    let out = cfg.out_dir()?;
    ensure_dir(out)?;
    let mut ran = Vec::new();

    let log = StageLog::load(out);
    let gen_out = [out.join(TRAIN_FILE), out.join(EVAL_FILE)];
    if !up_to_date(&log, Stage::Generate, &generate_hash(cfg)?, &gen_out) {
        cmd_generate(cfg)?;
        ran.push(Stage::Generate);
    }

    let log = StageLog::load(out);
    let ckpts = checkpoint_paths(cfg, out);
    if !up_to_date(&log, Stage::Train, &train_hash(cfg, out)?, &ckpts) {
        cmd_train(cfg)?;
        ran.push(Stage::Train);
    }

    let log = StageLog::load(out);
    let analyze_out: Vec<PathBuf> = [REPORT_FILE, REWARD_CSV, ACTION_CSV, OFFSET_CSV, SVG_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let report = if up_to_date(&log, Stage::Analyze, &analyze_hash(cfg, out)?, &analyze_out) {
        load_report(out)?
    } else {
        ran.push(Stage::Analyze);
        cmd_analyze(cfg)?
    };
    write_config(cfg, out)?;
    Ok(RunAll { report, ran })
}
