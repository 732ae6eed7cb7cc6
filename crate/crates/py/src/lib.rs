//! Python bindings: environments, datasets, single world models and the
//! generate/train/analyze pipeline. Structured results come back as plain
//! dicts (via JSON) so they match the files the CLI writes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use mdpval::analysis::{decide_verdict, FeatureSignificance, SignificanceReport, StatKind};
use mdpval::config::{Overrides, RunConfig};
use mdpval::dataset::{collect, RemainderPolicy};
use mdpval::mdn::{forward, load_checkpoint, save_checkpoint, train};
use mdpval::{pipeline, Dataset, Env, EnvSpec, ModelConfig, ModelParams};

create_exception!(mdpval_py, MdpvalError, PyException);

fn err(e: mdpval::Error) -> PyErr {
    MdpvalError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MdpvalError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accept either a JSON string or anything `json.dumps` understands.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

#[pyclass(name = "Env", module = "mdpval_py")]
struct PyEnv {
    inner: Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (env_id, seed = 0, d = 10, horizon = 10))]
    fn new(env_id: u8, seed: u64, d: usize, horizon: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Env::new(EnvSpec::new(env_id, d, horizon, seed)).map_err(err)?,
        })
    }

    /// Start an episode; returns the (all-zero) initial features.
    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset().features
    }

    /// Returns `(next_features, reward, done)`.
    fn step(&mut self, action: u8) -> PyResult<(Vec<f64>, f64, bool)> {
        self.inner.step(action).map_err(err)
    }

    #[getter]
    fn t(&self) -> Option<usize> {
        self.inner.state().map(|s| s.t)
    }

    #[getter]
    fn hidden_h(&self) -> Option<u8> {
        self.inner.state().and_then(|s| s.hidden_h)
    }
}

#[pyclass(name = "Dataset", module = "mdpval_py")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Random-policy transitions from a built-in environment.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (env_id, num_batches, batch_size, seed = 0, policy_seed = 1, d = 10, horizon = 10))]
    fn collect(
        py: Python<'_>,
        env_id: u8,
        num_batches: usize,
        batch_size: usize,
        seed: u64,
        policy_seed: u64,
        d: usize,
        horizon: usize,
    ) -> PyResult<Self> {
        let inner = py
            .detach(|| {
                let mut env = Env::new(EnvSpec::new(env_id, d, horizon, seed))?;
                collect(&mut env, num_batches, batch_size, policy_seed, RemainderPolicy::PadEpisodes)
            })
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// Read a `.jsonl` (optionally `.gz`) transition file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.transitions.len()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.transitions.iter().map(|t| t.state.clone()).collect()
    }

    fn actions(&self) -> Vec<u8> {
        self.inner.transitions.iter().map(|t| t.action).collect()
    }

    fn rewards(&self) -> Vec<f64> {
        self.inner.transitions.iter().map(|t| t.reward).collect()
    }

    fn next_states(&self) -> Vec<Vec<f64>> {
        self.inner.transitions.iter().map(|t| t.next_state.clone()).collect()
    }
}

/// One trained mixture-density world model.
#[pyclass(name = "Model", module = "mdpval_py")]
struct PyModel {
    params: ModelParams<f32>,
    loss_curve: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Train on `dataset`. `config` holds model settings as a dict or JSON
    /// string; missing fields take the defaults and `d` follows the data.
    #[staticmethod]
    #[pyo3(signature = (dataset, config = None))]
    fn train(py: Python<'_>, dataset: &PyDataset, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(c) => serde_json::from_str::<ModelConfig>(&json_text(c)?)
                .map_err(|e| MdpvalError::new_err(format!("bad model config: {e}")))?,
            None => ModelConfig::default(),
        };
        cfg.d = dataset.inner.d;
        let ds = &dataset.inner;
        let t = py.detach(|| train(ds, &cfg)).map_err(err)?;
        Ok(Self {
            params: t.params,
            loss_curve: t.loss_curve,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = load_checkpoint(path).map_err(err)?;
        Ok(Self {
            params: c.params,
            loss_curve: c.loss_curve,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &self.loss_curve, path).map_err(err)
    }

    /// Returns `{"r_hat", "alpha", "mu", "sigma"}`; `mu` and `sigma` are K x d.
    fn predict<'py>(&self, py: Python<'py>, state: Vec<f64>, action: u8) -> PyResult<Bound<'py, PyAny>> {
        let out = forward(&self.params, &state, action, None).map_err(err)?;
        let d = self.params.config.d;
        let rows = |v: &[f64]| v.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        #[derive(Serialize)]
        struct Prediction {
            r_hat: f64,
            alpha: Vec<f64>,
            mu: Vec<Vec<f64>>,
            sigma: Vec<Vec<f64>>,
        }
        to_py(
            py,
            &Prediction {
                r_hat: out.r_hat,
                mu: rows(&out.mu),
                sigma: rows(&out.sigma),
                alpha: out.alpha,
            },
        )
    }

    #[getter]
    fn loss_curve(&self) -> Vec<f64> {
        self.loss_curve.clone()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.params.config)
    }
}

fn run_config(
    out: PathBuf,
    config: Option<&Bound<'_, PyAny>>,
    env_id: Option<u8>,
    reduced: bool,
    seed: Option<u64>,
    percentile: Option<f64>,
) -> PyResult<RunConfig> {
    let saved = out.join(pipeline::CONFIG_FILE);
    let mut cfg = match config {
        Some(c) => RunConfig::from_json(&json_text(c)?).map_err(err)?,
        None if saved.is_file() => RunConfig::load(&saved).map_err(err)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        env: env_id,
        out: Some(out),
        reduced,
        percentile,
        seed,
    });
    cfg.resolve().map_err(err)
}

/// Generate, train and analyze into `out`, skipping up-to-date stages.
/// Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (out, config = None, env_id = None, reduced = false, seed = None, percentile = None))]
fn run_all<'py>(
    py: Python<'py>,
    out: PathBuf,
    config: Option<&Bound<'py, PyAny>>,
    env_id: Option<u8>,
    reduced: bool,
    seed: Option<u64>,
    percentile: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = run_config(out, config, env_id, reduced, seed, percentile)?;
    let r = py.detach(|| pipeline::cmd_run_all(&cfg)).map_err(err)?;
    to_py(py, &r.report)
}

/// Re-run only the analysis on existing checkpoints in `out`.
#[pyfunction]
#[pyo3(signature = (out, config = None, percentile = None))]
fn analyze<'py>(
    py: Python<'py>,
    out: PathBuf,
    config: Option<&Bound<'py, PyAny>>,
    percentile: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = run_config(out, config, None, false, None, percentile)?;
    let r = py.detach(|| pipeline::cmd_analyze(&cfg)).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn expected_significance<'py>(py: Python<'py>, env_id: u8) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &mdpval::expected_significance(env_id).map_err(err)?)
}

/// Verdict for given significant-feature sets over `d` features:
/// reward-predictive and offset action-sensitive.
#[pyfunction]
fn verdict<'py>(
    py: Python<'py>,
    d: usize,
    reward_features: BTreeSet<usize>,
    action_features: BTreeSet<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = |kind, set: &BTreeSet<usize>| SignificanceReport {
        kind,
        convention: Default::default(),
        features: (0..d)
            .map(|i| FeatureSignificance {
                feature: i,
                level: 75.0,
                quantile: 25.0,
                percentile_value: if set.contains(&i) { 1.0 } else { 0.0 },
                significant: set.contains(&i),
            })
            .collect(),
    };
    let v = decide_verdict(
        &report(StatKind::RewardContribution, &reward_features),
        &report(StatKind::OffsetActionSensitivity, &action_features),
    );
    to_py(py, &v)
}

#[pymodule]
fn mdpval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MdpvalError", m.py().get_type::<MdpvalError>())?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(expected_significance, m)?)?;
    m.add_function(wrap_pyfunction!(verdict, m)?)?;
    Ok(())
}
