//! Python bindings for listener-scale.

use std::collections::BTreeMap;

use listener_scale::comparison::{comparison_function, evaluate_system_level};
use listener_scale::dataset::{
    augment_mean_listener, load_features_csv, load_ratings_csv, system_ground_truth,
    write_features_csv, write_ratings_csv, AttributeName, MEAN_LISTENER,
};
use listener_scale::experiment::{
    fit_scorer, merge_json, run_experiment, ExperimentConfig, ExperimentReport, ScorerSettings,
};
use listener_scale::metrics;
use listener_scale::scorer::{Checkpoint, Regime, ScorerModel};
use listener_scale::simulator::{generate_dataset, SimConfig, SimOutput};
use listener_scale::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_json(s: &str, what: &str) -> PyResult<serde_json::Value> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn attribute_index(
    ds: &listener_scale::dataset::Dataset,
    attribute: Option<&str>,
) -> PyResult<usize> {
    match attribute {
        None => Ok(0),
        Some(a) => {
            let name = AttributeName::new(a).map_err(py_err)?;
            ds.attribute_index(&name).map_err(py_err)
        }
    }
}

/// Rating table with attached utterance features.
#[pyclass(module = "listener_scale_py")]
struct Dataset {
    inner: listener_scale::dataset::Dataset,
}

#[pymethods]
impl Dataset {
    /// Loads `ratings.csv` and `features.csv`; `attributes=None` adopts the header's.
    #[staticmethod]
    #[pyo3(signature = (ratings, features, attributes=None, likert=5))]
    fn load(
        ratings: &str,
        features: &str,
        attributes: Option<Vec<String>>,
        likert: u32,
    ) -> PyResult<Self> {
        let attrs = attributes
            .unwrap_or_default()
            .into_iter()
            .map(AttributeName::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let ds = load_ratings_csv(ratings, &attrs, likert).map_err(py_err)?;
        let inner = ds
            .with_features(load_features_csv(features).map_err(py_err)?)
            .map_err(py_err)?;
        Ok(Dataset { inner })
    }

    fn save(&self, ratings: &str, features: &str) -> PyResult<()> {
        write_ratings_csv(&self.inner, ratings).map_err(py_err)?;
        write_features_csv(self.inner.features(), features).map_err(py_err)
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.inner
            .attributes()
            .iter()
            .map(|a| a.to_string())
            .collect()
    }

    #[getter]
    fn n_ratings(&self) -> usize {
        self.inner.ratings().len()
    }

    fn utterance_ids(&self) -> Vec<String> {
        self.inner
            .utterance_ids()
            .into_iter()
            .map(String::from)
            .collect()
    }

    fn system_ids(&self) -> Vec<String> {
        self.inner
            .system_ids()
            .into_iter()
            .map(String::from)
            .collect()
    }

    fn listener_ids(&self) -> Vec<String> {
        self.inner
            .listener_ids()
            .into_iter()
            .map(String::from)
            .collect()
    }

    fn feature(&self, utterance_id: &str) -> Option<Vec<f64>> {
        self.inner.feature(utterance_id).map(<[f64]>::to_vec)
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    /// Returns a copy with one mean-listener rating per utterance appended.
    fn augment_mean_listener(&self) -> PyResult<Self> {
        Ok(Dataset {
            inner: augment_mean_listener(&self.inner).map_err(py_err)?,
        })
    }

    /// Mean rating per system, ignoring the mean listener.
    #[pyo3(signature = (attribute=None))]
    fn system_ground_truth(&self, attribute: Option<&str>) -> PyResult<BTreeMap<String, f64>> {
        let a = attribute_index(&self.inner, attribute)?;
        system_ground_truth(&self.inner, &self.inner.attributes()[a]).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.ratings().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(ratings={}, utterances={}, attributes={:?})",
            self.inner.ratings().len(),
            self.inner.utterance_ids().len(),
            self.attributes()
        )
    }
}

/// Output of one simulator run.
#[pyclass(module = "listener_scale_py")]
struct Simulation {
    out: SimOutput,
    config: SimConfig,
}

#[pymethods]
impl Simulation {
    #[getter]
    fn dataset(&self) -> Dataset {
        Dataset {
            inner: self.out.dataset.clone(),
        }
    }

    /// True score per system for attribute `attribute` (by index).
    #[pyo3(signature = (attribute=0))]
    fn system_truth(&self, attribute: usize) -> PyResult<BTreeMap<String, f64>> {
        if attribute >= self.out.truth.attributes.len() {
            return Err(PyValueError::new_err(format!(
                "attribute index {attribute} out of range"
            )));
        }
        Ok(self.out.truth.system_scores(attribute))
    }

    /// True per-attribute scores keyed by utterance id.
    fn utterance_truth(&self) -> BTreeMap<String, Vec<f64>> {
        self.out
            .truth
            .utterances
            .iter()
            .map(|(k, v)| (k.clone(), v.scores.clone()))
            .collect()
    }

    #[getter]
    fn text_channel(&self) -> Option<usize> {
        self.out.text_channel
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Generates a dataset from a preset (`"sqa"` or `"cser"`), optionally
/// overriding preset fields with a JSON object.
#[pyfunction]
#[pyo3(signature = (preset="sqa", seed=0, overrides=None))]
fn simulate(preset: &str, seed: u64, overrides: Option<&str>) -> PyResult<Simulation> {
    let mut config = SimConfig::preset(preset, seed).map_err(py_err)?;
    if let Some(o) = overrides {
        let mut value =
            serde_json::to_value(&config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        merge_json(&mut value, &parse_json(o, "overrides")?);
        config = serde_json::from_value(value)
            .map_err(|e| PyValueError::new_err(format!("overrides: {e}")))?;
        config.validate().map_err(py_err)?;
    }
    let out = generate_dataset(&config).map_err(py_err)?;
    Ok(Simulation { out, config })
}

/// A trained scorer. Models with a listener embedding score through the
/// mean listener's row; the others use the unified scale.
#[pyclass(module = "listener_scale_py")]
struct Scorer {
    model: ScorerModel,
    checkpoint: Checkpoint,
    listener: Option<usize>,
    loss_curve: Vec<f64>,
}

impl Scorer {
    fn from_checkpoint(checkpoint: Checkpoint, loss_curve: Vec<f64>) -> PyResult<Self> {
        let model = ScorerModel::from_checkpoint(&checkpoint).map_err(py_err)?;
        let listener = if model.config().use_listener_embedding {
            let idx = checkpoint
                .listeners
                .iter()
                .position(|l| l == MEAN_LISTENER)
                .ok_or_else(|| {
                    PyValueError::new_err("embedding model has no mean-listener row to score with")
                })?;
            Some(idx)
        } else {
            None
        };
        Ok(Scorer {
            model,
            checkpoint,
            listener,
            loss_curve,
        })
    }
}

#[pymethods]
impl Scorer {
    /// Trains on `dataset`. `regime` is `"CL"`, `"DAS-MSE"` or `"DAS-CCC"`;
    /// `settings` is a JSON object overriding the scorer defaults.
    #[staticmethod]
    #[pyo3(signature = (dataset, regime="CL", mean_listener=false, listener_embedding=false, settings=None, seed=0))]
    fn fit(
        py: Python<'_>,
        dataset: &Dataset,
        regime: &str,
        mean_listener: bool,
        listener_embedding: bool,
        settings: Option<&str>,
        seed: u64,
    ) -> PyResult<Self> {
        let regime = Regime::parse(regime).map_err(py_err)?;
        let mut value =
            serde_json::to_value(ScorerSettings::default()).expect("settings serialize");
        if let Some(s) = settings {
            merge_json(&mut value, &parse_json(s, "settings")?);
        }
        let settings: ScorerSettings = serde_json::from_value(value)
            .map_err(|e| PyValueError::new_err(format!("settings: {e}")))?;
        let ds = &dataset.inner;
        let fitted = py
            .detach(|| {
                fit_scorer(
                    ds,
                    regime,
                    mean_listener,
                    listener_embedding,
                    &settings,
                    seed,
                )
            })
            .map_err(py_err)?;
        Ok(Scorer {
            model: fitted.model,
            checkpoint: fitted.checkpoint,
            listener: fitted.inference_listener,
            loss_curve: fitted.loss_curve,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Scorer::from_checkpoint(Checkpoint::load(path).map_err(py_err)?, Vec::new())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.checkpoint.save(path).map_err(py_err)
    }

    #[getter]
    fn loss_curve(&self) -> Vec<f64> {
        self.loss_curve.clone()
    }

    #[getter]
    fn uses_listener_embedding(&self) -> bool {
        self.listener.is_some()
    }

    /// Per-attribute scores for one feature vector.
    fn predict(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.forward(&features, self.listener).map_err(py_err)
    }

    /// Per-attribute scores for every utterance of `dataset`.
    fn predict_dataset(&self, dataset: &Dataset) -> PyResult<BTreeMap<String, Vec<f64>>> {
        dataset
            .inner
            .utterance_ids()
            .into_iter()
            .map(|u| {
                let x = dataset
                    .inner
                    .feature(u)
                    .ok_or_else(|| PyValueError::new_err(format!("no features for {u}")))?;
                Ok((
                    u.to_string(),
                    self.model.forward(x, self.listener).map_err(py_err)?,
                ))
            })
            .collect()
    }

    /// System scores from balanced cross-system comparisons.
    #[pyo3(signature = (dataset, attribute=None, pairs_per_system_pair=5, seed=0))]
    fn score_systems(
        &self,
        dataset: &Dataset,
        attribute: Option<&str>,
        pairs_per_system_pair: usize,
        seed: u64,
    ) -> PyResult<BTreeMap<String, f64>> {
        let a = attribute_index(&dataset.inner, attribute)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        evaluate_system_level(
            &self.model,
            &dataset.inner,
            a,
            pairs_per_system_pair,
            self.listener,
            &mut rng,
        )
        .map_err(py_err)
    }
}

/// Result of a regime matrix run.
#[pyclass(module = "listener_scale_py")]
struct Report {
    inner: ExperimentReport,
}

#[pymethods]
impl Report {
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.regimes.iter().map(|r| r.label.clone()).collect()
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.inner.attributes.clone()
    }

    /// Per-run SRCC values of one regime on one attribute.
    #[pyo3(signature = (label, attribute=None))]
    fn srcc_runs(&self, label: &str, attribute: Option<&str>) -> PyResult<Vec<f64>> {
        let r = self
            .inner
            .regime(label)
            .ok_or_else(|| PyValueError::new_err(format!("no regime {label:?}")))?;
        let attr = attribute.map_or_else(|| self.inner.attributes[0].clone(), String::from);
        r.runs
            .iter()
            .map(|x| {
                x.scores
                    .get(&attr)
                    .map(|s| s.srcc)
                    .ok_or_else(|| PyValueError::new_err(format!("no attribute {attr:?}")))
            })
            .collect()
    }

    /// `{"srcc_mean", "srcc_sd", "lcc_mean", "lcc_sd"}` for one regime and attribute.
    #[pyo3(signature = (label, attribute=None))]
    fn summary(&self, label: &str, attribute: Option<&str>) -> PyResult<BTreeMap<String, f64>> {
        let r = self
            .inner
            .regime(label)
            .ok_or_else(|| PyValueError::new_err(format!("no regime {label:?}")))?;
        let attr = attribute.map_or_else(|| self.inner.attributes[0].clone(), String::from);
        let s = r
            .summary
            .get(&attr)
            .ok_or_else(|| PyValueError::new_err(format!("no attribute {attr:?}")))?;
        Ok(BTreeMap::from([
            ("srcc_mean".to_string(), s.srcc_mean),
            ("srcc_sd".to_string(), s.srcc_sd),
            ("lcc_mean".to_string(), s.lcc_mean),
            ("lcc_sd".to_string(), s.lcc_sd),
        ]))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn to_markdown(&self) -> String {
        self.inner.to_markdown()
    }
}

/// Runs a regime matrix. `config` is a JSON object layered on the task
/// preset (`"task": "sqa"` or `"cser"`).
#[pyfunction]
#[pyo3(signature = (config="{}", jobs=1))]
fn run_matrix(py: Python<'_>, config: &str, jobs: usize) -> PyResult<Report> {
    let cfg =
        ExperimentConfig::from_json_overrides(&parse_json(config, "config")?).map_err(py_err)?;
    let (inner, _) = py.detach(|| run_experiment(&cfg, jobs)).map_err(py_err)?;
    Ok(Report { inner })
}

#[pyfunction]
#[pyo3(name = "comparison_function")]
fn py_comparison_function(sc_1: f64, sc_2: f64) -> f64 {
    comparison_function(sc_1, sc_2)
}

#[pyfunction]
fn srcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::srcc(&x, &y).map_err(py_err)
}

#[pyfunction]
fn lcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::lcc(&x, &y).map_err(py_err)
}

#[pyfunction]
fn ccc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::ccc(&x, &y).map_err(py_err)
}

/// `{"srcc", "lcc", "ccc", "n"}` for predicted vs reference values.
#[pyfunction]
fn summarize(py: Python<'_>, predicted: Vec<f64>, reference: Vec<f64>) -> PyResult<Py<PyAny>> {
    let s = metrics::summarize(&predicted, &reference).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("srcc", s.srcc)?;
    d.set_item("lcc", s.lcc)?;
    d.set_item("ccc", s.ccc)?;
    d.set_item("n", s.n)?;
    Ok(d.into_any().unbind())
}

#[pymodule]
fn listener_scale_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Simulation>()?;
    m.add_class::<Scorer>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(py_comparison_function, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(lcc, m)?)?;
    m.add_function(wrap_pyfunction!(ccc, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
