//! Python bindings: datasets, simulation, training, rule evaluation and the
//! cross-study loop.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use preddir_core::simulate::{CovariateLaw, NonlinearForm, OutcomeModel, TreatmentEffect};
use preddir_core::{
    evaluate_rule, load_dataset, run_meta, train, write_dataset, Effect, EffectEstimate, Error,
    Method, OutcomeKind, PipelineConfig, Polarity, RuleEvaluation, ScenarioSpec, Scorer,
    TrainedModel, TrialDataset,
};

fn to_py(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_kind(outcome: &str) -> PyResult<OutcomeKind> {
    match outcome {
        "continuous" => Ok(OutcomeKind::Continuous),
        "survival" => Ok(OutcomeKind::Survival),
        other => Err(PyValueError::new_err(format!(
            "unknown outcome '{other}' (continuous or survival)"
        ))),
    }
}

#[pyclass(name = "Dataset", module = "preddir", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TrialDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a trial CSV; the outcome kind is detected from the header when omitted.
    #[staticmethod]
    #[pyo3(signature = (path, outcome=None))]
    fn load(path: &str, outcome: Option<&str>) -> PyResult<Self> {
        let kind = match outcome {
            Some(o) => parse_kind(o)?,
            None => preddir_core::data::detect_outcome_kind(path).map_err(to_py)?,
        };
        let inner = load_dataset(path, kind).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    /// Simulates a randomized trial. Returns (dataset, per-subject tau).
    #[staticmethod]
    #[pyo3(signature = (
        n, p, seed, effect="linear", beta=None, value=1.0, form="quadratic_z1",
        outcome="continuous", sigma=1.0, base_rate=1.0, censor_fraction=0.3,
        main_effect=None, study="study"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        n: usize,
        p: usize,
        seed: u64,
        effect: &str,
        beta: Option<Vec<f64>>,
        value: f64,
        form: &str,
        outcome: &str,
        sigma: f64,
        base_rate: f64,
        censor_fraction: f64,
        main_effect: Option<Vec<f64>>,
        study: &str,
    ) -> PyResult<(Self, Vec<f64>)> {
        let effect = match effect {
            "null" => TreatmentEffect::Null,
            "constant" => TreatmentEffect::Constant(value),
            "linear" => TreatmentEffect::Linear {
                beta: beta.unwrap_or_else(|| {
                    let mut b = vec![0.0; p];
                    if let Some(first) = b.first_mut() {
                        *first = 1.0;
                    }
                    b
                }),
            },
            "nonlinear" => TreatmentEffect::Nonlinear(form.parse::<NonlinearForm>().map_err(to_py)?),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown effect '{other}' (null, constant, linear, nonlinear)"
                )))
            }
        };
        let outcome = match parse_kind(outcome)? {
            OutcomeKind::Continuous => OutcomeModel::ContinuousGaussian { sigma },
            OutcomeKind::Survival => OutcomeModel::ExponentialSurvival {
                base_rate,
                censor_fraction,
            },
        };
        let spec = ScenarioSpec {
            n,
            p,
            covariate_law: CovariateLaw::StandardNormal,
            main_effect: main_effect.unwrap_or_else(|| vec![0.0; p]),
            effect,
            outcome,
            seed,
            study_label: study.to_string(),
        };
        let (inner, truth) = preddir_core::simulate(&spec).map_err(to_py)?;
        Ok((PyDataset { inner }, truth.tau))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| to_py(Error::Io(e)))?;
        write_dataset(&self.inner, file).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn study(&self) -> String {
        self.inner.study_label().to_string()
    }

    #[getter]
    fn outcome(&self) -> &'static str {
        self.inner.outcome_kind().as_str()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    fn covariates(&self) -> Vec<Vec<f64>> {
        self.inner.subjects().iter().map(|s| s.covariates.clone()).collect()
    }

    fn treatments(&self) -> Vec<bool> {
        self.inner.treatments()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(study={:?}, n={}, p={}, outcome={})",
            self.inner.study_label(),
            self.inner.n(),
            self.inner.p(),
            self.inner.outcome_kind().as_str()
        )
    }
}

fn effect_dict<'py>(py: Python<'py>, effect: &EffectEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match effect {
        EffectEstimate::Estimated(e) => {
            let (lo, hi) = e.interval();
            d.set_item("status", "ok")?;
            d.set_item("measure", e.measure())?;
            d.set_item("estimate", e.estimate())?;
            d.set_item("ci_low", lo)?;
            d.set_item("ci_high", hi)?;
            match e {
                Effect::HazardRatio(r) => {
                    d.set_item("log_hr", r.log_hr)?;
                    d.set_item("se", r.se_log_hr)?;
                }
                Effect::MeanDifference(r) => d.set_item("se", r.se)?,
            }
        }
        EffectEstimate::Failed { reason } => {
            d.set_item("status", "failed")?;
            d.set_item("reason", reason)?;
        }
    }
    Ok(d)
}

fn evaluation_dict<'py>(py: Python<'py>, ev: &RuleEvaluation) -> PyResult<Bound<'py, PyDict>> {
    let d = effect_dict(py, &ev.effect)?;
    d.set_item("n_test", ev.n_test)?;
    d.set_item("n_assigned_treatment", ev.n_assigned_treatment)?;
    d.set_item("n_concordant_treated", ev.n_concordant_treated)?;
    d.set_item("n_concordant_control", ev.n_concordant_control)?;
    Ok(d)
}

#[pyclass(name = "Model", module = "preddir", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("invalid model json: {e}")))?;
        Ok(PyModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn method(&self) -> &'static str {
        match self.inner.rule.scorer {
            Scorer::Linear(_) => "linear",
            Scorer::Kernel(_) => "kernel",
        }
    }

    /// Leading direction for linear models, `None` for kernel models.
    #[getter]
    fn direction(&self) -> Option<Vec<f64>> {
        match &self.inner.rule.scorer {
            Scorer::Linear(m) => m.directions.first().cloned(),
            Scorer::Kernel(_) => None,
        }
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.rule.k
    }

    #[setter]
    fn set_k(&mut self, k: f64) {
        self.inner.rule.k = k;
    }

    #[getter]
    fn polarity(&self) -> &'static str {
        match self.inner.rule.polarity {
            Polarity::GreaterTreats => "greater",
            Polarity::LesserTreats => "lesser",
        }
    }

    #[setter]
    fn set_polarity(&mut self, polarity: &str) -> PyResult<()> {
        self.inner.rule.polarity = polarity.parse().map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    #[getter]
    fn training_scores(&self) -> Vec<f64> {
        self.inner.training_scores.clone()
    }

    #[getter]
    fn contrasts(&self) -> Vec<f64> {
        self.inner.contrasts.contrast.clone()
    }

    fn score(&self, z: Vec<f64>) -> PyResult<f64> {
        self.inner.rule.scorer.score(&z).map_err(to_py)
    }

    fn assign(&self, z: Vec<f64>) -> PyResult<bool> {
        self.inner.rule.assign(&z).map_err(to_py)
    }

    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        if data.inner.covariate_names() != self.inner.covariate_names.as_slice()
            || data.inner.outcome_kind() != self.inner.outcome_kind
        {
            return Err(PyValueError::new_err(
                "test data does not match the model's covariates or outcome kind",
            ));
        }
        let ev = evaluate_rule(&self.inner.rule, &data.inner).map_err(to_py)?;
        evaluation_dict(py, &ev)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(method={}, p={}, k={}, polarity={})",
            self.method(),
            self.inner.covariate_names.len(),
            self.inner.rule.k,
            self.polarity()
        )
    }
}

fn config(
    method: &str,
    seed: u64,
    optimize: bool,
    n_trees: usize,
    k: f64,
    polarity: Option<&str>,
) -> PyResult<PipelineConfig> {
    let mut c = PipelineConfig::new(method.parse::<Method>().map_err(to_py)?, seed);
    c.optimize = optimize;
    c.forest.n_trees = n_trees;
    c.k = k;
    c.polarity = polarity.map(str::parse).transpose().map_err(to_py)?;
    Ok(c)
}

/// Imputes contrasts and fits a linear (SIR) or kernel treatment rule.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(name = "train", signature = (data, method="linear", seed=0, optimize=false, n_trees=500, k=0.0, polarity=None))]
fn py_train(
    py: Python<'_>,
    data: &PyDataset,
    method: &str,
    seed: u64,
    optimize: bool,
    n_trees: usize,
    k: f64,
    polarity: Option<&str>,
) -> PyResult<PyModel> {
    let c = config(method, seed, optimize, n_trees, k, polarity)?;
    let inner = py.detach(|| train(&data.inner, &c)).map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Trains on each study and evaluates on the pooled others. Returns one dict
/// per (study, mode).
#[pyfunction]
#[pyo3(name = "meta", signature = (studies, method="linear", seed=0, optimize=false, n_trees=500))]
fn py_meta<'py>(
    py: Python<'py>,
    studies: Vec<PyDataset>,
    method: &str,
    seed: u64,
    optimize: bool,
    n_trees: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = config(method, seed, optimize, n_trees, 0.0, None)?;
    let data: Vec<TrialDataset> = studies.into_iter().map(|s| s.inner).collect();
    let result = py.detach(|| run_meta(&data, &c)).map_err(to_py)?;
    result
        .runs
        .iter()
        .map(|run| {
            let d = match &run.evaluation {
                Some(ev) => evaluation_dict(py, ev)?,
                None => {
                    let d = PyDict::new(py);
                    d.set_item("status", "failed")?;
                    d.set_item("reason", run.error.clone().unwrap_or_default())?;
                    d
                }
            };
            d.set_item("study", &run.study)?;
            d.set_item("mode", run.mode.as_str())?;
            if let Some(dir) = &run.direction {
                d.set_item("direction", dir.clone())?;
            }
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn preddir(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(py_train, m)?)?;
    m.add_function(wrap_pyfunction!(py_meta, m)?)?;
    Ok(())
}
