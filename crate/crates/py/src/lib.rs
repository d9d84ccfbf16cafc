//! Python bindings for `cfeval`.
//!
//! Results that are plain records (estimates, reports, policies) are returned
//! as Python dicts decoded from their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use cfeval::corrections::{self, PostprocessOptions};
use cfeval::curves::{self, EvalMode, ModeMetric};
use cfeval::datagen::{self, Row};
use cfeval::estimators::{self, MeanMethod};
use cfeval::fairness::{self, BootstrapConfig};
use cfeval::glm::{self, FeatureMatrix, FitConfig};
use cfeval::nuisance::{self, NuisanceOptions};
use cfeval::{io, GeneratorParams, Positivity, PositivityMode};

fn err(e: cfeval::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn positivity(clip: f64, winsorize: bool) -> Positivity {
    Positivity {
        clip,
        mode: if winsorize {
            PositivityMode::Winsorize
        } else {
            PositivityMode::Reject
        },
    }
}

fn parse_mode(mode: &str) -> PyResult<EvalMode> {
    mode.parse().map_err(err)
}

/// A dataset of rows `(z, a, t, y)` with optional potential outcomes `y0, y1`.
#[pyclass(name = "Dataset", module = "cfeval_py", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: datagen::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (z, a, t, y, y0=None, y1=None))]
    fn new(
        z: Vec<f64>,
        a: Vec<u8>,
        t: Vec<u8>,
        y: Vec<u8>,
        y0: Option<Vec<u8>>,
        y1: Option<Vec<u8>>,
    ) -> PyResult<Self> {
        let n = z.len();
        for (name, len) in [("a", a.len()), ("t", t.len()), ("y", y.len())] {
            if len != n {
                return Err(PyValueError::new_err(format!(
                    "column {name} has {len} rows, expected {n}"
                )));
            }
        }
        for (name, col) in [("y0", &y0), ("y1", &y1)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(PyValueError::new_err(format!(
                        "column {name} has {} rows, expected {n}",
                        c.len()
                    )));
                }
            }
        }
        let rows: Vec<Row> = (0..n)
            .map(|i| Row {
                z: z[i],
                a: a[i],
                y0: y0.as_ref().map(|c| c[i]),
                y1: y1.as_ref().map(|c| c[i]),
                t: t[i],
                y: y[i],
            })
            .collect();
        Ok(Self {
            inner: datagen::Dataset::from_rows(&rows).map_err(err)?,
        })
    }

    /// Draw from the synthetic generator.
    #[staticmethod]
    #[pyo3(signature = (n=100_000, c=0.1, k=1.6, seed=0, offset=-0.5))]
    fn generate(py: Python<'_>, n: usize, c: f64, k: f64, seed: u64, offset: f64) -> PyResult<Self> {
        let params = GeneratorParams {
            n,
            c,
            k,
            offset,
            seed,
        };
        let inner = py.detach(|| datagen::generate(&params)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = io::read_dataset(&path).map_err(err)?;
        Ok(Self { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        io::write_dataset(&path, &self.inner, None).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, oracle={})",
            self.inner.len(),
            self.inner.has_oracle()
        )
    }

    #[getter]
    fn z(&self) -> Vec<f64> {
        self.inner.z.clone()
    }

    #[getter]
    fn a(&self) -> Vec<u8> {
        self.inner.a.clone()
    }

    #[getter]
    fn t(&self) -> Vec<u8> {
        self.inner.t.clone()
    }

    #[getter]
    fn y(&self) -> Vec<u8> {
        self.inner.y.clone()
    }

    #[getter]
    fn y0(&self) -> Option<Vec<u8>> {
        self.inner.y0.clone()
    }

    #[getter]
    fn y1(&self) -> Option<Vec<u8>> {
        self.inner.y1.clone()
    }

    #[getter]
    fn has_oracle(&self) -> bool {
        self.inner.has_oracle()
    }

    /// Sample moments of the observed and potential outcomes.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &datagen::summarize(&self.inner).map_err(err)?)
    }

    /// Seeded shuffle split into `(train, test)`.
    #[pyo3(signature = (train_fraction=0.5, seed=0))]
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (_, train, test) = self.inner.split(train_fraction, seed).map_err(err)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    fn select(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("row index {bad} out of range")));
        }
        Ok(Self {
            inner: self.inner.select(&indices),
        })
    }
}

/// Per-row nuisance scores aligned with one dataset.
#[pyclass(name = "Nuisances", module = "cfeval_py", from_py_object)]
#[derive(Clone)]
pub struct PyNuisances {
    inner: nuisance::NuisanceSet,
}

#[pymethods]
impl PyNuisances {
    #[new]
    #[pyo3(signature = (propensity, cf_scores, obs_scores=None))]
    fn new(propensity: Vec<f64>, cf_scores: Vec<f64>, obs_scores: Option<Vec<f64>>) -> Self {
        Self {
            inner: nuisance::NuisanceSet {
                propensity,
                cf_scores,
                obs_scores: obs_scores.clone(),
                provenance: nuisance::Provenance {
                    propensity: "python".into(),
                    counterfactual: "python".into(),
                    observational: obs_scores.map(|_| "python".into()),
                },
            },
        }
    }

    /// Fit models on `train` and score `target`.
    #[staticmethod]
    #[pyo3(signature = (train, target, include_treatment=false, shift_correction=false, group_blind=false, clip=0.01))]
    fn fit(
        py: Python<'_>,
        train: &PyDataset,
        target: &PyDataset,
        include_treatment: bool,
        shift_correction: bool,
        group_blind: bool,
        clip: f64,
    ) -> PyResult<Self> {
        let opts = NuisanceOptions {
            include_treatment,
            shift_correction,
            clip,
            group_blind,
        };
        let inner = py
            .detach(|| {
                let models =
                    nuisance::NuisanceModels::fit(&train.inner, opts, &FitConfig::default())?;
                nuisance::attach_scores(&target.inner, &models)
            })
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// The generator's own conditional probabilities for every row.
    #[staticmethod]
    fn oracle(ds: &PyDataset) -> PyResult<Self> {
        let params = ds
            .inner
            .params
            .ok_or_else(|| PyValueError::new_err("dataset carries no generator parameters"))?;
        Ok(Self {
            inner: nuisance::NuisanceSet::oracle(&ds.inner, &params),
        })
    }

    #[getter]
    fn propensity(&self) -> Vec<f64> {
        self.inner.propensity.clone()
    }

    #[getter]
    fn cf_scores(&self) -> Vec<f64> {
        self.inner.cf_scores.clone()
    }

    #[getter]
    fn obs_scores(&self) -> Option<Vec<f64>> {
        self.inner.obs_scores.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Weighted logistic regression; returns the fitted model as a dict.
#[pyfunction]
#[pyo3(signature = (x, names, labels, weights=None, l2_penalty=0.0))]
fn fit_logistic<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    names: Vec<String>,
    labels: Vec<u8>,
    weights: Option<Vec<f64>>,
    l2_penalty: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let fm = FeatureMatrix::from_rows(&names, &x).map_err(err)?;
    let cfg = FitConfig {
        l2_penalty,
        ..FitConfig::default()
    };
    let model = glm::fit_logistic(&fm, &labels, weights.as_deref(), &cfg).map_err(err)?;
    to_py(py, &model)
}

#[pyfunction]
#[pyo3(signature = (ds, nuisances, clip=0.01, winsorize=false))]
fn pseudo_outcomes(
    ds: &PyDataset,
    nuisances: &PyNuisances,
    clip: f64,
    winsorize: bool,
) -> PyResult<Vec<f64>> {
    Ok(
        estimators::pseudo_outcomes(&ds.inner, &nuisances.inner, &positivity(clip, winsorize))
            .map_err(err)?
            .0,
    )
}

/// Estimate `E[Y0]` by `dr`, `plugin` or `ipw`.
#[pyfunction]
#[pyo3(signature = (ds, nuisances, method="dr", clip=0.01, winsorize=false))]
fn estimate_mean_y0<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    nuisances: &PyNuisances,
    method: &str,
    clip: f64,
    winsorize: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let method = match method {
        "dr" => MeanMethod::Dr,
        "plugin" => MeanMethod::Plugin,
        "ipw" => MeanMethod::Ipw,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    };
    let est = estimators::estimate_mean_y0(
        &ds.inner,
        &nuisances.inner,
        method,
        &positivity(clip, winsorize),
    )
    .map_err(err)?;
    to_py(py, &est)
}

/// One metric of `scores` under an evaluation mode (`observational`,
/// `control`, `dr` or `oracle`).
#[pyfunction]
#[pyo3(signature = (ds, scores, metric, mode="dr", nuisances=None, threshold=0.5, r1=0.0, r2=0.1, clip=0.01, winsorize=false))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    scores: Vec<f64>,
    metric: &str,
    mode: &str,
    nuisances: Option<&PyNuisances>,
    threshold: f64,
    r1: f64,
    r2: f64,
    clip: f64,
    winsorize: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let labels = glm::threshold_labels(&scores, threshold);
    let m = match metric {
        "base_rate" | "mean_y0" => ModeMetric::BaseRate,
        "tpr" => ModeMetric::Tpr(&labels),
        "fpr" => ModeMetric::Fpr(&labels),
        "precision" => ModeMetric::Precision(&labels),
        "calibration_bin" => ModeMetric::CalibrationBin {
            scores: &scores,
            r1,
            r2,
        },
        "gfnr" => ModeMetric::Gfnr(&scores),
        "gfpr" => ModeMetric::Gfpr(&scores),
        other => return Err(PyValueError::new_err(format!("unknown metric `{other}`"))),
    };
    let est = curves::metric_under_mode(
        m,
        parse_mode(mode)?,
        &ds.inner,
        nuisances.map(|n| &n.inner),
        &positivity(clip, winsorize),
    )
    .map_err(err)?;
    to_py(py, &est)
}

/// PR, ROC and calibration curves for `scores` under each mode.
#[pyfunction]
#[pyo3(signature = (ds, scores, modes=vec!["observational".to_string(), "control".to_string(), "dr".to_string(), "oracle".to_string()], nuisances=None, model="model", threshold_steps=100, n_bins=10, clip=0.01, winsorize=false))]
#[allow(clippy::too_many_arguments)]
fn curve_family<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    scores: Vec<f64>,
    modes: Vec<String>,
    nuisances: Option<&PyNuisances>,
    model: &str,
    threshold_steps: usize,
    n_bins: usize,
    clip: f64,
    winsorize: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let modes = modes
        .iter()
        .map(|m| parse_mode(m))
        .collect::<PyResult<Vec<_>>>()?;
    if threshold_steps == 0 {
        return Err(PyValueError::new_err("threshold_steps must be >= 1"));
    }
    let out = py
        .detach(|| {
            curves::curve_family(
                &modes,
                &ds.inner,
                nuisances.map(|n| &n.inner),
                &scores,
                &curves::threshold_grid(threshold_steps),
                n_bins,
                &positivity(clip, winsorize),
                model,
            )
        })
        .map_err(err)?;
    to_py(py, &out)
}

/// Group metrics, disparities and (with `balance`) balance residuals and
/// independence checks.
#[pyfunction]
#[pyo3(signature = (ds, scores, nuisances=None, threshold=0.5, cf_mode="oracle", balance=false, resamples=200, seed=0, clip=0.01, winsorize=false))]
#[allow(clippy::too_many_arguments)]
fn audit<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    scores: Vec<f64>,
    nuisances: Option<&PyNuisances>,
    threshold: f64,
    cf_mode: &str,
    balance: bool,
    resamples: usize,
    seed: u64,
    clip: f64,
    winsorize: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cf_mode = parse_mode(cf_mode)?;
    let boot = BootstrapConfig { resamples, seed };
    let report = py
        .detach(|| {
            fairness::audit(
                &ds.inner,
                nuisances.map(|n| &n.inner),
                &scores,
                threshold,
                cf_mode,
                &positivity(clip, winsorize),
                balance.then_some(&boot),
            )
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// Reweighing plan `w(a, y)` as a dict.
#[pyfunction]
fn kamiran_weights<'py>(py: Python<'py>, ds: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &corrections::kamiran_weights(&ds.inner).map_err(err)?)
}

/// Per-row reweighing weights.
#[pyfunction]
fn row_weights(ds: &PyDataset) -> PyResult<Vec<f64>> {
    Ok(corrections::kamiran_weights(&ds.inner)
        .map_err(err)?
        .row_weights(&ds.inner))
}

/// Mix scores with each group's base rate; returns `(adjusted, mixed, policy)`.
#[pyfunction]
#[pyo3(signature = (ds, scores, seed=0, grid_step=0.01, forced_lambda=None))]
fn postprocess<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    scores: Vec<f64>,
    seed: u64,
    grid_step: f64,
    forced_lambda: Option<(f64, f64)>,
) -> PyResult<(Vec<f64>, Vec<bool>, Bound<'py, PyAny>)> {
    let opts = PostprocessOptions {
        grid_step,
        forced_lambda: forced_lambda.map(|(a, b)| [a, b]),
    };
    let (mixed, policy) =
        corrections::postprocess_equalized_odds(&ds.inner, &scores, seed, &opts).map_err(err)?;
    Ok((mixed.scores, mixed.mixed, to_py(py, &policy)?))
}

#[pymodule]
fn cfeval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNuisances>()?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_outcomes, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mean_y0, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(curve_family, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(kamiran_weights, m)?)?;
    m.add_function(wrap_pyfunction!(row_weights, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    Ok(())
}
