//! Python bindings for `vaeci_core`.
//!
//! Configs and reports cross the boundary as plain dicts; matrices as nested
//! lists of floats.

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vaeci_core::data::{Dataset as CoreDataset, FeatureSchema};
use vaeci_core::evaluation;
use vaeci_core::model::{ModelGraph, ProbeUpstream};
use vaeci_core::synthetic::{self, SyntheticConfig};
use vaeci_core::train::{self, TrainConfig};

create_exception!(vaeci, VaeciError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    VaeciError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned + Default>(value: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(value) = value else {
        return Ok(T::default());
    };
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(err("rows of x have different lengths"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Covariates, treatment bits, factual outcomes and optional ground truth.
#[pyclass(module = "vaeci")]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (x, t, y, feature_names=None, y_cf=None, mu0=None, mu1=None))]
    fn new(
        x: Vec<Vec<f64>>,
        t: Vec<u8>,
        y: Vec<f64>,
        feature_names: Option<Vec<String>>,
        y_cf: Option<Vec<f64>>,
        mu0: Option<Vec<f64>>,
        mu1: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let x = matrix(x)?;
        let names = feature_names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        let schema = FeatureSchema::continuous(names);
        let inner = CoreDataset::new(x, t, y, schema)
            .and_then(|d| d.with_truth(y_cf, mu0, mu1))
            .map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Dataset { inner: CoreDataset::read_csv(path).map_err(err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, features={}, treated={})",
            self.inner.len(),
            self.inner.width(),
            self.inner.treated_count()
        )
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.x)
    }

    #[getter]
    fn t(&self) -> Vec<u8> {
        self.inner.t.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn y_cf(&self) -> Option<Vec<f64>> {
        self.inner.y_cf.clone()
    }

    #[getter]
    fn mu0(&self) -> Option<Vec<f64>> {
        self.inner.mu0.clone()
    }

    #[getter]
    fn mu1(&self) -> Option<Vec<f64>> {
        self.inner.mu1.clone()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.schema.names.clone()
    }

    #[getter]
    fn metadata(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.metadata.clone()
    }

    /// Rows at `indices`, in that order.
    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(err(format!("row {i} out of range")));
        }
        Ok(Dataset { inner: self.inner.subset(&indices) })
    }
}

/// A trained (or freshly initialized) Series, Parallel or Hybrid model.
#[pyclass(module = "vaeci")]
struct Model {
    inner: ModelGraph,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model { inner: ModelGraph::load(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn method(&self) -> String {
        evaluation::method_label(&self.inner)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Names of the distributions the model parameterizes.
    fn distributions(&self) -> Vec<String> {
        self.inner.distributions()
    }

    /// Predicted potential outcomes `(y0, y1)` for raw covariate rows.
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let x = matrix(x)?;
        py.detach(|| self.inner.predict_outcomes(&x)).map_err(err)
    }

    /// Held-out metrics of the model on `data`.
    fn evaluate<'py>(&self, py: Python<'py>, data: &Dataset) -> PyResult<Bound<'py, PyAny>> {
        let metrics = py.detach(|| evaluation::evaluate(&self.inner, &data.inner)).map_err(err)?;
        to_py(py, &metrics)
    }

    /// Mean activation table of the latent encoders on the factor dummies.
    /// `upstream` is "posterior_means" or "zeros".
    #[pyo3(signature = (upstream="posterior_means"))]
    fn probe<'py>(&self, py: Python<'py>, upstream: &str) -> PyResult<Bound<'py, PyAny>> {
        let upstream = match upstream {
            "posterior_means" => ProbeUpstream::PosteriorMeans,
            "zeros" => ProbeUpstream::Zeros,
            other => return Err(err(format!("unknown probe upstream `{other}`"))),
        };
        let table = evaluation::probe(&self.inner, upstream).map_err(err)?;
        to_py(py, &table)
    }

    fn __repr__(&self) -> String {
        format!("Model({})", evaluation::method_label(&self.inner))
    }
}

/// Samples the synthetic benchmark. Returns the dataset and a dict with the
/// true propensities and noiseless outcome means.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate<'py>(py: Python<'py>, config: Option<&Bound<'py, PyDict>>) -> PyResult<(Dataset, Bound<'py, PyDict>)> {
    let config: SyntheticConfig = from_py(config)?;
    let (data, truth) = py.detach(|| synthetic::generate(&config)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("propensity", truth.propensity)?;
    out.set_item("mu0", truth.mu0)?;
    out.set_item("mu1", truth.mu1)?;
    out.set_item("theta", truth.theta.to_vec())?;
    out.set_item("vartheta0", truth.vartheta0.to_vec())?;
    out.set_item("vartheta1", truth.vartheta1.to_vec())?;
    Ok((Dataset { inner: data }, out))
}

/// Splits `data`, trains with early selection and returns the model, the
/// metrics report and the loss curves.
#[pyfunction]
#[pyo3(signature = (data, config=None))]
fn fit<'py>(
    py: Python<'py>,
    data: &Dataset,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Model, Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let config: TrainConfig = from_py(config)?;
    config.validate().map_err(err)?;
    let outcome = py.detach(|| train::train(&config, &data.inner)).map_err(err)?;
    let report = to_py(py, &outcome.report)?;
    let curves = to_py(py, &outcome.curves)?;
    Ok((Model { inner: outcome.model }, report, curves))
}

#[pyfunction]
fn pehe(y1_hat: Vec<f64>, y0_hat: Vec<f64>, y1: Vec<f64>, y0: Vec<f64>) -> PyResult<f64> {
    evaluation::pehe(&y1_hat, &y0_hat, &y1, &y0).map_err(err)
}

#[pyfunction]
fn ate_bias(y1_hat: Vec<f64>, y0_hat: Vec<f64>, y1: Vec<f64>, y0: Vec<f64>) -> PyResult<f64> {
    evaluation::ate_bias(&y1_hat, &y0_hat, &y1, &y0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, alpha=0.05))]
fn welch_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    let result = evaluation::welch_t_test(&a, &b, alpha).map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
fn vaeci(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VaeciError", m.py().get_type::<VaeciError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(pehe, m)?)?;
    m.add_function(wrap_pyfunction!(ate_bias, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    Ok(())
}
