//! Python bindings. Matrices cross the boundary as lists of rows; structured
//! reports are returned as JSON strings.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use simplexsm::diagnostics;
use simplexsm::sampler::{sample_model, sample_multinomial_compound, RngConfig};
use simplexsm::simulation::{self, Estimator, StudyConfig};
use simplexsm::{ContinuousDataset, CountDataset, CountEstimator, Label, WeightKind};

create_exception!(simplexsm_py, SimplexsmError, PyValueError);

fn err(e: simplexsm::Error) -> PyErr {
    SimplexsmError::new_err(format!("{}: {e}", e.kind()))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    if rows.iter().any(|row| row.len() != r) {
        return Err(PyValueError::new_err("interaction matrix must be square"));
    }
    Ok(DMatrix::from_fn(r, r, |i, j| rows[i][j]))
}

fn proportions(rows: &[Vec<f64>]) -> PyResult<ContinuousDataset> {
    ContinuousDataset::from_rows(rows).map_err(err)
}

fn counts(rows: Vec<Vec<u64>>, totals: Option<Vec<u64>>) -> PyResult<CountDataset> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("count rows have different lengths"));
    }
    CountDataset::new(p, rows.into_iter().flatten().collect(), totals).map_err(err)
}

/// Weight function `h^2`: one of product, capped-product, min, capped-min.
#[pyclass(name = "WeightSpec", module = "simplexsm_py", frozen)]
pub struct PyWeightSpec(simplexsm::WeightSpec);

#[pymethods]
impl PyWeightSpec {
    #[new]
    #[pyo3(signature = (kind, a_c = 1.0))]
    fn new(kind: &str, a_c: f64) -> PyResult<Self> {
        let kind: WeightKind = kind.parse().map_err(err)?;
        Ok(PyWeightSpec(simplexsm::WeightSpec::new(kind, a_c).map_err(err)?))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().name()
    }

    #[getter]
    fn a_c(&self) -> f64 {
        self.0.a_c()
    }

    /// `h^2` at a point `z` of the sphere orthant.
    fn h_sq(&self, z: Vec<f64>) -> f64 {
        self.0.eval_h_sq(&z)
    }

    fn __repr__(&self) -> String {
        format!("WeightSpec(kind={:?}, a_c={})", self.0.kind().name(), self.0.a_c())
    }
}

#[pyclass(name = "ModelSpec", module = "simplexsm_py", frozen)]
pub struct PyModelSpec(simplexsm::ModelSpec);

#[pymethods]
impl PyModelSpec {
    #[staticmethod]
    fn hybrid(interaction: Vec<Vec<f64>>, linear: Vec<f64>, shape: Vec<f64>) -> PyResult<Self> {
        let a = matrix(&interaction)?;
        simplexsm::ModelSpec::hybrid(a, DVector::from_vec(linear), shape).map(PyModelSpec).map_err(err)
    }

    #[staticmethod]
    fn truncated_gaussian(interaction: Vec<Vec<f64>>, linear: Vec<f64>) -> PyResult<Self> {
        let a = matrix(&interaction)?;
        simplexsm::ModelSpec::truncated_gaussian(a, DVector::from_vec(linear)).map(PyModelSpec).map_err(err)
    }

    #[staticmethod]
    fn dirichlet(shape: Vec<f64>) -> PyResult<Self> {
        simplexsm::ModelSpec::dirichlet(shape).map(PyModelSpec).map_err(err)
    }

    /// Registered simulation model 1-16.
    #[staticmethod]
    fn preset(id: u32) -> PyResult<Self> {
        simulation::preset(id).map(|p| PyModelSpec(p.model)).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: simplexsm::ModelSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.validate().map_err(err)?;
        Ok(PyModelSpec(spec))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("model specs serialize")
    }

    /// Copy with every `b_j` held at its current value.
    fn with_linear_fixed(&self) -> Self {
        PyModelSpec(self.0.clone().with_linear_fixed())
    }

    /// Copy with parameter `label` (e.g. "a12", "b1") held at `value`.
    fn with_fixed(&self, label: &str, value: f64) -> PyResult<Self> {
        let label: Label = label.parse().map_err(err)?;
        self.0.clone().with_fixed(label, value).map(PyModelSpec).map_err(err)
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p
    }

    #[getter]
    fn family(&self) -> String {
        self.0.family.to_string()
    }

    #[getter]
    fn interaction(&self) -> Vec<Vec<f64>> {
        self.0.interaction.clone()
    }

    #[getter]
    fn linear(&self) -> Vec<f64> {
        self.0.linear.clone()
    }

    #[getter]
    fn shape(&self) -> Vec<f64> {
        self.0.shape.clone()
    }

    /// Parameter labels in `pi` order.
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.index_map().label_strings()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.0.pi().iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec(family={:?}, p={})", self.0.family.to_string(), self.0.p)
    }
}

#[pyclass(name = "FitResult", module = "simplexsm_py", frozen)]
pub struct PyFitResult(simplexsm::FitResult);

#[pymethods]
impl PyFitResult {
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.parameters.iter().map(|p| p.label.clone()).collect()
    }

    #[getter]
    fn estimates(&self) -> Vec<f64> {
        self.0.estimates()
    }

    /// Standard errors; `None` for fixed parameters.
    #[getter]
    fn standard_errors(&self) -> Vec<Option<f64>> {
        self.0.parameters.iter().map(|p| p.se).collect()
    }

    fn estimate(&self, label: &str) -> Option<f64> {
        self.0.estimate(label)
    }

    fn se(&self, label: &str) -> Option<f64> {
        self.0.se(label)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn condition_number(&self) -> Option<f64> {
        self.0.condition_number
    }

    /// Covariance of `sqrt(n)` times the free estimates, labelled by `covariance_labels`.
    #[getter]
    fn covariance(&self) -> Option<Vec<Vec<f64>>> {
        self.0.covariance.clone()
    }

    #[getter]
    fn covariance_labels(&self) -> Vec<String> {
        self.0.covariance_labels.clone()
    }

    /// The fitted model, estimates substituted.
    #[getter]
    fn model(&self) -> PyModelSpec {
        PyModelSpec(self.0.model.clone())
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("fit results serialize")
    }

    fn __repr__(&self) -> String {
        format!("FitResult(family={:?}, n={}, parameters={})", self.0.family.to_string(), self.0.n, self.0.parameters.len())
    }
}

/// Fits `model`'s family to rows of proportions.
#[pyfunction]
#[pyo3(signature = (rows, model, weight, ridge = 0.0))]
fn fit_continuous(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    model: &PyModelSpec,
    weight: &PyWeightSpec,
    ridge: f64,
) -> PyResult<PyFitResult> {
    let data = proportions(&rows)?;
    py.detach(|| simplexsm::fit_continuous(&data, &model.0, weight.0, ridge)).map(PyFitResult).map_err(err)
}

/// Fits count rows, either via `x / m` ("proportions") or factorial moments ("factorial").
#[pyfunction]
#[pyo3(signature = (rows, model, weight, estimator = "proportions", totals = None, ridge = 0.0))]
fn fit_counts(
    py: Python<'_>,
    rows: Vec<Vec<u64>>,
    model: &PyModelSpec,
    weight: &PyWeightSpec,
    estimator: &str,
    totals: Option<Vec<u64>>,
    ridge: f64,
) -> PyResult<PyFitResult> {
    let est = match estimator {
        "proportions" => CountEstimator::Proportions,
        "factorial" => CountEstimator::Factorial,
        other => return Err(PyValueError::new_err(format!("unknown estimator {other:?}"))),
    };
    let data = counts(rows, totals)?;
    py.detach(|| simplexsm::fit_counts(&data, &model.0, weight.0, est, ridge)).map(PyFitResult).map_err(err)
}

/// Draws `n` rows from `model` using substream `stream` of `seed`.
#[pyfunction]
#[pyo3(signature = (model, n, seed, stream = 0))]
fn sample(py: Python<'_>, model: &PyModelSpec, n: usize, seed: u64, stream: u64) -> PyResult<Vec<Vec<f64>>> {
    let (data, _) =
        py.detach(|| sample_model(&model.0, n, &mut RngConfig::new(seed, stream).rng())).map_err(err)?;
    Ok(data.to_rows())
}

/// Multinomial counts with total `total` for each latent row.
#[pyfunction]
#[pyo3(signature = (latent, total, seed, stream = 0))]
fn sample_multinomial(latent: Vec<Vec<f64>>, total: u64, seed: u64, stream: u64) -> PyResult<Vec<Vec<u64>>> {
    let latent = proportions(&latent)?;
    let c = sample_multinomial_compound(&latent, &[total], &mut RngConfig::new(seed, stream).rng()).map_err(err)?;
    Ok(c.rows().map(<[u64]>::to_vec).collect())
}

/// Two-sample KS test: `(statistic, p_value, ties)`.
#[pyfunction]
fn ks_compare(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let r = diagnostics::ks_compare(&a, &b).map_err(err)?;
    Ok((r.statistic, r.p_value, r.ties))
}

#[pyfunction]
fn round_to_grid(values: Vec<f64>, m: u64) -> PyResult<Vec<f64>> {
    diagnostics::round_to_grid(&values, m).map_err(err)
}

/// Method-of-moments Dirichlet `beta` (shape minus one).
#[pyfunction]
fn dirichlet_moment_fit(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    diagnostics::dirichlet_moment_fit(&proportions(&rows)?).map_err(err)
}

/// Marginal comparison of observed rows with `n_sim` draws from `model`, as JSON.
#[pyfunction]
#[pyo3(signature = (rows, model, n_sim, seed, grid = None, stream = 0))]
fn marginal_report(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    model: &PyModelSpec,
    n_sim: usize,
    seed: u64,
    grid: Option<u64>,
    stream: u64,
) -> PyResult<String> {
    let observed = proportions(&rows)?;
    let rep = py
        .detach(|| diagnostics::marginal_report(&observed, &model.0, grid, n_sim, &mut RngConfig::new(seed, stream).rng()))
        .map_err(err)?;
    Ok(serde_json::to_string(&rep).expect("reports serialize"))
}

/// Simulation study on a registered model; returns one dict per (estimator, parameter).
#[pyfunction]
#[pyo3(signature = (preset, n, replicates, estimators, seed))]
fn run_study<'py>(
    py: Python<'py>,
    preset: u32,
    n: usize,
    replicates: usize,
    estimators: Vec<u8>,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let estimators: Vec<Estimator> = estimators
        .into_iter()
        .map(Estimator::try_from)
        .collect::<Result<_, _>>()
        .map_err(PyValueError::new_err)?;
    let config = StudyConfig::from_preset(preset, n, replicates, estimators, seed).map_err(err)?;
    let summary = py.detach(|| simulation::run_study(&config)).map_err(err)?;
    summary
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("estimator", &c.estimator)?;
            d.set_item("parameter", &c.parameter)?;
            d.set_item("truth", c.truth)?;
            d.set_item("mean", c.mean)?;
            d.set_item("bias", c.bias)?;
            d.set_item("se", c.se)?;
            d.set_item("rmse", c.rmse)?;
            d.set_item("rbias", c.rbias)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn simplexsm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SimplexsmError", m.py().get_type::<SimplexsmError>())?;
    m.add_class::<PyWeightSpec>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(fit_counts, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(sample_multinomial, m)?)?;
    m.add_function(wrap_pyfunction!(ks_compare, m)?)?;
    m.add_function(wrap_pyfunction!(round_to_grid, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_moment_fit, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_conversions_validate_shapes() {
        assert_eq!(matrix(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap()[(1, 0)], 2.0);
        assert!(matrix(&[vec![1.0, 2.0]]).is_err());
        let c = counts(vec![vec![3, 2], vec![1, 4]], None).unwrap();
        assert_eq!(c.totals(), &[5, 5]);
        assert!(counts(vec![vec![3, 2], vec![1]], None).is_err());
    }
}
