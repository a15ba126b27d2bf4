//! Python bindings for `tcbe-core`. Fields cross the boundary as flat lists
//! of floats in node order, and reports come back as plain dicts.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use tcbe_core::convexify::{self, Cutoff};
use tcbe_core::dirichlet::{self, assemble_generator};
use tcbe_core::heatflow;
use tcbe_core::mesh::{Mesh, MetricField, ScalarField};
use tcbe_core::metricgeom::{self, PathGraph};
use tcbe_core::models::{ModelData, ModelSpace, WeightSpec};
use tcbe_core::smooth_oracle;
use tcbe_core::timechange::{self, DimensionBound};
use tcbe_core::{cli, Error};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bound(x: f64) -> PyResult<DimensionBound> {
    if x == f64::INFINITY {
        Ok(DimensionBound::Infinite)
    } else {
        DimensionBound::finite(x).map_err(err)
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn field(mesh: &Arc<Mesh>, values: Vec<f64>) -> PyResult<ScalarField> {
    ScalarField::from_values(mesh.clone(), values).map_err(err)
}

/// One of the built-in model spaces at a given resolution, with `V₀ = 0`.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    data: ModelData,
}

impl PyModel {
    fn mesh(&self) -> &Arc<Mesh> {
        &self.data.mesh
    }

    fn metric(&self) -> &MetricField {
        &self.data.metric
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(space: &str, resolution: usize) -> PyResult<Self> {
        let space: ModelSpace = space.parse().map_err(err)?;
        Ok(Self { data: space.build(resolution).map_err(err)? })
    }

    #[getter]
    fn space(&self) -> &'static str {
        self.data.space.name()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.data.resolution
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.mesh().dimension()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.mesh().spacing().to_vec()
    }

    fn __len__(&self) -> usize {
        self.mesh().len()
    }

    /// Chart coordinates of every node as `(x, y)`; `y` is 0 in one dimension.
    fn coordinates(&self) -> Vec<(f64, f64)> {
        (0..self.mesh().len()).map(|i| self.mesh().coordinates(i)).map(|[x, y]| (x, y)).collect()
    }

    /// `zero`, `constant` (uses `value`) or `harmonic` (`value` is the amplitude).
    #[pyo3(signature = (kind, value = 0.0))]
    fn sample_weight(&self, kind: &str, value: f64) -> PyResult<Vec<f64>> {
        let spec = match kind {
            "zero" => WeightSpec::Zero,
            "constant" => WeightSpec::Constant { value },
            "harmonic" => WeightSpec::Harmonic { amplitude: value },
            _ => return Err(PyValueError::new_err(format!("unknown weight kind '{kind}'"))),
        };
        Ok(spec.sample(self.mesh()).map_err(err)?.into_values())
    }

    /// Generator of the model, or of its time change by `w` when given.
    #[pyo3(signature = (w = None))]
    fn generator(&self, w: Option<Vec<f64>>) -> PyResult<PyGenerator> {
        let base = assemble_generator(self.metric(), &self.data.v0).map_err(err)?;
        match w {
            None => Ok(PyGenerator { inner: base }),
            Some(w) => {
                let pair = dirichlet::time_change(&base, &field(self.mesh(), w)?).map_err(err)?;
                Ok(PyGenerator { inner: pair.transformed })
            }
        }
    }

    /// Pointwise optimal curvature bound of the base space for dimension `n`.
    fn optimal_k(&self, n: f64) -> PyResult<Vec<f64>> {
        let k = smooth_oracle::optimal_k(self.metric(), &self.data.v0, bound(n)?).map_err(err)?;
        Ok(k.into_values())
    }

    /// Predicted transformed curvature bound against the oracle of the
    /// conformal data. Returns the summary together with both fields.
    #[pyo3(signature = (w, n, nprime, tol = 1e-6))]
    fn verify_theorem_b(&self, py: Python<'_>, w: Vec<f64>, n: f64, nprime: f64, tol: f64) -> PyResult<Py<PyAny>> {
        let w = field(self.mesh(), w)?;
        let report = smooth_oracle::verify_theorem_B(self.metric(), &self.data.v0, bound(n)?, &w, bound(nprime)?, tol).map_err(err)?;
        let out = to_py(py, &report.summary)?;
        let dict = out.bind(py);
        dict.set_item("predicted", report.predicted.clone())?;
        dict.set_item("oracle", report.oracle.clone())?;
        Ok(out)
    }

    /// Graph distance of `e^w ⊙ d_g` between nodes `x` and `y` and its dual
    /// (Lipschitz potential) value.
    #[pyo3(signature = (w, x, y, diagonals = true))]
    fn distance(&self, w: Vec<f64>, x: usize, y: usize, diagonals: bool) -> PyResult<(f64, f64)> {
        let graph = PathGraph::build(self.metric(), &field(self.mesh(), w)?, diagonals).map_err(err)?;
        let primal = metricgeom::conformal_distance(&graph, x, y).map_err(err)?;
        let dual = metricgeom::dual_distance(&graph, x, y).map_err(err)?;
        Ok((primal, dual))
    }

    /// Monte Carlo estimate of the transformed semigroup at `x0` from time
    /// changed walks, compared with the deterministic solve.
    #[pyo3(signature = (w, f, x0, t, paths, seed))]
    fn feynman_kac(&self, py: Python<'_>, w: Vec<f64>, f: Vec<f64>, x0: usize, t: f64, paths: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let base = assemble_generator(self.metric(), &self.data.v0).map_err(err)?;
        let report =
            heatflow::feynman_kac_check(&base, &field(self.mesh(), w)?, &field(self.mesh(), f)?, x0, t, paths, seed).map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model('{}', {})", self.data.space, self.data.resolution)
    }
}

/// Symmetric Markov generator with its reference measure.
#[pyclass(name = "Generator", frozen)]
struct PyGenerator {
    inner: dirichlet::Generator,
}

#[pymethods]
impl PyGenerator {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn measure(&self) -> Vec<f64> {
        self.inner.measure().to_vec()
    }

    fn apply(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        if f.len() != self.inner.len() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", self.inner.len(), f.len())));
        }
        Ok(self.inner.apply(&f))
    }

    fn gamma(&self, f: Vec<f64>, g: Vec<f64>) -> PyResult<Vec<f64>> {
        let mesh = self.inner.mesh();
        let out = dirichlet::carre_du_champ(&self.inner, &field(mesh, f)?, &field(mesh, g)?).map_err(err)?;
        Ok(out.into_values())
    }

    fn energy(&self, f: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.energy(field(self.inner.mesh(), f)?.values()))
    }

    /// Time-changed generator `(e^{-2w} L, e^{2w} m)`.
    fn time_change(&self, w: Vec<f64>) -> PyResult<PyGenerator> {
        let pair = dirichlet::time_change(&self.inner, &field(self.inner.mesh(), w)?).map_err(err)?;
        Ok(PyGenerator { inner: pair.transformed })
    }

    /// Integrated curvature-dimension defect of `f` against `k` and `n`,
    /// tested with the nonnegative function `phi`.
    fn be_defect(&self, k: Vec<f64>, n: f64, f: Vec<f64>, phi: Vec<f64>) -> PyResult<f64> {
        let mesh = self.inner.mesh();
        dirichlet::be_defect(&self.inner, &field(mesh, k)?, bound(n)?, &field(mesh, f)?, &field(mesh, phi)?).map_err(err)
    }

    fn audit(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.audit())
    }
}

/// Piecewise quadratic cutoff with identity core and plateau `±s/2`.
#[pyclass(name = "Cutoff", frozen)]
struct PyCutoff {
    inner: Cutoff,
}

#[pymethods]
impl PyCutoff {
    #[new]
    fn new(lprime: f64, r0: f64) -> PyResult<Self> {
        Ok(Self { inner: Cutoff::new(lprime, r0).map_err(err)? })
    }

    #[getter]
    fn plateau(&self) -> f64 {
        self.inner.plateau()
    }

    fn __call__(&self, t: f64) -> f64 {
        self.inner.value(t)
    }

    fn d1(&self, t: f64) -> f64 {
        self.inner.d1(t)
    }

    fn d2(&self, t: f64) -> f64 {
        self.inner.d2(t)
    }

    #[pyo3(signature = (points = 1000))]
    fn audit(&self, py: Python<'_>, points: usize) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.audit(points))
    }
}

/// `c(N, N')`, the gradient coefficient of the transformed bound.
#[pyfunction]
fn coefficient(n: f64, nprime: f64) -> PyResult<f64> {
    timechange::coefficient(bound(n)?, bound(nprime)?).map_err(err)
}

#[pyfunction]
fn sweep_matrix_inequality(py: Python<'_>, n: usize, nprime: f64, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let summary = timechange::sweep_matrix_inequality(n, bound(nprime)?, samples, seed).map_err(err)?;
    to_py(py, &summary)
}

/// Smallest eigenvalue of the quadratic form over the built-in grid of
/// `(n, N, N')`.
#[pyfunction]
fn sweep_quartic_form(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let summary = timechange::sweep_quartic_form(&timechange::quartic_sweep_grid()).map_err(err)?;
    to_py(py, &summary)
}

#[pyfunction]
fn cot_kn(k: f64, n: f64, x: f64) -> PyResult<f64> {
    convexify::cot_kn(k, n, x).map_err(err)
}

/// Runs a scenario file and returns its report; artifacts land in the
/// scenario's output directory.
#[pyfunction]
#[pyo3(signature = (path, parallel = false))]
fn run_scenario(py: Python<'_>, path: PathBuf, parallel: bool) -> PyResult<Py<PyAny>> {
    let mut scenario = cli::parse_config(&path).map_err(err)?;
    scenario.parallel |= parallel;
    let report = py.detach(|| cli::run(&scenario)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn tcbe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyCutoff>()?;
    m.add_function(wrap_pyfunction!(coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_matrix_inequality, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_quartic_form, m)?)?;
    m.add_function(wrap_pyfunction!(cot_kn, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("MODEL_SPACES", ModelSpace::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    Ok(())
}
