//! Python bindings: built-in task scoring, the evaluator protocol, the mock
//! generator, iteration arithmetic and whole discovery runs.

use std::path::PathBuf;

use discover_core::db::RunStore;
use discover_core::harness::{evaluate_external, ExternalEvaluator};
use discover_core::tasks::{overlap, packing, Formulation};
use discover_core::{
    components, BuiltinEvaluator, Direction, Discovery, Error, EvaluationResult, Evaluator, RunConfig, TaskId,
    TrajectoryTable,
};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::CorruptRun { .. } => PyOSError::new_err(error_chain(&e)),
        Error::Startup(_) | Error::Generation(_) => PyRuntimeError::new_err(error_chain(&e)),
        other => PyValueError::new_err(error_chain(&other)),
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg.push_str(&format!(": {s}"));
        cur = s.source();
    }
    msg
}

/// Round-trips a serializable value through Python's `json` module.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

/// Circles in the unit square, each `(x, y, r)`.
#[pyclass(name = "Packing", frozen)]
struct PyPacking {
    inner: packing::Packing,
}

#[pymethods]
impl PyPacking {
    #[new]
    fn new(circles: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        Ok(PyPacking { inner: packing::Packing::from_circles(&circles).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyPacking { inner: packing::Packing::parse(text).map_err(to_py_err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn circles(&self) -> Vec<(f64, f64, f64)> {
        self.inner.circles().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    /// Sum of radii; raises `ValueError` for infeasible or empty packings.
    #[pyo3(signature = (tol = packing::DEFAULT_TOL))]
    fn score(&self, tol: f64) -> PyResult<f64> {
        packing::score_packing_with_tol(&self.inner, tol).map_err(to_py_err)
    }

    /// Violations as dicts; empty means feasible.
    #[pyo3(signature = (tol = packing::DEFAULT_TOL))]
    fn violations<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &packing::validate_packing(&self.inner, tol))
    }

    fn __repr__(&self) -> String {
        format!("Packing(n={})", self.inner.n())
    }
}

/// Step function on [0, 2] with equal-width pieces.
#[pyclass(name = "StepFunction", frozen)]
struct PyStepFunction {
    inner: overlap::StepFunction,
}

#[pymethods]
impl PyStepFunction {
    #[new]
    fn new(values: Vec<f64>) -> Self {
        PyStepFunction { inner: overlap::StepFunction::new(values) }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyStepFunction { inner: overlap::StepFunction::parse(text).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn indicator(n: usize, a: Vec<usize>) -> PyResult<Self> {
        if a.iter().any(|&x| x == 0 || x > 2 * n) {
            return Err(PyValueError::new_err(format!("elements must lie in 1..={}", 2 * n)));
        }
        Ok(PyStepFunction { inner: overlap::indicator_of(n, &a) })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn integral(&self) -> f64 {
        self.inner.integral()
    }

    fn reversed(&self) -> Self {
        PyStepFunction { inner: self.inner.reversed() }
    }

    /// `(value, argmax_shift)` of the overlap bound.
    #[pyo3(signature = (formulation = "complement_correlation"))]
    fn score(&self, formulation: &str) -> PyResult<(f64, f64)> {
        let f: Formulation = parse_enum("formulation", formulation)?;
        let s = overlap::score_overlap(&self.inner, f).map_err(to_py_err)?;
        Ok((s.value, s.argmax_shift))
    }

    fn __len__(&self) -> usize {
        self.inner.m()
    }

    fn __repr__(&self) -> String {
        format!("StepFunction(m={})", self.inner.m())
    }
}

#[pyfunction]
fn discrete_overlap_oracle(n: usize, a: Vec<usize>) -> PyResult<usize> {
    overlap::discrete_overlap_oracle(n, &a).map_err(to_py_err)
}

#[pyfunction]
fn count_iterations(attempts: u64, parallelism: u64) -> PyResult<u64> {
    if parallelism == 0 {
        return Err(PyValueError::new_err("parallelism must be at least 1"));
    }
    Ok(discover_core::count_iterations(attempts, parallelism))
}

#[pyfunction]
fn compute_speedup(baseline_iterations: f64, ours_iterations: f64) -> f64 {
    discover_core::compute_speedup(baseline_iterations, ours_iterations)
}

#[pyfunction]
fn percent_improvement(old_value: f64, new_value: f64) -> f64 {
    discover_core::percent_improvement(old_value, new_value)
}

#[pyfunction]
fn mock_mutate(parent: &str, seed: u64, step_scale: f64) -> PyResult<String> {
    discover_core::mock_mutate(parent, seed, step_scale).map_err(to_py_err)
}

/// Parses one evaluator protocol line into a result dict.
#[pyfunction]
#[pyo3(signature = (line, direction = "maximize"))]
fn parse_result<'py>(py: Python<'py>, line: &str, direction: &str) -> PyResult<Bound<'py, PyAny>> {
    let d: Direction = parse_enum("direction", direction)?;
    to_python(py, &discover_core::parse_result(line, d).map_err(to_py_err)?)
}

/// Runs a built-in evaluator on program text.
#[pyfunction]
#[pyo3(signature = (task, program, formulation = None))]
fn evaluate_builtin<'py>(
    py: Python<'py>,
    task: &str,
    program: &str,
    formulation: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut ev = BuiltinEvaluator::new(parse_enum::<TaskId>("task", task)?);
    if let Some(f) = formulation {
        ev = ev.with_formulation(parse_enum("formulation", f)?);
    }
    let result: EvaluationResult = py.detach(|| ev.evaluate(program));
    to_python(py, &result)
}

/// Runs an external evaluator command on program text.
#[pyfunction]
#[pyo3(signature = (command, program, args = Vec::new(), timeout_s = 60.0, direction = "maximize"))]
fn evaluate_command<'py>(
    py: Python<'py>,
    command: String,
    program: &str,
    args: Vec<String>,
    timeout_s: f64,
    direction: &str,
) -> PyResult<Bound<'py, PyAny>> {
    if !(timeout_s > 0.0 && timeout_s.is_finite()) {
        return Err(PyValueError::new_err("timeout_s must be positive"));
    }
    let ev = ExternalEvaluator::new(command, args, timeout_s, parse_enum("direction", direction)?);
    let result = py.detach(|| evaluate_external(program, &ev));
    to_python(py, &result)
}

/// Runs discovery from a JSON config and returns the report as a dict.
/// With `run_dir` the run is persisted there (or resumed, if it exists).
#[pyfunction]
#[pyo3(signature = (config_json, run_dir = None, quiet = true))]
fn run<'py>(
    py: Python<'py>,
    config_json: &str,
    run_dir: Option<PathBuf>,
    quiet: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
    let report = py
        .detach(|| -> Result<_, Error> {
            let (providers, evaluator) = components(&config)?;
            let discovery = Discovery::new(&config, &providers, evaluator.as_ref())?;
            let discovery = if quiet { discovery.quiet() } else { discovery };
            let discovery = match run_dir {
                Some(dir) if dir.join(discover_core::db::DB_FILE).exists() => {
                    let (store, loaded) = RunStore::open(dir)?;
                    discovery.resume(store, loaded)?
                }
                Some(dir) => discovery.with_store(RunStore::create(dir, &config)?),
                None => discovery,
            };
            discovery.run()
        })
        .map_err(to_py_err)?;
    to_python(py, &report)
}

/// Trajectory CSV of a run directory.
#[pyfunction]
#[pyo3(signature = (run_dir, scale_c = None))]
fn trajectory_csv(run_dir: PathBuf, scale_c: Option<f64>) -> PyResult<String> {
    let mut table = TrajectoryTable::load(&run_dir).map_err(to_py_err)?;
    if let Some(c) = scale_c {
        table = table.with_scale(c);
    }
    table.to_csv().map_err(to_py_err)
}

#[pymodule]
fn discover(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPacking>()?;
    m.add_class::<PyStepFunction>()?;
    m.add_function(wrap_pyfunction!(discrete_overlap_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(count_iterations, m)?)?;
    m.add_function(wrap_pyfunction!(compute_speedup, m)?)?;
    m.add_function(wrap_pyfunction!(percent_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(mock_mutate, m)?)?;
    m.add_function(wrap_pyfunction!(parse_result, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_command, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_csv, m)?)?;
    Ok(())
}
