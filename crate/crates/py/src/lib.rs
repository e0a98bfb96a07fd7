//! Python bindings: scenario configuration, gain synthesis, simulation runs
//! and a few standalone numerical helpers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use secure_platoon::catalog;
use secure_platoon::linalg::{from_nested, to_nested};
use secure_platoon::lti::{discretize_zoh, ContinuousLti};
use secure_platoon::metrics::comfort_report;
use secure_platoon::scenario::{self, Condition, ScenarioConfig, ScenarioResult, Severity};
use secure_platoon::synthesis::GainSet;
use secure_platoon::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::InvalidConfig(_) | Error::Toml(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Scenario configuration parsed from TOML.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ScenarioConfig::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn condition(&self) -> String {
        enum_name(&self.inner.condition)
    }

    #[setter]
    fn set_condition(&mut self, value: &str) -> PyResult<()> {
        self.inner.condition = parse_enum::<Condition>(value)?;
        Ok(())
    }

    #[getter]
    fn severity(&self) -> Option<String> {
        self.inner.severity.as_ref().map(enum_name)
    }

    #[setter]
    fn set_severity(&mut self, value: Option<&str>) -> PyResult<()> {
        self.inner.severity = value.map(parse_enum::<Severity>).transpose()?;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, value: u64) {
        self.inner.seed = value;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, value: f64) -> PyResult<()> {
        let old = self.inner.duration;
        self.inner.duration = value;
        self.inner.validate().map_err(|e| {
            self.inner.duration = old;
            to_py(e)
        })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Config(name={:?}, condition={:?}, duration={})", self.inner.name, self.condition(), self.inner.duration)
    }
}

/// Observer gains with the Lyapunov matrix they were certified with.
#[pyclass(name = "Gains")]
#[derive(Clone)]
struct PyGains {
    inner: GainSet,
}

#[pymethods]
impl PyGains {
    /// Build the catalog for `config` and synthesize verified gains.
    #[staticmethod]
    fn synthesize(config: &PyConfig) -> PyResult<Self> {
        scenario::synth_command(&config.inner).map(|f| Self { inner: f.gains }).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        GainSet::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn margin(&self) -> f64 {
        self.inner.margin
    }

    #[getter]
    fn decay_rate(&self) -> f64 {
        self.inner.decay_rate
    }

    #[getter]
    fn p_mat(&self) -> Vec<Vec<f64>> {
        to_nested(&self.inner.p_mat)
    }

    #[getter]
    fn gains(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.gains.iter().map(to_nested).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.gains.len()
    }
}

/// Outcome of one simulated scenario.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    inner: ScenarioResult,
}

#[pymethods]
impl PyRunResult {
    /// Safety, comfort, reliability and metadata as a JSON string.
    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn rms_e(&self) -> f64 {
        self.inner.summary.safety.rms_e
    }

    #[getter]
    fn nc(&self) -> usize {
        self.inner.summary.safety.nc
    }

    #[getter]
    fn rc(&self) -> f64 {
        self.inner.summary.comfort.rc
    }

    #[getter]
    fn msdv(&self) -> f64 {
        self.inner.summary.comfort.msdv_x
    }

    #[getter]
    fn f1(&self) -> Option<f64> {
        self.inner.summary.reliability.as_ref().map(|r| r.f1)
    }

    #[getter]
    fn selected_j(&self) -> Vec<usize> {
        self.inner.trace.selected_j.clone()
    }

    /// State column of the traced follower: 0 = e, 1 = v, 2 = a, 3 = dv, 4 = a_lead.
    fn state(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= 5 {
            return Err(PyValueError::new_err("state index must be below 5"));
        }
        Ok(self.inner.trace.column(index))
    }

    /// Full trace in CSV form.
    fn trace_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_trace_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn write_outputs(&self, dir: &str) -> PyResult<()> {
        self.inner.write_outputs(dir).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.trace.len()
    }
}

/// Simulate `config`. Secured conditions need `gains`.
#[pyfunction]
#[pyo3(signature = (config, gains=None))]
fn run(py: Python<'_>, config: &PyConfig, gains: Option<&PyGains>) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    let gains = gains.map(|g| g.inner.clone());
    py.allow_threads(move || {
        let design = match gains {
            Some(g) => Some(scenario::prepare_design(&cfg, Some(g))?),
            None => None,
        };
        scenario::run_condition(&cfg, design.as_ref())
    })
    .map(|inner| PyRunResult { inner })
    .map_err(to_py)
}

/// Minimal detectable sensor subsets (1-based) of the pair `(a, c)`.
#[pyfunction]
fn build_catalog(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<Vec<Vec<usize>>> {
    let (a, c) = (from_nested(&a).map_err(to_py)?, from_nested(&c).map_err(to_py)?);
    catalog::build_catalog(&a, &c).map(|cat| cat.index_lists()).map_err(to_py)
}

type Nested = Vec<Vec<f64>>;

/// Zero-order-hold discretization; returns `(a, b)`.
#[pyfunction]
fn discretize(a_c: Nested, b_c: Nested, ts: f64) -> PyResult<(Nested, Nested)> {
    let sys = ContinuousLti::new(from_nested(&a_c).map_err(to_py)?, vec![from_nested(&b_c).map_err(to_py)?]).map_err(to_py)?;
    let zoh = discretize_zoh(&sys, ts).map_err(to_py)?;
    Ok((to_nested(&zoh.a), to_nested(&zoh.b_blocks[0])))
}

/// Ride comfort and motion-sickness dose of a longitudinal acceleration series.
#[pyfunction]
#[pyo3(signature = (a_x, ts, k_x=1.4))]
fn comfort(a_x: Vec<f64>, ts: f64, k_x: f64) -> PyResult<(f64, f64)> {
    comfort_report(&a_x, ts, k_x).map(|r| (r.rc, r.msdv_x)).map_err(to_py)
}

#[pymodule]
fn secure_platoon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGains>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(build_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(discretize, m)?)?;
    m.add_function(wrap_pyfunction!(comfort, m)?)?;
    Ok(())
}
