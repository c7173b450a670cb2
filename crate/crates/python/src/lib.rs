//! Python bindings for the quadrotor simulator.
//!
//! Vectors cross the boundary as 3-element sequences and matrices as
//! nested 3×3 sequences (row-major), so plain lists and NumPy arrays both
//! work as inputs. Results come back as Python lists.

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;

use se3::config::SCENARIOS;
use se3::dynamics::{mixing_from_rotors, mixing_to_rotors};
use se3::so3::{self, mat3_from_rows, Mat3, RotationMatrix};
use se3::trace_io::{write_report, write_trace_csv, TraceRow, COLUMNS};
use se3::{Error, ScenarioConfig, Vec3};

type Rows = [[f64; 3]; 3];

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::UnknownScenario(name) => PyKeyError::new_err(format!("unknown scenario '{name}'")),
        Error::Io(msg) => PyOSError::new_err(msg),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::from(v)
}

fn rows(m: &Mat3) -> Rows {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn rotation(m: Rows) -> PyResult<RotationMatrix> {
    RotationMatrix::new(mat3_from_rows(&m)).map_err(to_py_err)
}

/// Skew-symmetric matrix `v^` with `v^ w = v × w`.
#[pyfunction]
fn hat(v: [f64; 3]) -> Rows {
    rows(&so3::hat(&vec3(v)))
}

/// Inverse of `hat`; raises `ValueError` for a matrix that is not skew.
#[pyfunction]
fn vee(m: Rows) -> PyResult<[f64; 3]> {
    let v = so3::vee(&mat3_from_rows(&m)).map_err(to_py_err)?;
    Ok(v.into())
}

/// Rotation `exp(v^)` by angle `|v|` about `v`.
#[pyfunction]
fn exp(v: [f64; 3]) -> Rows {
    rows(so3::exp_so3(&vec3(v)).matrix())
}

/// Attitude error function `Ψ(R, R_d) = ½ tr(I - R_dᵀR)`, in `[0, 2]`.
#[pyfunction]
fn psi(r: Rows, rd: Rows) -> PyResult<f64> {
    Ok(so3::psi(&rotation(r)?, &rotation(rd)?))
}

/// `e_R = ½ (R_dᵀR - RᵀR_d)^∨`.
#[pyfunction]
fn attitude_error(r: Rows, rd: Rows) -> PyResult<[f64; 3]> {
    Ok(so3::attitude_error(&rotation(r)?, &rotation(rd)?).into())
}

/// Closest rotation matrix to `m`.
#[pyfunction]
fn orthonormalize(m: Rows) -> PyResult<Rows> {
    let r = so3::orthonormalize(&mat3_from_rows(&m)).map_err(to_py_err)?;
    Ok(rows(r.matrix()))
}

/// Vehicle parameters; defaults to the reference vehicle.
#[pyclass(name = "QuadParams", from_py_object)]
#[derive(Clone)]
struct PyQuadParams(se3::QuadParams);

#[pymethods]
impl PyQuadParams {
    #[new]
    #[pyo3(signature = (m=None, inertia=None, d=None, c_tau_f=None))]
    fn new(
        m: Option<f64>,
        inertia: Option<[f64; 3]>,
        d: Option<f64>,
        c_tau_f: Option<f64>,
    ) -> PyResult<Self> {
        let mut p = se3::QuadParams::reference();
        if let Some(m) = m {
            p.m = m;
        }
        if let Some(diag) = inertia {
            p.j = Mat3::from_diagonal(&vec3(diag));
        }
        if let Some(d) = d {
            p.d = d;
        }
        if let Some(c) = c_tau_f {
            p.c_tau_f = c;
        }
        p.validate().map_err(to_py_err)?;
        Ok(PyQuadParams(p))
    }

    #[getter]
    fn m(&self) -> f64 {
        self.0.m
    }

    #[getter]
    fn inertia(&self) -> Rows {
        rows(&self.0.j)
    }

    #[getter]
    fn d(&self) -> f64 {
        self.0.d
    }

    #[getter]
    fn c_tau_f(&self) -> f64 {
        self.0.c_tau_f
    }

    #[getter]
    fn g(&self) -> f64 {
        self.0.g
    }

    fn __repr__(&self) -> String {
        let j = self.0.j.diagonal();
        format!(
            "QuadParams(m={}, inertia=[{}, {}, {}], d={}, c_tau_f={})",
            self.0.m, j.x, j.y, j.z, self.0.d, self.0.c_tau_f
        )
    }
}

fn params_or_reference(params: Option<PyQuadParams>) -> se3::QuadParams {
    params.map_or_else(se3::QuadParams::reference, |p| p.0)
}

/// Rotor thrusts `[f1, f2, f3, f4]` realizing total thrust `f` and moment.
#[pyfunction]
#[pyo3(signature = (f, moment, params=None))]
fn mixing(f: f64, moment: [f64; 3], params: Option<PyQuadParams>) -> PyResult<[f64; 4]> {
    mixing_to_rotors(f, &vec3(moment), &params_or_reference(params)).map_err(to_py_err)
}

/// Total thrust and moment produced by the given rotor thrusts.
#[pyfunction]
#[pyo3(signature = (rotor_thrusts, params=None))]
fn unmixing(rotor_thrusts: [f64; 4], params: Option<PyQuadParams>) -> (f64, [f64; 3]) {
    let (f, m) = mixing_from_rotors(&rotor_thrusts, &params_or_reference(params));
    (f, m.into())
}

/// Names of the built-in scenarios.
#[pyfunction]
fn list_scenarios() -> Vec<&'static str> {
    SCENARIOS.to_vec()
}

/// Outcome of one simulation: the logged trace and the monitor report.
#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    output: se3::RunOutput,
    rows: Vec<TraceRow>,
}

#[pymethods]
impl PyRunResult {
    /// CSV column names, in file order.
    #[staticmethod]
    fn columns() -> Vec<&'static str> {
        COLUMNS.to_vec()
    }

    /// Values of one numeric column; use `modes` for the mode column.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        if name == "mode" {
            return Err(PyKeyError::new_err(
                "'mode' is textual; use RunResult.modes",
            ));
        }
        if !COLUMNS.contains(&name) {
            return Err(PyKeyError::new_err(format!("no column '{name}'")));
        }
        Ok(self.rows.iter().filter_map(|r| r.get(name)).collect())
    }

    #[getter]
    fn modes(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.mode.clone()).collect()
    }

    #[getter]
    fn completed(&self) -> bool {
        self.output.completed()
    }

    /// `(t, reason)` if the run stopped early, else `None`.
    #[getter]
    fn abort(&self) -> Option<(f64, String)> {
        self.output.abort.as_ref().map(|a| (a.t, a.reason.clone()))
    }

    #[getter]
    fn violations(&self) -> usize {
        self.output.report.violations().len()
    }

    /// The monitor report as JSON text.
    #[getter]
    fn report_json(&self) -> String {
        self.output.report.to_json()
    }

    /// Writes `PREFIX.csv` and `PREFIX.report`.
    fn write(&self, prefix: &str) -> PyResult<()> {
        write_trace_csv(&self.output.trace, format!("{prefix}.csv").as_ref()).map_err(to_py_err)?;
        write_report(&self.output.report, format!("{prefix}.report").as_ref()).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.rows.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(scenario='{}', records={}, completed={})",
            self.output.report.scenario,
            self.rows.len(),
            self.output.completed()
        )
    }
}

fn simulate(
    py: Python<'_>,
    mut cfg: ScenarioConfig,
    dt: Option<f64>,
    duration: Option<f64>,
) -> PyResult<PyRunResult> {
    if let Some(dt) = dt {
        cfg.sim.dt = dt;
    }
    if let Some(duration) = duration {
        cfg.sim.duration = duration;
    }
    cfg.validate().map_err(to_py_err)?;
    let output = py
        .detach(|| se3::run(&cfg.mission, &cfg.sim))
        .map_err(to_py_err)?;
    let rows = output.trace.iter().map(TraceRow::from).collect();
    Ok(PyRunResult { output, rows })
}

/// Runs a built-in scenario or a scenario file.
#[pyfunction]
#[pyo3(signature = (scenario, dt=None, duration=None))]
fn run_scenario(
    py: Python<'_>,
    scenario: &str,
    dt: Option<f64>,
    duration: Option<f64>,
) -> PyResult<PyRunResult> {
    let cfg = se3::load_scenario(scenario).map_err(to_py_err)?;
    simulate(py, cfg, dt, duration)
}

/// Runs a scenario given as TOML text.
#[pyfunction]
#[pyo3(signature = (text, dt=None, duration=None))]
fn run_config(
    py: Python<'_>,
    text: &str,
    dt: Option<f64>,
    duration: Option<f64>,
) -> PyResult<PyRunResult> {
    let cfg = se3::parse_config(text).map_err(to_py_err)?;
    simulate(py, cfg, dt, duration)
}

#[pymodule]
fn quadrotor_se3(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hat, m)?)?;
    m.add_function(wrap_pyfunction!(vee, m)?)?;
    m.add_function(wrap_pyfunction!(exp, m)?)?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(attitude_error, m)?)?;
    m.add_function(wrap_pyfunction!(orthonormalize, m)?)?;
    m.add_function(wrap_pyfunction!(mixing, m)?)?;
    m.add_function(wrap_pyfunction!(unmixing, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_class::<PyQuadParams>()?;
    m.add_class::<PyRunResult>()?;
    Ok(())
}
