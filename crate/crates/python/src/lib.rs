use nalgebra::{DMatrix, DVector, Vector3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use msctrack_core::config::RunConfig;
use msctrack_core::coords::{self, CartesianPoint};
use msctrack_core::dynamics::{self, ModelId, MscState, ProcessNoiseConfig, TurnNoiseSemantics};
use msctrack_core::imm::ImmBank;
use msctrack_core::measurement::Measurement;
use msctrack_core::scheduler;
use msctrack_core::sim::{self, FilterConfig, SUMMARY_CSV_HEADER};
use msctrack_core::ukf::{GaussianEstimate, UtParams};
use msctrack_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(m) => PyOSError::new_err(m),
        Error::ConfigInvalid(_)
        | Error::PhaseSumMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::MissingInput { .. }
        | Error::MeasurementDimension(_)
        | Error::InvalidUtParams(_)
        | Error::ZeroVector
        | Error::NonpositiveInverseRange(_)
        | Error::ElevationSingularity(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_model(name: &str) -> PyResult<ModelId> {
    name.parse().map_err(to_py)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn load_config(config: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match config {
        Some(text) => RunConfig::from_toml(text).map_err(to_py)?,
        None => RunConfig::paper(),
    };
    let violations = cfg.validate();
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(PyValueError::new_err(msg.join("; ")));
    }
    Ok(cfg)
}

/// Returns `(psi, theta, r)` of a Cartesian position.
#[pyfunction]
fn cart_to_spherical(x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
    let s = coords::cart_to_spherical(CartesianPoint::new(x, y, z)).map_err(to_py)?;
    Ok((s.psi, s.theta, s.r))
}

/// Cartesian-to-LOS rotation as a list of rows.
#[pyfunction]
fn rotation_c_to_s(psi: f64, theta: f64) -> Vec<Vec<f64>> {
    let m = coords::rotation_c_to_s(psi, theta);
    let m = m.matrix();
    (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect()
}

#[pyfunction]
#[pyo3(signature = (pos, vel, model="ncv", acc=None, turn_rate=None))]
fn cart_kinematics_to_msc(
    pos: [f64; 3],
    vel: [f64; 3],
    model: &str,
    acc: Option<[f64; 3]>,
    turn_rate: Option<f64>,
) -> PyResult<Vec<f64>> {
    let x = coords::cart_kinematics_to_msc(
        CartesianPoint::new(pos[0], pos[1], pos[2]),
        Vector3::from(vel),
        acc.map(Vector3::from),
        turn_rate,
        parse_model(model)?,
    )
    .map_err(to_py)?;
    Ok(x.values.iter().copied().collect())
}

/// Returns `(position, velocity)` of an MSC state.
#[pyfunction]
#[pyo3(signature = (state, model="ncv"))]
fn msc_to_cart_kinematics(state: Vec<f64>, model: &str) -> PyResult<([f64; 3], [f64; 3])> {
    let x = MscState::new(parse_model(model)?, state).map_err(to_py)?;
    let (p, v) = coords::msc_to_cart_kinematics(&x).map_err(to_py)?;
    Ok(([p.x, p.y, p.z], [v.x, v.y, v.z]))
}

#[pyfunction]
#[pyo3(signature = (state, model="ncv"))]
fn drift(state: Vec<f64>, model: &str) -> PyResult<Vec<f64>> {
    let d = dynamics::drift(parse_model(model)?, &state).map_err(to_py)?;
    Ok(d.iter().copied().collect())
}

/// Discrete process-noise covariance at `state` over one step of `dt`.
#[pyfunction]
#[pyo3(signature = (state, dt, model="ncv", sigma_accel=2.0, sigma_jerk=15.0, q_turn=0.05))]
fn discrete_qd(
    state: Vec<f64>,
    dt: f64,
    model: &str,
    sigma_accel: f64,
    sigma_jerk: f64,
    q_turn: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = MscState::new(parse_model(model)?, state).map_err(to_py)?;
    let cfg = ProcessNoiseConfig {
        sigma_accel,
        sigma_jerk,
        q_turn,
        turn_noise: TurnNoiseSemantics::StdDev,
    };
    let q = dynamics::discrete_qd(&x, &cfg, dt).map_err(to_py)?;
    Ok(rows(&q))
}

/// Returns `(r_hat, sigma_r)` for inverse range `s_hat` with variance `p_s`.
#[pyfunction]
#[pyo3(signature = (s_hat, p_s, alpha=1e-3, kappa=0.0))]
fn range_sigma(s_hat: f64, p_s: f64, alpha: f64, kappa: f64) -> PyResult<(f64, f64)> {
    scheduler::range_sigma(s_hat, p_s, &UtParams { alpha, kappa }).map_err(to_py)
}

/// The bundled scenario config as TOML text.
#[pyfunction]
fn paper_config() -> String {
    msctrack_core::config::PAPER_SCENARIO_TOML.to_string()
}

/// Every violated invariant of a TOML config; empty when it is usable.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<Vec<String>> {
    let cfg = RunConfig::from_toml(text).map_err(to_py)?;
    Ok(cfg.validate().iter().map(|v| v.to_string()).collect())
}

/// One tracking run; returns the per-frame CSV log.
#[pyfunction]
#[pyo3(signature = (seed, config=None))]
fn run_track(py: Python<'_>, seed: u64, config: Option<&str>) -> PyResult<String> {
    let setup = load_config(config)?.build().map_err(to_py)?;
    let log = py
        .detach(|| sim::run_track(&setup.scenario, &setup.noise, &setup.filter, &setup.scheduler, seed))
        .map_err(to_py)?;
    Ok(log.to_csv_string())
}

/// Monte-Carlo batch; returns a dict with the summary CSV and headline metrics.
#[pyfunction]
#[pyo3(signature = (n_runs, base_seed=1, config=None))]
fn monte_carlo<'py>(
    py: Python<'py>,
    n_runs: usize,
    base_seed: u64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = load_config(config)?.build().map_err(to_py)?;
    let (mc, pass) = py
        .detach(|| {
            let mc = sim::monte_carlo(
                &setup.scenario,
                &setup.noise,
                &setup.filter,
                &setup.scheduler,
                n_runs,
                base_seed,
            )?;
            let pass = mc.nees_pass_fraction(&setup.scenario, 2.0)?;
            Ok::<_, Error>((mc, pass))
        })
        .map_err(to_py)?;
    let mut csv = Vec::new();
    sim::write_summary_csv(&mc.summary, &mut csv).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("summary_csv", String::from_utf8_lossy(&csv).into_owned())?;
    out.set_item("final_rms_range_error", mc.final_rms_range_error())?;
    out.set_item("phase_rates", mc.phase_rates.clone())?;
    out.set_item("nees_pass_fraction", pass)?;
    Ok(out)
}

/// IMM bank started from a measurement that carries range.
#[pyclass(module = "msctrack")]
struct ImmTracker {
    bank: ImmBank,
    models: Vec<ModelId>,
}

impl ImmTracker {
    fn estimate_dict<'py>(&self, py: Python<'py>, est: &GaussianEstimate) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        out.set_item("state", est.mean.values.iter().copied().collect::<Vec<f64>>())?;
        out.set_item("cov", rows(&est.cov))?;
        out.set_item("mu", self.mu())?;
        Ok(out)
    }
}

#[pymethods]
impl ImmTracker {
    #[new]
    #[pyo3(signature = (psi, theta, r, config=None))]
    fn new(psi: f64, theta: f64, r: f64, config: Option<&str>) -> PyResult<Self> {
        let setup = load_config(config)?.build().map_err(to_py)?;
        let FilterConfig {
            models,
            initial_mu,
            markov,
            imm,
            init,
        } = setup.filter;
        let bank = ImmBank::from_measurement(
            &Measurement::with_range(psi, theta, r),
            &models,
            DVector::from_vec(initial_mu),
            markov,
            imm,
            &init,
        )
        .map_err(to_py)?;
        Ok(Self { bank, models })
    }

    /// Model names in the order of `mu`.
    #[getter]
    fn models(&self) -> Vec<&'static str> {
        self.models.iter().map(|m| m.name()).collect()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.bank.mu.iter().copied().collect()
    }

    /// Combined estimate on the six core states.
    fn estimate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let est = self.bank.combined().map_err(to_py)?;
        self.estimate_dict(py, &est)
    }

    /// `(r_hat, sigma_r)` of the current combined estimate.
    fn range_sigma(&self) -> PyResult<(f64, f64)> {
        let est = self.bank.combined().map_err(to_py)?;
        let s = est.mean.s();
        let p = est.cov[(dynamics::S, dynamics::S)];
        scheduler::range_sigma(s, p, &self.bank.config.ut_params).map_err(to_py)
    }

    /// Predicts over `dt` and updates with bearings, plus range if given.
    #[pyo3(signature = (psi, theta, r=None, dt=0.033))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        psi: f64,
        theta: f64,
        r: Option<f64>,
        dt: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let z = match r {
            Some(r) => Measurement::with_range(psi, theta, r),
            None => Measurement::bearings(psi, theta),
        };
        let out = self.bank.step(&z, dt).map_err(to_py)?;
        self.estimate_dict(py, &out.combined)
    }
}

#[pymodule(name = "msctrack")]
fn msctrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cart_to_spherical, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_c_to_s, m)?)?;
    m.add_function(wrap_pyfunction!(cart_kinematics_to_msc, m)?)?;
    m.add_function(wrap_pyfunction!(msc_to_cart_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(drift, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_qd, m)?)?;
    m.add_function(wrap_pyfunction!(range_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(paper_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_track, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_class::<ImmTracker>()?;
    m.add("RUN_CSV_HEADER", sim::RUN_CSV_HEADER)?;
    m.add("SUMMARY_CSV_HEADER", SUMMARY_CSV_HEADER)?;
    Ok(())
}
