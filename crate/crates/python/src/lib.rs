//! Python bindings.
//!
//! Structured values cross the boundary as plain Python objects (dicts,
//! lists, floats) with the same field names as the JSON files written by
//! the command-line tool.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use rssloc::crlb::{crlb as crlb_report, fisher_information_uniform};
use rssloc::dataio::{self, CalibrationPoint, LoadOptions};
use rssloc::estimators::{self, EstimatorOptions, KnownParams};
use rssloc::sim::{self, NoiseConfig, SceneConfig, SweepSpec};
use rssloc::{Error, MeasurementSet, NetworkScene, Scenario};

fn err(e: Error) -> PyErr {
    match e {
        Error::Solver(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn scenario(n: u8) -> PyResult<Scenario> {
    Scenario::try_from(n).map_err(PyValueError::new_err)
}

/// Random scene with uniform node placement and full connectivity.
#[pyfunction]
#[pyo3(signature = (n_anchors, n_targets, seed=0, area_m=100.0, ple=3.0))]
fn generate_scene<'py>(
    py: Python<'py>,
    n_anchors: usize,
    n_targets: usize,
    seed: u64,
    area_m: f64,
    ple: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = SceneConfig::new(n_anchors, n_targets, seed);
    cfg.area_m = area_m;
    cfg.ple = ple;
    to_py(py, &sim::generate_scene(&cfg).map_err(err)?)
}

/// One noisy measurement set for `scene`.
#[pyfunction]
#[pyo3(signature = (scene, sigma_db, delta_m, seed=0))]
fn synthesize<'py>(
    py: Python<'py>,
    scene: &Bound<'py, PyAny>,
    sigma_db: f64,
    delta_m: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let scene: NetworkScene = from_py(py, scene)?;
    let noise = NoiseConfig { sigma_db, delta_m, sigma_aa_db: None };
    let m = sim::synthesize_measurements(&scene, &noise, &mut sim::stream(seed, &[]))
        .map_err(err)?;
    to_py(py, &m)
}

/// Runs the estimator for `scenario` (1 to 4) on a measurement set.
#[pyfunction]
#[pyo3(signature = (scenario_number, measurements, tx_power_dbm=None, ple=None))]
fn estimate<'py>(
    py: Python<'py>,
    scenario_number: u8,
    measurements: &Bound<'py, PyAny>,
    tx_power_dbm: Option<Vec<f64>>,
    ple: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let m: MeasurementSet = from_py(py, measurements)?;
    let adj = m.adjacency().map_err(err)?;
    let known = KnownParams { tx_power_dbm, ple };
    let sc = scenario(scenario_number)?;
    let rep = py
        .detach(|| estimators::estimate(sc, &m, &adj, &known, &EstimatorOptions::default()))
        .map_err(err)?;
    to_py(py, &rep)
}

/// Cramer-Rao bounds for `scene` under `scenario`.
#[pyfunction]
#[pyo3(signature = (scene, scenario_number, sigma_db, delta_m=None))]
fn crlb<'py>(
    py: Python<'py>,
    scene: &Bound<'py, PyAny>,
    scenario_number: u8,
    sigma_db: f64,
    delta_m: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let scene: NetworkScene = from_py(py, scene)?;
    let fim = fisher_information_uniform(
        &scene.theta(),
        &scene.adjacency,
        sigma_db,
        delta_m,
        scenario(scenario_number)?,
    )
    .map_err(err)?;
    to_py(py, &crlb_report(&fim).map_err(err)?)
}

/// Least-squares path-loss fit.
#[pyfunction]
fn fit_pathloss<'py>(py: Python<'py>, d_m: Vec<f64>, rssi_dbm: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if d_m.len() != rssi_dbm.len() {
        return Err(PyValueError::new_err("distance and rssi lengths differ"));
    }
    let pts: Vec<CalibrationPoint> = d_m
        .into_iter()
        .zip(rssi_dbm)
        .map(|(d_m, rssi_dbm)| CalibrationPoint { d_m, rssi_dbm })
        .collect();
    to_py(py, &dataio::fit_pathloss(&pts).map_err(err)?)
}

/// Runs a sweep described by a spec dict.
#[pyfunction]
fn run_sweep<'py>(py: Python<'py>, spec: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let spec: SweepSpec = from_py(py, spec)?;
    let res = py.detach(|| sim::run_sweep(&spec)).map_err(err)?;
    to_py(py, &res)
}

/// Loads a dataset directory and derives the estimation problem.
#[pyfunction]
fn load_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (_, loaded) = dataio::load_dataset(&path, &LoadOptions::default()).map_err(err)?;
    to_py(py, &loaded)
}

#[pymodule]
#[pyo3(name = "rssloc")]
fn rssloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(crlb, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pathloss, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    Ok(())
}
