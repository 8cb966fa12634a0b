//! Python module `mobiscope_py`.
//!
//! Plain Python values cross the boundary: points are `(lat, lon)` tuples,
//! vectors are lists of floats and structured results are dicts decoded
//! from the same JSON the CLI writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mobiscope::cluster::{self, KMeansConfig, SseCurve};
use mobiscope::features::{self, DcdFeatures, OdMatrix, SchemeContext};
use mobiscope::pipeline;
use mobiscope::synth::{self, SynthSpec};
use mobiscope::{DayType, Error, PipelineConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Parameter(_)
        | Error::Shape(_)
        | Error::EmptyInput(_)
        | Error::Precondition(_)
        | Error::UndefinedCorrelation(_)
        | Error::OutOfRegion { .. }
        | Error::Excluded(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn point(lat: f64, lon: f64) -> PyResult<mobiscope::GeoPoint> {
    mobiscope::GeoPoint::new(lat, lon).map_err(to_py_err)
}

fn day_type(name: &str) -> PyResult<DayType> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown day type `{name}` (workday or offday)")))
}

/// A validated WGS84 coordinate.
#[pyclass(frozen, skip_from_py_object, name = "GeoPoint")]
#[derive(Clone, Copy)]
struct PyGeoPoint(mobiscope::GeoPoint);

#[pymethods]
impl PyGeoPoint {
    #[new]
    fn new(lat: f64, lon: f64) -> PyResult<Self> {
        point(lat, lon).map(PyGeoPoint)
    }

    #[getter]
    fn lat(&self) -> f64 {
        self.0.lat()
    }

    #[getter]
    fn lon(&self) -> f64 {
        self.0.lon()
    }

    /// Great-circle distance in km.
    fn distance_km(&self, other: &PyGeoPoint) -> f64 {
        mobiscope::haversine_km(&self.0, &other.0)
    }

    /// The point displaced by the given north and east distances in km.
    fn offset_km(&self, north_km: f64, east_km: f64) -> PyGeoPoint {
        PyGeoPoint(self.0.offset_km(north_km, east_km))
    }

    fn __repr__(&self) -> String {
        format!("GeoPoint({}, {})", self.0.lat(), self.0.lon())
    }
}

/// Four distance bins over ascending km edges.
#[pyclass(frozen, name = "ThresholdScheme")]
struct PyThresholdScheme(features::ThresholdScheme);

#[pymethods]
impl PyThresholdScheme {
    /// `context` is one of dcd_workday, dcd_offday, od_workday, od_offday.
    #[new]
    fn new(context: &str, edges: Vec<f64>) -> PyResult<Self> {
        let ctx = match context {
            "dcd_workday" => SchemeContext::DcdWorkday,
            "dcd_offday" => SchemeContext::DcdOffday,
            "od_workday" => SchemeContext::OdWorkday,
            "od_offday" => SchemeContext::OdOffday,
            other => return Err(PyValueError::new_err(format!("unknown scheme context `{other}`"))),
        };
        features::ThresholdScheme::new(ctx, &edges).map(PyThresholdScheme).map_err(to_py_err)
    }

    #[pyo3(signature = (km, anchor = false))]
    fn bin(&self, km: f64, anchor: bool) -> usize {
        self.0.bin(km, anchor)
    }

    fn labels(&self) -> Vec<String> {
        self.0.labels().to_vec()
    }
}

#[pyfunction]
fn haversine_km(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    Ok(mobiscope::haversine_km(&point(a.0, a.1)?, &point(b.0, b.1)?))
}

#[pyfunction]
fn radius_of_gyration(points: Vec<(f64, f64)>) -> PyResult<f64> {
    let pts = points.into_iter().map(|(a, b)| point(a, b)).collect::<PyResult<Vec<_>>>()?;
    features::radius_of_gyration(&pts).map_err(to_py_err)
}

/// The 20-value clustering vector from a 4x4 OD matrix and 4 DCD shares.
#[pyfunction]
#[pyo3(signature = (od, dcd, day_type_name = "workday"))]
fn feature_vector(od: [[f64; 4]; 4], dcd: [f64; 4], day_type_name: &str) -> PyResult<Vec<f64>> {
    let dt = day_type(day_type_name)?;
    let od = OdMatrix::from_cells(od).map_err(to_py_err)?;
    let dcd = DcdFeatures::from_shares(dcd).map_err(to_py_err)?;
    let v = features::build_feature_vector("python", dt, &od, &dcd).map_err(to_py_err)?;
    Ok(v.values.to_vec())
}

#[pyfunction]
#[pyo3(signature = (vectors, k, seed = 42, restarts = 50, max_iter = 300, tol = 1e-6))]
fn kmeans<'py>(
    py: Python<'py>,
    vectors: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = KMeansConfig { k, seed, restarts, max_iter, tol };
    let model = py.detach(|| cluster::kmeans(&vectors, &cfg)).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("centroids", model.centroids)?;
    out.set_item("assignments", model.assignments)?;
    out.set_item("sse", model.sse)?;
    out.set_item("iterations", model.iterations)?;
    out.set_item("restart", model.restart)?;
    Ok(out)
}

/// Best SSE for every k in `k_min..=k_max`, as `(k, sse)` pairs.
#[pyfunction]
#[pyo3(signature = (vectors, k_min = 1, k_max = 10, seed = 42, restarts = 50))]
fn sse_curve(
    py: Python<'_>,
    vectors: Vec<Vec<f64>>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> PyResult<Vec<(usize, f64)>> {
    let cfg = KMeansConfig { seed, restarts, ..KMeansConfig::default() };
    let curve = py.detach(|| cluster::sse_curve(&vectors, k_min, k_max, &cfg)).map_err(to_py_err)?;
    Ok(curve.points)
}

#[pyfunction]
fn suggest_k(curve: Vec<(usize, f64)>) -> PyResult<usize> {
    cluster::suggest_k(&SseCurve { points: curve }).map_err(to_py_err)
}

/// Pearson's r with a permutation p-value, as `(r, p, n)`.
#[pyfunction]
#[pyo3(signature = (x, y, permutations = 9999, seed = 42))]
fn pearson_r(x: Vec<f64>, y: Vec<f64>, permutations: usize, seed: u64) -> PyResult<(f64, f64, usize)> {
    let c = cluster::pearson_r(&x, &y, permutations, seed).map_err(to_py_err)?;
    Ok((c.r, c.p, c.n))
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    cluster::adjusted_rand_index(&a, &b).map_err(to_py_err)
}

/// Writes a synthetic population into `out_dir` and returns its ground truth.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, homebody = 10, short = 10, long = 10, days = 60, target_r = 0.75))]
#[allow(clippy::too_many_arguments)]
fn synthesize<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    seed: u64,
    homebody: usize,
    short: usize,
    long: usize,
    days: u32,
    target_r: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = SynthSpec { seed, homebody, short, long, days, target_r, ..SynthSpec::default() };
    let truth = py
        .detach(|| {
            spec.validate()?;
            let data = synth::generate(&spec)?;
            data.write_to_dir(&out_dir)?;
            Ok::<_, Error>(data.truth)
        })
        .map_err(to_py_err)?;
    to_py(py, &truth)
}

/// The default configuration as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    PipelineConfig::default().to_toml().map_err(to_py_err)
}

/// Runs every stage on the inputs in `data_dir` and returns the manifest.
/// `config` is TOML text; omitted keys take their defaults.
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, config = None, seed = None))]
fn run_all<'py>(
    py: Python<'py>,
    data_dir: PathBuf,
    out_dir: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(text) => PipelineConfig::from_toml(text).map_err(to_py_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    pipeline::default_input_paths(&mut cfg, &data_dir);
    let manifest = py.detach(|| pipeline::run_all(&cfg, &out_dir)).map_err(to_py_err)?;
    to_py(py, &manifest)
}

#[pymodule]
fn mobiscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeoPoint>()?;
    m.add_class::<PyThresholdScheme>()?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(radius_of_gyration, m)?)?;
    m.add_function(wrap_pyfunction!(feature_vector, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(sse_curve, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_k, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}
