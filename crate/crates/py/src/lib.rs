//! Python bindings: dataset generation, atlas building and queries, and the
//! single sub-region optimizer. Structured results come back as plain
//! dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use seedplan_core::data::{Catalog, VarietyId};
use seedplan_core::datagen::{generate, GenConfig};
use seedplan_core::optimizer::{self, Divisor};
use seedplan_core::pipeline::{self, PipelineConfig, PipelineError, SolutionAtlas};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Argument(_) | PipelineError::UnknownVariety(_) | PipelineError::Config(_) => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Converts through JSON so Python sees dicts, lists, floats and None.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn divisor(name: &str) -> PyResult<Divisor> {
    match name {
        "five" => Ok(Divisor::Five),
        "entry_count" => Ok(Divisor::EntryCount),
        other => Err(value_err(format!("divisor must be 'five' or 'entry_count', got {other:?}"))),
    }
}

fn variety_ids(names: &[String]) -> PyResult<Vec<VarietyId>> {
    names.iter().map(|n| VarietyId::new(n.as_str()).map_err(value_err)).collect()
}

/// Writes a seeded synthetic dataset (region.csv, experiments.csv) to `out`
/// and returns (sub-regions, varieties, experiments).
#[pyfunction]
#[pyo3(signature = (out, seed=7, subregions=50, varieties=20, start_year=2000, end_year=2015, noise=0.05, experiments_per_pair=2))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out: PathBuf,
    seed: u64,
    subregions: usize,
    varieties: usize,
    start_year: i32,
    end_year: i32,
    noise: f64,
    experiments_per_pair: usize,
) -> PyResult<(usize, usize, usize)> {
    let ds = generate(&GenConfig {
        n_subregions: subregions,
        n_varieties: varieties,
        start_year,
        end_year,
        seed,
        noise_scale: noise,
        experiments_per_pair,
    })
    .map_err(value_err)?;
    ds.catalog.write_dir(&out).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let c = &ds.catalog;
    Ok((c.sub_regions.len(), c.varieties.len(), c.experiments.len()))
}

/// Best mix for one sub-region: moments are normalized, the top `k` kept,
/// and the LP solved at budget `tau`. Returns None when infeasible.
#[pyfunction]
#[pyo3(signature = (varieties, expected, variance, tau, k=None, divisor="five"))]
fn optimize(
    py: Python<'_>,
    varieties: Vec<String>,
    expected: Vec<f64>,
    variance: Vec<f64>,
    tau: f64,
    k: Option<usize>,
    divisor: &str,
) -> PyResult<Py<PyAny>> {
    if varieties.len() != expected.len() || varieties.len() != variance.len() {
        return Err(value_err("varieties, expected and variance must have equal length"));
    }
    let raw: Vec<(VarietyId, f64, f64)> = variety_ids(&varieties)?
        .into_iter()
        .zip(expected)
        .zip(variance)
        .map(|((v, e), var)| (v, e, var))
        .collect();
    let stats = optimizer::normalize_stats(&raw);
    let k = k.unwrap_or(stats.len().min(optimizer::MAX_TOP_K));
    let top = optimizer::top_k(&stats, k).map_err(value_err)?;
    let solution = optimizer::optimize_subregion(&top, tau, self::divisor(divisor)?).map_err(value_err)?;
    to_py(py, &solution)
}

/// Great-circle distance in miles between two (lat, lon) points.
#[pyfunction]
fn haversine_miles(a: (f64, f64), b: (f64, f64)) -> f64 {
    seedplan_core::cohesion::haversine_miles(a, b)
}

/// The fixed budget grid 0.1, 0.2, ..., 1.0.
#[pyfunction]
fn tau_grid() -> Vec<f64> {
    optimizer::tau_grid().to_vec()
}

/// A solution atlas: per sub-region top-k, budget sweep, default mixes and
/// cohesion.
#[pyclass(frozen)]
struct Atlas {
    inner: SolutionAtlas,
}

#[pymethods]
impl Atlas {
    /// Trains both models on the dataset in `data_dir` and builds the atlas.
    /// `config` is a JSON object with pipeline settings; omitted keys use
    /// defaults.
    #[staticmethod]
    #[pyo3(signature = (data_dir, config=None))]
    fn build(py: Python<'_>, data_dir: PathBuf, config: Option<&str>) -> PyResult<Self> {
        let config: PipelineConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => PipelineConfig::default(),
        };
        config.validate().map_err(pipeline_err)?;
        py.detach(|| {
            let catalog = Catalog::load_dir(&data_dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            let forecasts = pipeline::train_forecast_models(&catalog.sub_regions, &config.forecast).map_err(pipeline_err)?;
            let (train, _, _) = pipeline::split_experiments(&catalog, &config).map_err(pipeline_err)?;
            let model = pipeline::train_yield_model(&train, &config).map_err(pipeline_err)?;
            let inner = pipeline::build_atlas(&catalog, &forecasts, &model, &config).map_err(pipeline_err)?;
            Ok(Atlas { inner })
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }

    #[staticmethod]
    fn from_json(data: &[u8]) -> PyResult<Self> {
        let inner = SolutionAtlas::from_json(data).map_err(value_err)?;
        Ok(Atlas { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = self.inner.to_json().map_err(pipeline_err)?;
        String::from_utf8(bytes).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let bytes = self.inner.to_json().map_err(pipeline_err)?;
        seedplan_core::data::write_atomic(&path, &bytes).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.sub_regions.len()
    }

    #[getter]
    fn varieties(&self) -> Vec<String> {
        self.inner.varieties.iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn sub_region_ids(&self) -> Vec<String> {
        self.inner.sub_regions.iter().map(|r| r.id.clone()).collect()
    }

    #[getter]
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary)
    }

    #[getter]
    fn tau_summaries(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.tau_summaries)
    }

    /// The full record of one sub-region.
    fn sub_region(&self, py: Python<'_>, id: &str) -> PyResult<Py<PyAny>> {
        let record = self.inner.sub_region(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        to_py(py, record)
    }

    /// The default mix of a sub-region, or the mix at budget `tau`.
    #[pyo3(signature = (id, tau=None))]
    fn solution(&self, py: Python<'_>, id: &str, tau: Option<f64>) -> PyResult<Py<PyAny>> {
        let record = self.inner.sub_region(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        match tau {
            None => to_py(py, &record.default_solution),
            Some(t) => {
                optimizer::tau_index(t).ok_or_else(|| value_err(format!("tau {t} is not on the grid 0.1..=1.0")))?;
                to_py(py, &record.solution_at(t))
            }
        }
    }

    /// Varieties ranked by expected weight across sub-regions.
    #[pyo3(signature = (tau=None))]
    fn prevalence(&self, py: Python<'_>, tau: Option<f64>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::prevalence_ranking(&self.inner, tau).map_err(pipeline_err)?)
    }

    /// Sub-regions whose mix holds any of `varieties` with weight in `range`.
    #[pyo3(signature = (varieties, range=None, tau=None))]
    fn highlight(&self, varieties: Vec<String>, range: Option<(f64, f64)>, tau: Option<f64>) -> PyResult<Vec<String>> {
        let ids = variety_ids(&varieties)?;
        let hits = pipeline::highlight_subregions(&self.inner, &ids, range, tau).map_err(pipeline_err)?;
        Ok(hits.into_iter().collect())
    }

    /// One mix of the chosen varieties applied to every sub-region.
    fn common_solution(&self, py: Python<'_>, varieties: Vec<String>) -> PyResult<Py<PyAny>> {
        let ids = variety_ids(&varieties)?;
        to_py(py, &pipeline::common_solution(&self.inner, &ids).map_err(pipeline_err)?)
    }

    /// Differentiated mixes against the common mix of `varieties` (the five
    /// most prevalent when omitted).
    #[pyo3(signature = (varieties=None))]
    fn compare(&self, py: Python<'_>, varieties: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
        let ids = varieties.as_deref().map(variety_ids).transpose()?;
        to_py(py, &pipeline::compare_solutions(&self.inner, ids.as_deref()).map_err(pipeline_err)?)
    }
}

#[pymodule]
fn seedplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Atlas>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_miles, m)?)?;
    m.add_function(wrap_pyfunction!(tau_grid, m)?)?;
    Ok(())
}
