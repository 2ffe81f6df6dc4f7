//! Python bindings: workload and cache types, trace totals, simulation,
//! stack distances and the closed-form models.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use wavecache::analytic::{sectors_causal_approx, sectors_noncausal_approx};
use wavecache::cachesim::{classify, CacheStats, Counters, SimFidelity};
use wavecache::experiment::{run_oracle as core_run_oracle, OracleConfig};
use wavecache::model::{Associativity, AttentionConfig, CacheModel, ScanOrder, ScheduleKind, SchedulePolicy};
use wavecache::rdist::stack_distances_capped;
use wavecache::tracegen::{AccessTrace, Tensor};

fn err(e: wavecache::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn schedule(name: &str) -> PyResult<SchedulePolicy> {
    let kind = match name {
        "persistent" => ScheduleKind::PersistentRoundRobin,
        "nonpersistent" => ScheduleKind::NonPersistent,
        "contiguous" => ScheduleKind::PersistentContiguous,
        "tilestep2" => ScheduleKind::TileStep2,
        other => return Err(PyValueError::new_err(format!("unknown schedule `{other}`"))),
    };
    Ok(SchedulePolicy::new(kind))
}

fn scan(name: &str) -> PyResult<ScanOrder> {
    match name {
        "cyclic" => Ok(ScanOrder::Cyclic),
        "sawtooth" => Ok(ScanOrder::Sawtooth),
        other => Err(PyValueError::new_err(format!("unknown scan order `{other}`"))),
    }
}

fn fidelity(name: &str) -> PyResult<SimFidelity> {
    match name {
        "sector" => Ok(SimFidelity::SectorExact),
        "tileblock" => Ok(SimFidelity::TileBlock),
        other => Err(PyValueError::new_err(format!("unknown fidelity `{other}`"))),
    }
}

#[pyclass(name = "AttentionConfig", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyAttentionConfig {
    inner: AttentionConfig,
}

#[pymethods]
impl PyAttentionConfig {
    #[new]
    #[pyo3(signature = (seq_len=32768, head_dim=64, tile=80, elem_bytes=2, batch=1, heads=1, causal=false))]
    fn new(seq_len: u64, head_dim: u64, tile: u64, elem_bytes: u64, batch: u64, heads: u64, causal: bool) -> Self {
        Self { inner: AttentionConfig { seq_len, head_dim, tile, elem_bytes, batch, heads, causal } }
    }

    #[getter]
    fn seq_len(&self) -> u64 {
        self.inner.seq_len
    }
    #[getter]
    fn head_dim(&self) -> u64 {
        self.inner.head_dim
    }
    #[getter]
    fn tile(&self) -> u64 {
        self.inner.tile
    }
    #[getter]
    fn elem_bytes(&self) -> u64 {
        self.inner.elem_bytes
    }
    #[getter]
    fn batch(&self) -> u64 {
        self.inner.batch
    }
    #[getter]
    fn heads(&self) -> u64 {
        self.inner.heads
    }
    #[getter]
    fn causal(&self) -> bool {
        self.inner.causal
    }

    fn num_q_tiles(&self) -> u64 {
        self.inner.num_q_tiles()
    }

    #[pyo3(name = "to_json")]
    fn json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "AttentionConfig(seq_len={}, head_dim={}, tile={}, elem_bytes={}, batch={}, heads={}, causal={})",
            c.seq_len,
            c.head_dim,
            c.tile,
            c.elem_bytes,
            c.batch,
            c.heads,
            if c.causal { "True" } else { "False" }
        )
    }
}

#[pyclass(name = "CacheModel", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyCacheModel {
    inner: CacheModel,
}

#[pymethods]
impl PyCacheModel {
    /// `ways=0` is fully associative.
    #[new]
    #[pyo3(signature = (capacity_bytes=24 * 1024 * 1024, sector_bytes=32, n_sm=48, ways=0))]
    fn new(capacity_bytes: u64, sector_bytes: u64, n_sm: u32, ways: u32) -> Self {
        let associativity = if ways == 0 { Associativity::Full } else { Associativity::Ways(ways) };
        Self { inner: CacheModel { sector_bytes, capacity_bytes, associativity, n_sm } }
    }

    #[getter]
    fn capacity_bytes(&self) -> u64 {
        self.inner.capacity_bytes
    }
    #[getter]
    fn sector_bytes(&self) -> u64 {
        self.inner.sector_bytes
    }
    #[getter]
    fn n_sm(&self) -> u32 {
        self.inner.n_sm
    }

    fn capacity_sectors(&self) -> u64 {
        self.inner.capacity_sectors()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("CacheModel(capacity_bytes={}, sector_bytes={}, n_sm={})", c.capacity_bytes, c.sector_bytes, c.n_sm)
    }
}

/// Counters of one simulation run.
#[pyclass(name = "SimResult", frozen, skip_from_py_object)]
struct PySimResult {
    stats: CacheStats,
}

fn counters_dict<'py>(py: Python<'py>, c: &Counters) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accesses", c.accesses)?;
    d.set_item("hits", c.hits)?;
    d.set_item("misses", c.misses)?;
    d.set_item("compulsory_misses", c.compulsory_misses)?;
    d.set_item("non_compulsory_misses", c.non_compulsory_misses)?;
    Ok(d)
}

#[pymethods]
impl PySimResult {
    #[getter]
    fn accesses(&self) -> u64 {
        self.stats.total.accesses
    }
    #[getter]
    fn hits(&self) -> u64 {
        self.stats.total.hits
    }
    #[getter]
    fn misses(&self) -> u64 {
        self.stats.total.misses
    }
    #[getter]
    fn compulsory_misses(&self) -> u64 {
        self.stats.total.compulsory_misses
    }
    #[getter]
    fn non_compulsory_misses(&self) -> u64 {
        self.stats.total.non_compulsory_misses
    }
    #[getter]
    fn hit_rate(&self) -> f64 {
        self.stats.hit_rate()
    }
    #[getter]
    fn kv_hit_rate(&self) -> f64 {
        self.stats.kv_hit_rate()
    }

    /// Counters for one of `"q"`, `"k"`, `"v"`, `"o"`.
    fn tensor<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyDict>> {
        let t = Tensor::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| PyValueError::new_err(format!("unknown tensor `{name}`")))?;
        counters_dict(py, self.stats.tensor(t))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.stats).expect("stats serialize")
    }
}

#[pyfunction]
#[pyo3(signature = (config, cache, schedule_name="persistent"))]
fn validate(config: PyRef<'_, PyAttentionConfig>, cache: PyRef<'_, PyCacheModel>, schedule_name: &str) -> PyResult<Vec<String>> {
    let sched = schedule(schedule_name)?;
    Ok(match wavecache::model::validate(&config.inner, &cache.inner, &sched) {
        Ok(()) => Vec::new(),
        Err(e) => e.0,
    })
}

#[pyfunction]
fn sectors_per_tile(rows: u64, head_dim: u64, elem_bytes: u64, sector_bytes: u64) -> u64 {
    wavecache::model::sectors_per_tile(rows, head_dim, elem_bytes, sector_bytes)
}

#[pyfunction]
fn kv_bytes(config: PyRef<'_, PyAttentionConfig>) -> u64 {
    wavecache::model::kv_bytes(&config.inner)
}

fn build_trace(config: &AttentionConfig, cache: &CacheModel, sched: &str, order: &str) -> PyResult<AccessTrace> {
    AccessTrace::new(config, cache, &schedule(sched)?, scan(order)?).map_err(err)
}

/// Per-tensor sector counts of the trace, from the closed form.
#[pyfunction]
#[pyo3(signature = (config, cache, schedule="persistent", scan="cyclic"))]
fn trace_totals(
    config: PyRef<'_, PyAttentionConfig>,
    cache: PyRef<'_, PyCacheModel>,
    schedule: &str,
    scan: &str,
) -> PyResult<BTreeMap<&'static str, u64>> {
    let totals = build_trace(&config.inner, &cache.inner, schedule, scan)?.expected_totals();
    let mut out: BTreeMap<&'static str, u64> = Tensor::ALL.into_iter().map(|t| (t.name(), totals.get(t))).collect();
    out.insert("total", totals.total());
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (config, cache, schedule="persistent", scan="cyclic", fidelity="sector"))]
fn simulate(
    py: Python<'_>,
    config: PyRef<'_, PyAttentionConfig>,
    cache: PyRef<'_, PyCacheModel>,
    schedule: &str,
    scan: &str,
    fidelity: &str,
) -> PyResult<PySimResult> {
    let trace = build_trace(&config.inner, &cache.inner, schedule, scan)?;
    let mode = self::fidelity(fidelity)?;
    let cache = cache.inner;
    let stats = py.detach(|| wavecache::cachesim::simulate(&trace, &cache, mode)).map_err(err)?;
    Ok(PySimResult { stats })
}

/// Cyclic-vs-candidate comparison; returns the reduction report as a dict.
#[pyfunction]
#[pyo3(signature = (config, cache, baseline_scan="cyclic", candidate_scan="sawtooth", schedule="persistent", fidelity="tileblock"))]
fn compare<'py>(
    py: Python<'py>,
    config: PyRef<'_, PyAttentionConfig>,
    cache: PyRef<'_, PyCacheModel>,
    baseline_scan: &str,
    candidate_scan: &str,
    schedule: &str,
    fidelity: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let base = build_trace(&config.inner, &cache.inner, schedule, baseline_scan)?;
    let cand = build_trace(&config.inner, &cache.inner, schedule, candidate_scan)?;
    let mode = self::fidelity(fidelity)?;
    let cache = cache.inner;
    let report = py
        .detach(|| {
            let a = wavecache::cachesim::simulate(&base, &cache, mode)?;
            let b = wavecache::cachesim::simulate(&cand, &cache, mode)?;
            classify(&a, &b)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("baseline_non_compulsory", report.baseline_non_compulsory)?;
    d.set_item("candidate_non_compulsory", report.candidate_non_compulsory)?;
    d.set_item("non_compulsory_delta", report.non_compulsory_delta)?;
    d.set_item("non_compulsory_reduction", report.non_compulsory_reduction)?;
    d.set_item("baseline_misses", report.baseline_misses)?;
    d.set_item("candidate_misses", report.candidate_misses)?;
    d.set_item("miss_reduction", report.miss_reduction)?;
    d.set_item("note", report.note)?;
    Ok(d)
}

/// Stack-distance histogram: `(counts, overflow, infinite)`.
#[pyfunction]
#[pyo3(signature = (keys, cap=None))]
fn stack_distances(keys: Vec<u64>, cap: Option<u64>) -> (BTreeMap<u64, u64>, u64, u64) {
    let h = stack_distances_capped(keys, cap);
    (h.counts, h.overflow, h.infinite)
}

/// LRU misses of `keys` at every capacity in `capacities`, predicted from
/// stack distances.
#[pyfunction]
fn lru_misses(keys: Vec<u64>, capacities: Vec<u64>) -> PyResult<Vec<u64>> {
    let h = wavecache::rdist::stack_distances(keys);
    capacities.into_iter().map(|c| h.misses_at_capacity(c).map_err(err)).collect()
}

#[pyfunction]
#[pyo3(signature = (seq_len, head_dim=64, elem_bytes=2, sector_bytes=32, tile=80, causal=false))]
fn model_sectors(seq_len: u64, head_dim: u64, elem_bytes: u64, sector_bytes: u64, tile: u64, causal: bool) -> (f64, f64) {
    let f = if causal { sectors_causal_approx } else { sectors_noncausal_approx };
    let m = f(seq_len, head_dim, elem_bytes, sector_bytes, tile);
    (m.qo, m.kv)
}

#[pyfunction]
#[pyo3(signature = (seq_len, head_dim=64, elem_bytes=2, sector_bytes=32))]
fn cold_sectors(seq_len: u64, head_dim: u64, elem_bytes: u64, sector_bytes: u64) -> u64 {
    wavecache::analytic::cold_sectors(seq_len, head_dim, elem_bytes, sector_bytes)
}

#[pyfunction]
fn hit_rate_model(n_sm: u32) -> f64 {
    wavecache::analytic::hit_rate_model(n_sm)
}

/// `(capacity_bound, expected_onset, overhead_adjusted)` in sequence length.
#[pyfunction]
#[pyo3(signature = (cache, head_dim=64, elem_bytes=2, tile=None))]
fn divergence_length(
    cache: PyRef<'_, PyCacheModel>,
    head_dim: u64,
    elem_bytes: u64,
    tile: Option<u64>,
) -> (f64, f64, Option<f64>) {
    let d = wavecache::analytic::divergence_length(&cache.inner, head_dim, elem_bytes, tile);
    (d.capacity_bound, d.expected_onset, d.overhead_adjusted)
}

/// MAPE in percent over `(observed, predicted)` pairs.
#[pyfunction]
fn mape(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    wavecache::analytic::mape(&pairs).map_err(err)
}

/// Runs the LRU/stack-distance cross-check; returns `(passed, cases, capacity_checks)`.
#[pyfunction]
#[pyo3(signature = (seed=0, traces=100, max_events=10_000, max_distinct=256))]
fn run_oracle(py: Python<'_>, seed: u64, traces: usize, max_events: usize, max_distinct: u64) -> (bool, usize, u64) {
    let r = py.detach(|| core_run_oracle(OracleConfig { seed, traces, max_events, max_distinct }));
    (r.passed, r.cases, r.capacity_checks)
}

#[pymodule]
fn wavecache_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyAttentionConfig>()?;
    m.add_class::<PyCacheModel>()?;
    m.add_class::<PySimResult>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(sectors_per_tile, m)?)?;
    m.add_function(wrap_pyfunction!(kv_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(trace_totals, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(stack_distances, m)?)?;
    m.add_function(wrap_pyfunction!(lru_misses, m)?)?;
    m.add_function(wrap_pyfunction!(model_sectors, m)?)?;
    m.add_function(wrap_pyfunction!(cold_sectors, m)?)?;
    m.add_function(wrap_pyfunction!(hit_rate_model, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_length, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle, m)?)?;
    Ok(())
}
