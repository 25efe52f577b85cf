//! Python bindings for the lens analytics pipeline.
//!
//! Results cross the boundary as plain dicts and lists mirroring the CLI's
//! JSON shapes, so Python callers see the same schema as file consumers.

use std::fs::File;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde_json::{json, Value};

use lens_core::dilution::residual_spearman_with_ci;
use lens_core::ingest;
use lens_core::loyalty::{loyalty_table, LoyaltyWeights};
use lens_core::overlap::{pairwise_overlap, symmetrize, OverlapMatrix};
use lens_core::permtest::permutation_test;
use lens_core::report;
use lens_core::sim::{generate, SimConfig};
use lens_core::stats::spearman_rho;
use lens_core::transfer::{detect_transfers, summarize_transfers, TransferParams};

fn to_py_err(e: lens_core::Error) -> PyErr {
    match e {
        lens_core::Error::Io(err) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any().unbind()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any().unbind()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, to_py(py, val)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

/// Immutable minute-level viewership panel.
#[pyclass(frozen, module = "pylens")]
struct Panel {
    inner: lens_core::panel::Panel,
}

#[pymethods]
impl Panel {
    /// Load and validate the two-file CSV schema; returns (Panel, report).
    #[staticmethod]
    #[pyo3(signature = (streams, obs, strict=false))]
    fn from_csv(
        py: Python<'_>,
        streams: PathBuf,
        obs: PathBuf,
        strict: bool,
    ) -> PyResult<(Panel, Py<PyAny>)> {
        let (panel, rep) = ingest::load_panel(&streams, &obs, strict).map_err(to_py_err)?;
        let rep = serde_json::to_value(&rep).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((Panel { inner: panel }, to_py(py, &rep)?))
    }

    #[staticmethod]
    fn from_cache(path: PathBuf) -> PyResult<Panel> {
        let (panel, _) = ingest::load_cache(&path).map_err(to_py_err)?;
        Ok(Panel { inner: panel })
    }

    fn save_cache(&self, path: PathBuf) -> PyResult<()> {
        let report = Default::default();
        ingest::save_cache(&self.inner, &report, &path).map_err(to_py_err)
    }

    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner.channels().iter().map(|c| c.id.clone()).collect()
    }

    #[getter]
    fn n_streams(&self) -> usize {
        self.inner.streams().len()
    }

    #[getter]
    fn n_observations(&self) -> usize {
        self.inner.n_observations()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(channels={}, streams={}, observations={})",
            self.inner.channels().len(),
            self.inner.streams().len(),
            self.inner.n_observations()
        )
    }
}

fn matrix_json(m: &OverlapMatrix) -> Value {
    let n = m.n();
    let rows: Vec<Value> = (0..n)
        .map(|i| Value::Array((0..n).map(|j| json!(m.get(i, j))).collect()))
        .collect();
    let counts: Vec<Value> = (0..n)
        .map(|i| Value::Array((0..n).map(|j| json!(m.count(i, j))).collect()))
        .collect();
    json!({
        "channels": m.channels,
        "values": rows,
        "event_counts": counts,
        "skipped_events": m.skipped_events,
        "symmetrized": m.symmetrized,
    })
}

/// Symmetrized pairwise overlap matrix from stream-start deltas.
#[pyfunction]
#[pyo3(signature = (panel, delta=8, lenient_symmetry=false))]
fn overlap(
    py: Python<'_>,
    panel: PyRef<'_, Panel>,
    delta: i64,
    lenient_symmetry: bool,
) -> PyResult<Py<PyAny>> {
    if delta < 1 {
        return Err(PyValueError::new_err("delta must be >= 1"));
    }
    let raw = pairwise_overlap(&panel.inner, delta);
    to_py(py, &matrix_json(&symmetrize(&raw, lenient_symmetry)))
}

/// Transfer events plus the efficiency summary.
#[pyfunction]
#[pyo3(signature = (panel, pre=3, post=5, rel=0.10, abs=100.0, src_frac=0.05, min_final=200))]
#[allow(clippy::too_many_arguments)]
fn transfers(
    py: Python<'_>,
    panel: PyRef<'_, Panel>,
    pre: i64,
    post: i64,
    rel: f64,
    abs: f64,
    src_frac: f64,
    min_final: u32,
) -> PyResult<Py<PyAny>> {
    let params = TransferParams {
        pre_window_minutes: pre,
        post_window_minutes: post,
        rel_spike_threshold: rel,
        abs_spike_threshold: abs,
        source_fraction_threshold: src_frac,
        min_final_viewers: min_final,
        ..TransferParams::default()
    };
    let scan = detect_transfers(&panel.inner, &params).map_err(to_py_err)?;
    let events: Vec<Value> = scan
        .events
        .iter()
        .map(|e| {
            json!({
                "source_stream": e.source_stream,
                "receiving_stream": e.receiving_stream,
                "t_e": e.t_e.0,
                "pre_mean": e.pre_mean,
                "post_peak": e.post_peak,
                "spike": e.spike,
                "source_final_viewers": e.source_final_viewers,
                "source_stream_average": e.source_stream_average,
                "efficiency": e.efficiency,
                "over_unity": e.over_unity,
                "source_channel": e.source_channel,
                "receiving_channel": e.receiving_channel,
            })
        })
        .collect();
    let summary = report::transfer_summary_json(&summarize_transfers(&scan.events));
    to_py(py, &json!({"events": events, "summary": summary}))
}

/// Dilution buckets and residual Spearman rho with a block-bootstrap CI.
#[pyfunction]
#[pyo3(signature = (panel, channels=None, iterations=2000, level=0.95, seed=42, tz_offset_minutes=0))]
fn dilution(
    py: Python<'_>,
    panel: PyRef<'_, Panel>,
    channels: Option<Vec<String>>,
    iterations: usize,
    level: f64,
    seed: u64,
    tz_offset_minutes: i64,
) -> PyResult<Py<PyAny>> {
    let scope = channels.unwrap_or_else(|| {
        panel.inner.channels().iter().map(|c| c.id.clone()).collect()
    });
    let r = residual_spearman_with_ci(&panel.inner, &scope, iterations, level, seed, tz_offset_minutes)
        .map_err(to_py_err)?;
    to_py(py, &report::dilution_json(&r, &scope))
}

/// Per-channel loyalty components; None marks undefined components.
#[pyfunction]
#[pyo3(signature = (panel, weights=(0.30, 0.25, 0.25, 0.20), competed_min_fraction=0.0))]
fn loyalty(
    py: Python<'_>,
    panel: PyRef<'_, Panel>,
    weights: (f64, f64, f64, f64),
    competed_min_fraction: f64,
) -> PyResult<Py<PyAny>> {
    let w = LoyaltyWeights { w_s: weights.0, w_r: weights.1, w_p: weights.2, w_f: weights.3 };
    let rows = loyalty_table(&panel.inner, &w, competed_min_fraction).map_err(to_py_err)?;
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "channel": r.channel,
                "S": r.s,
                "R": r.r,
                "P": r.p,
                "F": r.f,
                "L": r.l,
                "n_streams": r.n_streams,
                "n_competed": r.n_competed,
                "n_solo": r.n_solo,
            })
        })
        .collect();
    to_py(py, &Value::Array(rows))
}

/// Schedule-coordination permutation test over all channel pairs.
#[pyfunction]
#[pyo3(signature = (panel, iterations=1000, seed=42, alpha=0.01))]
fn permtest(
    py: Python<'_>,
    panel: PyRef<'_, Panel>,
    iterations: usize,
    seed: u64,
    alpha: f64,
) -> PyResult<Py<PyAny>> {
    let r = permutation_test(&panel.inner, iterations, seed, alpha).map_err(to_py_err)?;
    let pairs: Vec<Value> = r
        .pairs
        .iter()
        .map(|p| {
            json!({
                "channel_a": p.channel_a,
                "channel_b": p.channel_b,
                "observed": p.observed,
                "null_mean": p.null_mean,
                "null_sd": p.null_sd,
                "p_value": p.p_value,
            })
        })
        .collect();
    let mut out = report::permtest_summary_json(&r);
    out["pairs"] = Value::Array(pairs);
    to_py(py, &out)
}

/// Generate a synthetic panel from a scenario file; returns (Panel, truth).
#[pyfunction]
#[pyo3(signature = (scenario, seed=None))]
fn simulate(py: Python<'_>, scenario: PathBuf, seed: Option<u64>) -> PyResult<(Panel, Py<PyAny>)> {
    let file = File::open(&scenario)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", scenario.display())))?;
    let mut cfg: SimConfig =
        serde_json::from_reader(file).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (panel, truth) = generate(&cfg).map_err(to_py_err)?;
    let truth = serde_json::to_value(&truth).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((Panel { inner: panel }, to_py(py, &truth)?))
}

/// Spearman rank correlation with average ranks for ties.
#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    spearman_rho(&xs, &ys).map_err(to_py_err)
}

#[pymodule]
fn pylens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(transfers, m)?)?;
    m.add_function(wrap_pyfunction!(dilution, m)?)?;
    m.add_function(wrap_pyfunction!(loyalty, m)?)?;
    m.add_function(wrap_pyfunction!(permtest, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    Ok(())
}
