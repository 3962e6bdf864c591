//! Python bindings: tag streams, correlograms, analyses and scenarios.
//!
//! Structured results (fits, reports, configs) cross the boundary as JSON and
//! are decoded into plain dicts.

use std::collections::BTreeMap;

use hbt_core::analysis::{cs_witness_with_errors, fit_damped_oscillation, flatness, peak_stats};
use hbt_core::correlator::{correlate as correlate_core, correlate_brute as brute_core, Channel};
use hbt_core::scenario::{
    builtin_names as names, builtin_scenario, run_scenario_with, RunOptions, ScenarioConfig,
};
use hbt_core::sources::{analytic_g2 as analytic_core, CorrelatorKind, SourceModel};
use hbt_core::tags::{read_stream_file, write_stream_file};
use hbt_core::{correlator, Error, TimeTag};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(hbt, HbtError, PyException, "Error raised by the hbt core.");

fn err(e: Error) -> PyErr {
    HbtError::new_err(e.to_string())
}

/// Decodes a serializable value into Python objects through `json.loads`.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Sorted photon time tags with integer-picosecond timestamps.
#[pyclass(name = "TagStream", module = "hbt", frozen)]
struct PyTagStream {
    inner: hbt_core::TagStream,
}

#[pymethods]
impl PyTagStream {
    #[new]
    #[pyo3(signature = (times_ps, channels=None, *, duration_ps, channel_count=1, resolution_ps=1))]
    fn new(
        times_ps: Vec<u64>,
        channels: Option<Vec<u8>>,
        duration_ps: u64,
        channel_count: u8,
        resolution_ps: u64,
    ) -> PyResult<Self> {
        let channels = channels.unwrap_or_else(|| vec![0; times_ps.len()]);
        if channels.len() != times_ps.len() {
            return Err(PyValueError::new_err(
                "times_ps and channels differ in length",
            ));
        }
        let tags = times_ps
            .into_iter()
            .zip(channels)
            .map(|(t, c)| TimeTag::new(t, c))
            .collect();
        hbt_core::TagStream::from_unsorted(resolution_ps, duration_ps, channel_count, tags)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Reads a binary `.ptt` stream.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        read_stream_file(path)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_stream_file(&self.inner, path).map_err(err)
    }

    /// Timestamps, optionally restricted to one channel.
    #[pyo3(signature = (channel=None))]
    fn times(&self, channel: Option<u8>) -> Vec<u64> {
        match channel {
            Some(ch) => self.inner.channel_times(ch),
            None => self.inner.tags().iter().map(|t| t.t).collect(),
        }
    }

    fn channels(&self) -> Vec<u8> {
        self.inner.tags().iter().map(|t| t.channel).collect()
    }

    fn count(&self, channel: u8) -> usize {
        self.inner.count(channel)
    }

    #[getter]
    fn duration_ps(&self) -> u64 {
        self.inner.duration_ps()
    }

    #[getter]
    fn resolution_ps(&self) -> u64 {
        self.inner.resolution_ps()
    }

    #[getter]
    fn channel_count(&self) -> u8 {
        self.inner.channel_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "TagStream({} tags, {} channels, {} ps)",
            self.inner.len(),
            self.inner.channel_count(),
            self.inner.duration_ps()
        )
    }
}

/// Normalized coincidence histogram over half-open lag bins.
#[pyclass(name = "Correlogram", module = "hbt", frozen)]
struct PyCorrelogram {
    inner: correlator::Correlogram,
}

#[pymethods]
impl PyCorrelogram {
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        correlator::Correlogram::read_csv_file(path)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv_file(path).map_err(err)
    }

    /// Bin centres in picoseconds.
    #[getter]
    fn tau_ps(&self) -> Vec<f64> {
        self.inner.centers()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts.clone()
    }

    #[getter]
    fn g2(&self) -> Vec<f64> {
        self.inner.g2.clone()
    }

    #[getter]
    fn g2_err(&self) -> Vec<f64> {
        self.inner.g2_err.clone()
    }

    #[getter]
    fn bin_width_ps(&self) -> u64 {
        self.inner.spec.bin_width_ps
    }

    /// Damped-oscillation fit of ln g² as a dict.
    fn fit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let fit = py
            .detach(|| fit_damped_oscillation(&self.inner, None))
            .map_err(err)?;
        to_py(py, &fit)
    }

    fn peak_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &peak_stats(&self.inner).map_err(err)?)
    }

    fn flatness<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &flatness(&self.inner).map_err(err)?)
    }

    /// Cauchy-Schwarz witness W(τ) = g_iv(τ)² / (g_ii(0) g_vv(0)).
    #[pyo3(signature = (gii0, gvv0, gii0_err=0.0, gvv0_err=0.0))]
    fn witness<'py>(
        &self,
        py: Python<'py>,
        gii0: f64,
        gvv0: f64,
        gii0_err: f64,
        gvv0_err: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let w =
            cs_witness_with_errors((gii0, gii0_err), (gvv0, gvv0_err), &self.inner).map_err(err)?;
        to_py(py, &w)
    }

    fn __len__(&self) -> usize {
        self.inner.n_bins()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.spec;
        format!(
            "Correlogram({} bins of {} ps over [{}, {}) ps)",
            s.n_bins(),
            s.bin_width_ps,
            s.tau_min_ps,
            s.tau_max_ps
        )
    }
}

type Inputs<'a> = (Channel<'a>, Channel<'a>, correlator::CorrelogramSpec);

fn inputs<'a>(
    a: &'a PyTagStream,
    ch_a: u8,
    b: &'a PyTagStream,
    ch_b: u8,
    spec: (u64, i64, i64),
) -> PyResult<Inputs<'a>> {
    let spec = correlator::CorrelogramSpec::new(spec.0, spec.1, spec.2).map_err(err)?;
    Ok((
        Channel::new(&a.inner, ch_a),
        Channel::new(&b.inner, ch_b),
        spec,
    ))
}

/// Histogram of b - a delays, normalized to g².
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn correlate(
    py: Python<'_>,
    a: &PyTagStream,
    ch_a: u8,
    b: &PyTagStream,
    ch_b: u8,
    bin_ps: u64,
    tau_min_ps: i64,
    tau_max_ps: i64,
) -> PyResult<PyCorrelogram> {
    let (ca, cb, spec) = inputs(a, ch_a, b, ch_b, (bin_ps, tau_min_ps, tau_max_ps))?;
    let inner = py.detach(|| correlate_core(ca, cb, &spec)).map_err(err)?;
    Ok(PyCorrelogram { inner })
}

/// Quadratic reference implementation of `correlate`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn correlate_brute(
    py: Python<'_>,
    a: &PyTagStream,
    ch_a: u8,
    b: &PyTagStream,
    ch_b: u8,
    bin_ps: u64,
    tau_min_ps: i64,
    tau_max_ps: i64,
) -> PyResult<PyCorrelogram> {
    let (ca, cb, spec) = inputs(a, ch_a, b, ch_b, (bin_ps, tau_min_ps, tau_max_ps))?;
    let inner = py.detach(|| brute_core(ca, cb, &spec)).map_err(err)?;
    Ok(PyCorrelogram { inner })
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    names().to_vec()
}

/// A builtin scenario configuration as a dict.
#[pyfunction]
fn builtin_config<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &builtin_scenario(name).map_err(err)?)
}

/// Runs a builtin (by name) or a configuration given as a JSON string.
/// Returns the report dict and a dict of correlograms by name.
#[pyfunction]
#[pyo3(signature = (name=None, *, config_json=None, seed=None, duration_ps=None, out_dir=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    name: Option<&str>,
    config_json: Option<&str>,
    seed: Option<u64>,
    duration_ps: Option<u64>,
    out_dir: Option<std::path::PathBuf>,
) -> PyResult<(Bound<'py, PyAny>, BTreeMap<String, PyCorrelogram>)> {
    let mut cfg: ScenarioConfig = match (name, config_json) {
        (Some(name), None) => builtin_scenario(name).map_err(err)?,
        (None, Some(text)) => ScenarioConfig::from_json(text).map_err(err)?,
        _ => {
            return Err(PyValueError::new_err(
                "pass exactly one of name or config_json",
            ))
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(d) = duration_ps {
        cfg.duration_ps = d;
    }
    let opts = RunOptions {
        out_dir,
        ..Default::default()
    };
    let run = py
        .detach(|| run_scenario_with(&cfg, &opts))
        .map_err(|e| HbtError::new_err(e.to_string()))?;
    let correlograms = run
        .correlograms
        .into_iter()
        .map(|(k, inner)| (k, PyCorrelogram { inner }))
        .collect();
    Ok((to_py(py, &run.report)?, correlograms))
}

/// Closed-form g²(τ) of a source model given as JSON; `kind` is
/// "auto_total", "auto_mode" or "cross".
#[pyfunction]
fn analytic_g2(model_json: &str, kind: &str, tau_ps: Vec<f64>) -> PyResult<Vec<f64>> {
    let model: SourceModel = from_json(model_json)?;
    let kind: CorrelatorKind = from_json(&format!("\"{kind}\""))?;
    tau_ps
        .into_iter()
        .map(|t| analytic_core(&model, kind, t).map_err(err))
        .collect()
}

#[pymodule]
fn hbt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HbtError", m.py().get_type::<HbtError>())?;
    m.add_class::<PyTagStream>()?;
    m.add_class::<PyCorrelogram>()?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(correlate_brute, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_g2, m)?)?;
    Ok(())
}
