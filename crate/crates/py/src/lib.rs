//! Python bindings. Structured results (summaries, readings, alarms, the
//! ledger) come back as plain dicts and lists, with times in milliseconds.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;
use solarlink::dtmf::{self, AudioBuffer, DataFrame, ToneTiming};
use solarlink::modbus::{self, DeviceAddress, ReadOutcome, ReadRequest, WireFrame};
use solarlink::scenario::{self, Scenario};
use solarlink::server::MemorySink;
use solarlink::store::Store;
use solarlink::SimTime;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn crc16(data: &[u8]) -> u16 {
    modbus::crc16(data)
}

/// Encodes a holding-register read request, CRC included.
#[pyfunction]
fn encode_read_request<'py>(py: Python<'py>, device: u8, start: u16, count: u16) -> PyResult<Bound<'py, PyBytes>> {
    let req = ReadRequest::new(DeviceAddress::new(device).map_err(value_err)?, start, count).map_err(value_err)?;
    Ok(PyBytes::new(py, modbus::encode_read_request(&req).as_bytes()))
}

#[pyfunction]
fn encode_read_response<'py>(py: Python<'py>, device: u8, values: Vec<u16>) -> PyResult<Bound<'py, PyBytes>> {
    let device = DeviceAddress::new(device).map_err(value_err)?;
    let frame = modbus::encode_read_response(device, &values).map_err(value_err)?;
    Ok(PyBytes::new(py, frame.as_bytes()))
}

/// Register values from a reply. A Modbus exception reply raises
/// ValueError naming the exception code.
#[pyfunction]
fn decode_read_response(data: &[u8], expected_count: usize) -> PyResult<Vec<u16>> {
    match modbus::decode_read_response(&WireFrame::from_bytes(data), expected_count).map_err(value_err)? {
        ReadOutcome::Registers(r) => Ok(r.values),
        ReadOutcome::Exception(e) => Err(PyValueError::new_err(format!("exception code {}", e.code as u8))),
    }
}

/// One telemetry record in wire units: centivolts, centiamps, tenths of a kWh.
#[pyclass(name = "DataFrame", eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyDataFrame(DataFrame);

#[pymethods]
impl PyDataFrame {
    #[new]
    #[pyo3(signature = (seq, battery_cv, source_cv, charge_ca, load_ca, energy_dkwh, alarm = false))]
    fn new(seq: u16, battery_cv: u32, source_cv: u32, charge_ca: u32, load_ca: u32, energy_dkwh: u32, alarm: bool) -> PyResult<Self> {
        let f = DataFrame {
            alarm,
            seq,
            battery_cv,
            source_cv,
            charge_ca,
            load_ca,
            energy_dkwh,
        };
        f.validate().map_err(value_err)?;
        Ok(PyDataFrame(f))
    }

    /// Parses keyed text such as `0#5#1262#1800#540#100#4#1*`.
    #[staticmethod]
    fn decode(text: &str) -> PyResult<Self> {
        let symbols = dtmf::parse_symbols(text).map_err(|e| PyValueError::new_err(format!("not a DTMF key: {:?}", e.0)))?;
        dtmf::decode_frame(&symbols).map(PyDataFrame).map_err(value_err)
    }

    fn encode(&self) -> PyResult<String> {
        dtmf::encode_frame(&self.0).map(|s| dtmf::symbols_to_string(&s)).map_err(value_err)
    }

    #[getter]
    fn alarm(&self) -> bool {
        self.0.alarm
    }
    #[getter]
    fn seq(&self) -> u16 {
        self.0.seq
    }
    #[getter]
    fn battery_voltage(&self) -> f64 {
        self.0.battery_voltage()
    }
    #[getter]
    fn source_voltage(&self) -> f64 {
        self.0.source_voltage()
    }
    #[getter]
    fn charge_current(&self) -> f64 {
        self.0.charge_current()
    }
    #[getter]
    fn load_current(&self) -> f64 {
        self.0.load_current()
    }
    #[getter]
    fn total_kwh(&self) -> f64 {
        self.0.total_kwh()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

fn timing(tone_ms: u32, gap_ms: u32, sample_rate: u32) -> PyResult<ToneTiming> {
    let t = ToneTiming {
        tone_ms,
        gap_ms,
        sample_rate,
    };
    t.validate().map_err(value_err)?;
    Ok(t)
}

/// Audio samples for a string of DTMF keys.
#[pyfunction]
#[pyo3(signature = (text, tone_ms = 100, gap_ms = 100, sample_rate = 8000))]
fn synthesize(text: &str, tone_ms: u32, gap_ms: u32, sample_rate: u32) -> PyResult<Vec<f32>> {
    let symbols = dtmf::parse_symbols(text).map_err(|e| PyValueError::new_err(format!("not a DTMF key: {:?}", e.0)))?;
    Ok(dtmf::synthesize(&symbols, &timing(tone_ms, gap_ms, sample_rate)?).samples)
}

/// Keys heard in a block of audio.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 8000))]
fn detect(samples: Vec<f32>, sample_rate: u32) -> String {
    let audio = AudioBuffer {
        samples,
        rate: sample_rate,
    };
    dtmf::symbols_to_string(&dtmf::detect(&audio))
}

/// Minutes billed for an answered call lasting `seconds`.
#[pyfunction]
fn billed_minutes(seconds: f64) -> PyResult<u32> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(PyValueError::new_err("call length must be a non-negative number"));
    }
    Ok(solarlink::telephony::billed_minutes(std::time::Duration::from_secs_f64(seconds)))
}

#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, String)> {
    scenario::list()
}

#[pyfunction]
fn describe(name: &str) -> PyResult<String> {
    scenario::describe(name).map_err(value_err)
}

fn resolve(name_or_path: &str, seed: Option<u64>) -> PyResult<Scenario> {
    let mut s = Scenario::resolve(name_or_path).map_err(value_err)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

/// Runs a scenario to the end, writes its artifacts to `out_dir` and
/// returns the summary.
#[pyfunction]
#[pyo3(signature = (name_or_path, out_dir, seed = None))]
fn run<'py>(py: Python<'py>, name_or_path: &str, out_dir: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let s = resolve(name_or_path, seed)?;
    let sim = py
        .detach(|| scenario::run(s, &out_dir))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    to_py(py, &sim.summary())
}

/// A whole system on one simulated clock, stepped from Python.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation(scenario::Simulation);

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (name_or_path, seed = None))]
    fn new(name_or_path: &str, seed: Option<u64>) -> PyResult<Self> {
        let s = resolve(name_or_path, seed)?;
        scenario::Simulation::new(s, Store::in_memory(), Box::new(MemorySink::default()))
            .map(PySimulation).map_err(value_err)
    }

    /// Seconds since the scenario started.
    #[getter]
    fn now(&self) -> f64 {
        self.0.now().as_secs_f64()
    }

    #[getter]
    fn end(&self) -> f64 {
        self.0.end_time().as_secs_f64()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.0.finished()
    }

    /// Advances by `ticks` loop ticks.
    #[pyo3(signature = (ticks = 1))]
    fn step(&mut self, ticks: u64) -> PyResult<()> {
        for _ in 0..ticks {
            self.0.step().map_err(value_err)?;
        }
        Ok(())
    }

    fn run_to_end(&mut self) -> PyResult<()> {
        self.0.run_to_end().map_err(value_err)
    }

    /// Places an operator call now; returns its call id, or None when the
    /// unit's line was busy and a redial is pending.
    fn poll_now(&mut self) -> PyResult<Option<u64>> {
        self.0.trigger_poll_now().map_err(value_err)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary())
    }

    /// Stored readings with timestamps in `[start, stop]` seconds.
    #[pyo3(signature = (start = 0.0, stop = f64::MAX))]
    fn readings<'py>(&self, py: Python<'py>, start: f64, stop: f64) -> PyResult<Bound<'py, PyAny>> {
        let range = self
            .0
            .server()
            .query_range(SimTime::from_secs_f64(start), SimTime::from_secs_f64(stop));
        to_py(py, &range)
    }

    #[pyo3(signature = (open = None))]
    fn alarms<'py>(&self, py: Python<'py>, open: Option<bool>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.server().alarms(open))
    }

    fn ledger<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.server().ledger())
    }

    fn write_artifacts(&self, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        std::fs::create_dir_all(&out_dir)?;
        self.0
            .write_artifacts(&out_dir)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

#[pymodule]
fn solarlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(crc16, m)?)?;
    m.add_function(wrap_pyfunction!(encode_read_request, m)?)?;
    m.add_function(wrap_pyfunction!(encode_read_response, m)?)?;
    m.add_function(wrap_pyfunction!(decode_read_response, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(billed_minutes, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyDataFrame>()?;
    m.add_class::<PySimulation>()?;
    Ok(())
}
