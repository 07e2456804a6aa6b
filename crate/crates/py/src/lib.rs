//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists (through JSON), so Python code sees the same field names as the
//! files a batch writes.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use tradertalk::analysis::{self, ClassifierRules, CompiledRules};
use tradertalk::batch::{self, BackendSpec, BatchOptions};
use tradertalk::llm::{fingerprint_messages, Gateway, ScriptedBackend, ScriptedReply};
use tradertalk::metrics::{self, Z_95};
use tradertalk::model::{SimulationResult, Transcript, GAME_MASTER};
use tradertalk::orchestrator::{run_simulation, RunOptions, TerminationMode};
use tradertalk::scenario::{render_cot_prompt, ScenarioConfig};

create_exception!(tradertalk_py, TraderTalkError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    TraderTalkError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn termination_mode(name: &str) -> PyResult<TerminationMode> {
    match name {
        "rules" => Ok(TerminationMode::Rules),
        "judge" => Ok(TerminationMode::Judge),
        other => Err(PyValueError::new_err(format!("termination {other:?} is not rules or judge"))),
    }
}

/// A scenario: two market makers, their premises, and the run settings.
#[pyclass(name = "Scenario", module = "tradertalk_py", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// `"rq1"`, `"rq2"` or a path to a scenario TOML file.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        ScenarioConfig::resolve(spec).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn scenario_id(&self) -> &str {
        &self.inner.scenario_id
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            tradertalk::scenario::Mode::Rq1 => "rq1",
            tradertalk::scenario::Mode::Rq2 => "rq2",
        }
    }

    #[getter]
    fn max_turns(&self) -> usize {
        self.inner.max_turns
    }

    #[setter]
    fn set_max_turns(&mut self, value: usize) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.max_turns = value;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn agents<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.agents)
    }

    #[getter]
    fn focal_agent(&self) -> String {
        self.inner.focal_agent().name.clone()
    }

    /// The opening messages an agent receives (the initiator by default).
    #[pyo3(signature = (agent=None))]
    fn prompt<'py>(&self, py: Python<'py>, agent: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.opening(agent)?)
    }

    #[pyo3(signature = (agent=None))]
    fn fingerprint(&self, agent: Option<&str>) -> PyResult<String> {
        Ok(fingerprint_messages(&self.opening(agent)?).0)
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, mode={}, max_turns={})", self.inner.scenario_id, self.mode(), self.inner.max_turns)
    }
}

impl PyScenario {
    fn opening(&self, agent: Option<&str>) -> PyResult<Vec<tradertalk::llm::ChatMessage>> {
        let profile = match agent {
            Some(name) => self.inner.agent(name).ok_or_else(|| PyValueError::new_err(format!("no agent named {name}")))?,
            None => self.inner.initiator(),
        };
        render_cot_prompt(profile, &self.inner, &Transcript::new(&self.inner.scenario_id)).map_err(err)
    }
}

/// Compiled classifier rules (the bundled set unless a file or text is given).
#[pyclass(name = "Rules", module = "tradertalk_py")]
struct PyRules {
    inner: CompiledRules,
}

#[pymethods]
impl PyRules {
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let rules = match path {
            Some(p) => ClassifierRules::load(&p).map_err(err)?,
            None => ClassifierRules::default(),
        };
        rules.compile().map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let rules = ClassifierRules::from_toml_str(text).map_err(err)?;
        rules.compile().map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn version(&self) -> &str {
        self.inner.version()
    }
}

fn rules_or_default(rules: Option<&PyRules>) -> &CompiledRules {
    match rules {
        Some(r) => &r.inner,
        None => CompiledRules::default_rules(),
    }
}

/// Builds a transcript from `(speaker, text)` pairs.
fn transcript_from(scenario_id: &str, turns: Vec<(String, String)>) -> Transcript {
    let mut t = Transcript::new(scenario_id);
    for (speaker, text) in turns {
        t.push(speaker, text);
    }
    t
}

/// Notional in a text, or None when absent or ambiguous.
#[pyfunction]
#[pyo3(signature = (text, rules=None))]
fn parse_quantity(text: &str, rules: Option<&PyRules>) -> Option<u64> {
    analysis::parse_quantity(text, rules_or_default(rules))
}

/// `"buy"`, `"sell"`, `"flatten"`, `"no_trade"` or None.
#[pyfunction]
#[pyo3(signature = (text, rules=None))]
fn extract_decision(text: &str, rules: Option<&PyRules>) -> Option<&'static str> {
    analysis::extract_decision(text, rules_or_default(rules)).map(|d| d.as_str())
}

#[pyfunction]
#[pyo3(signature = (turns, rules=None))]
fn classify_intention(turns: Vec<String>, rules: Option<&PyRules>) -> &'static str {
    analysis::classify_intention(&turns, rules_or_default(rules)).as_str()
}

/// Classifies one transcript given as `(speaker, text)` pairs.
#[pyfunction]
#[pyo3(signature = (scenario, turns, run_index=0, rules=None))]
fn analyse<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    turns: Vec<(String, String)>,
    run_index: usize,
    rules: Option<&PyRules>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = &scenario.inner;
    let transcript = transcript_from(&config.scenario_id, turns);
    let result = analysis::analyse(run_index, &transcript, &config.agents, rules_or_default(rules));
    to_py(py, &result)
}

#[pyfunction]
#[pyo3(signature = (successes, n, z=Z_95))]
fn wilson_interval(successes: u64, n: u64, z: f64) -> PyResult<(f64, f64)> {
    metrics::wilson_interval(successes, n, z).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Batch metrics over result dicts (as returned by `analyse` or read from
/// `results.jsonl`).
#[pyfunction]
fn aggregate<'py>(py: Python<'py>, results: &Bound<'py, PyAny>, focal_agent: &str) -> PyResult<Bound<'py, PyAny>> {
    let results: Vec<SimulationResult> = from_py(results)?;
    let metrics = metrics::aggregate(&results, focal_agent).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &metrics)
}

/// Runs one simulation whose agents answer with `replies` in call order
/// (then `default`). Returns the transcript as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, replies, default=None, termination="rules"))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    replies: Vec<String>,
    default: Option<String>,
    termination: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let backend = ScriptedBackend::new(Default::default(), default)
        .with_runs(vec![replies.into_iter().map(ScriptedReply::Text).collect()]);
    let gateway = Gateway::new(backend);
    let options = RunOptions { rules: CompiledRules::default_rules(), termination: termination_mode(termination)? };
    let outcome = run_simulation(&gateway, &scenario.inner, 0, options);
    if let Some(e) = outcome.error {
        return Err(err(e));
    }
    to_py(py, &outcome.transcript)
}

/// Runs a batch and writes it to `out_dir`. `backend` is `"live"`,
/// `"scripted:<file>"` or `"replay:<exchanges.jsonl>"`. Returns
/// `(manifest, metrics)`.
#[pyfunction]
#[pyo3(signature = (scenario, n, backend, out_dir, seed=None, concurrency=None, termination="rules", rules=None))]
#[allow(clippy::too_many_arguments)]
fn run_batch<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    n: usize,
    backend: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    concurrency: Option<usize>,
    termination: &str,
    rules: Option<&PyRules>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let spec: BackendSpec = backend.parse().map_err(PyValueError::new_err)?;
    let gateway = spec.build(seed.unwrap_or(0), None).map_err(err)?;
    let options = BatchOptions {
        n,
        concurrency: concurrency.unwrap_or_else(|| spec.default_concurrency()),
        seed,
        out_dir,
        rules: rules_or_default(rules),
        termination: termination_mode(termination)?,
    };
    let config = &scenario.inner;
    let (manifest, metrics) = py.detach(|| batch::run_batch(config, &gateway, &options)).map_err(err)?;
    Ok((to_py(py, &manifest)?, to_py(py, &metrics)?))
}

/// Classifies a stored `transcripts.jsonl` again and writes the results and
/// metrics to `out_dir`. Returns the metrics.
#[pyfunction]
#[pyo3(signature = (transcripts, out_dir, scenario=None, rules=None))]
fn reanalyse<'py>(
    py: Python<'py>,
    transcripts: PathBuf,
    out_dir: PathBuf,
    scenario: Option<&PyScenario>,
    rules: Option<&PyRules>,
) -> PyResult<Bound<'py, PyAny>> {
    let scenario = scenario.map(|s| s.inner.clone());
    let rules = rules_or_default(rules);
    let metrics = py.detach(|| batch::reanalyse(&transcripts, scenario, rules, None, &out_dir)).map_err(err)?;
    to_py(py, &metrics)
}

#[pymodule]
fn tradertalk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TraderTalkError", m.py().get_type::<TraderTalkError>())?;
    m.add("GAME_MASTER", GAME_MASTER)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRules>()?;
    m.add_function(wrap_pyfunction!(parse_quantity, m)?)?;
    m.add_function(wrap_pyfunction!(extract_decision, m)?)?;
    m.add_function(wrap_pyfunction!(classify_intention, m)?)?;
    m.add_function(wrap_pyfunction!(analyse, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(reanalyse, m)?)?;
    Ok(())
}
