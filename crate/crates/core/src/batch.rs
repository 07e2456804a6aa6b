//! Runs many simulations with bounded concurrency and persists them in
//! run_index order through a single writer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use thiserror::Error;

use crate::analysis::{analyse, CompiledRules, JudgeClassifier};
use crate::llm::{
    BackendKind, CallContext, Gateway, LiveBackend, LiveConfig, LlmError, LlmExchange, ReplayBackend, ScriptFile,
    ScriptedBackend,
};
use crate::metrics::{aggregate, BatchMetrics, MetricsError};
use crate::model::SimulationResult;
use crate::orchestrator::{run_simulation, RunOptions, TerminationMode};
use crate::report::{
    emit_report, read_json, read_jsonl, write_json_line, ReportError, RunErrorRecord, RunManifest, TranscriptRecord,
    EXCHANGES_FILE, MANIFEST_FILE, RESULTS_FILE, TRANSCRIPTS_FILE,
};
use crate::scenario::ScenarioConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_LIVE_CONCURRENCY: usize = 4;
pub const DEFAULT_OFFLINE_CONCURRENCY: usize = 16;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<LlmError> for BatchError {
    fn from(e: LlmError) -> Self {
        BatchError::Config(e.to_string())
    }
}

/// Where completions come from, as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Live,
    Scripted(PathBuf),
    Replay(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "live" => Ok(BackendSpec::Live),
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendSpec::Scripted(path.into())),
            Some(("replay", path)) if !path.is_empty() => Ok(BackendSpec::Replay(path.into())),
            _ => Err(format!("backend {s:?} is not live, scripted:<file> or replay:<log>")),
        }
    }
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::Live => BackendKind::Live,
            BackendSpec::Scripted(_) => BackendKind::Scripted,
            BackendSpec::Replay(_) => BackendKind::Replay,
        }
    }

    pub fn default_concurrency(&self) -> usize {
        match self {
            BackendSpec::Live => DEFAULT_LIVE_CONCURRENCY,
            _ => DEFAULT_OFFLINE_CONCURRENCY,
        }
    }

    /// Builds the gateway. A live backend without an API key fails here,
    /// before any request is sent.
    pub fn build(&self, seed: u64, requests_per_minute: Option<u32>) -> Result<Gateway, LlmError> {
        Ok(match self {
            BackendSpec::Live => {
                let mut config = LiveConfig::from_env()?;
                config.requests_per_minute = requests_per_minute;
                Gateway::new(LiveBackend::new(config))
            }
            BackendSpec::Scripted(path) => Gateway::new(ScriptedBackend::from_file(ScriptFile::load(path)?, seed)),
            BackendSpec::Replay(path) => Gateway::new(ReplayBackend::from_path(path)?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions<'r> {
    pub n: usize,
    pub concurrency: usize,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub rules: &'r CompiledRules,
    pub termination: TerminationMode,
}

impl BatchOptions<'static> {
    pub fn new(n: usize, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            n,
            concurrency: DEFAULT_OFFLINE_CONCURRENCY,
            seed: None,
            out_dir: out_dir.into(),
            rules: CompiledRules::default_rules(),
            termination: TerminationMode::Rules,
        }
    }
}

struct Finished {
    run_index: usize,
    record: TranscriptRecord,
    result: SimulationResult,
    exchanges: Vec<LlmExchange>,
    error: Option<LlmError>,
}

struct Writers {
    transcripts: (PathBuf, BufWriter<File>),
    results: (PathBuf, BufWriter<File>),
    exchanges: (PathBuf, BufWriter<File>),
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), ReportError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| ReportError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

impl Writers {
    fn open(dir: &Path) -> Result<Self, ReportError> {
        std::fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
        Ok(Self {
            transcripts: create(dir, TRANSCRIPTS_FILE)?,
            results: create(dir, RESULTS_FILE)?,
            exchanges: create(dir, EXCHANGES_FILE)?,
        })
    }

    /// Appends one run and flushes, so a killed batch keeps every finished run.
    fn write(&mut self, run: &Finished) -> Result<(), ReportError> {
        fn put(
            (path, out): &mut (PathBuf, BufWriter<File>),
            f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
        ) -> Result<(), ReportError> {
            f(out).and_then(|_| out.flush()).map_err(|e| ReportError::io(path, e))
        }
        put(&mut self.transcripts, |o| write_json_line(o, &run.record))?;
        put(&mut self.results, |o| write_json_line(o, &run.result))?;
        put(&mut self.exchanges, |o| run.exchanges.iter().try_for_each(|e| write_json_line(o, e)))
    }
}

/// Runs `options.n` simulations of `config` through `gateway`, writing every
/// transcript, result and exchange to `options.out_dir`, then the manifest
/// and metrics report.
pub fn run_batch(
    config: &ScenarioConfig,
    gateway: &Gateway,
    options: &BatchOptions<'_>,
) -> Result<(RunManifest, BatchMetrics), BatchError> {
    config.validate().map_err(|e| BatchError::Config(e.to_string()))?;
    if options.n == 0 {
        return Err(BatchError::Config("n must be at least 1".into()));
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut writers = Writers::open(&options.out_dir)?;
    let workers = options.concurrency.clamp(1, options.n);
    let run_options = RunOptions { rules: options.rules, termination: options.termination };

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Finished>();
    let mut results: Vec<SimulationResult> = Vec::with_capacity(options.n);
    let mut errors = Vec::new();

    let written: Result<(), ReportError> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let run_index = next.fetch_add(1, Ordering::Relaxed);
                if run_index >= options.n {
                    break;
                }
                let outcome = run_simulation(gateway, config, run_index, run_options);
                let result = analyse(run_index, &outcome.transcript, &config.agents, options.rules);
                let finished = Finished {
                    run_index,
                    record: TranscriptRecord { run_index, transcript: outcome.transcript },
                    result,
                    exchanges: gateway.take_run(run_index),
                    error: outcome.error,
                };
                if tx.send(finished).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: buffer out-of-order completions and emit by run_index.
        let mut pending: BTreeMap<usize, Finished> = BTreeMap::new();
        let mut expected = 0;
        for finished in rx {
            pending.insert(finished.run_index, finished);
            while let Some(run) = pending.remove(&expected) {
                if let Err(e) = writers.write(&run) {
                    abort.store(true, Ordering::Relaxed);
                    return Err(e);
                }
                if let Some(err) = &run.error {
                    errors.push(RunErrorRecord {
                        run_index: run.run_index,
                        kind: err.kind().to_string(),
                        message: err.to_string(),
                    });
                }
                results.push(run.result);
                expected += 1;
            }
        }
        Ok(())
    });
    written?;

    let metrics = aggregate(&results, &config.focal_agent().name)?;
    let manifest = RunManifest {
        scenario_id: config.scenario_id.clone(),
        mode: config.mode,
        n_requested: options.n as u64,
        n_completed: metrics.n_runs - metrics.n_errored,
        n_errored: metrics.n_errored,
        backend_kind: gateway.kind(),
        model_id: config.model_id.clone(),
        temperature: config.temperature,
        seed: options.seed,
        concurrency: workers,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        tool_version: TOOL_VERSION.to_string(),
        rules_version: options.rules.version().to_string(),
        errors,
        scenario: config.clone(),
    };
    emit_report(Some(&manifest), &metrics, "", &options.out_dir)?;
    Ok((manifest, metrics))
}

/// Scenario for stored runs: an explicit one, else the manifest written next
/// to the transcripts, else the built-in scenario named in the records.
pub fn scenario_for(transcripts: &Path, explicit: Option<ScenarioConfig>, scenario_id: &str) -> Result<ScenarioConfig, BatchError> {
    if let Some(config) = explicit {
        return Ok(config);
    }
    let manifest = transcripts.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    if manifest.exists() {
        let manifest: RunManifest = read_json(&manifest)?;
        return Ok(manifest.scenario);
    }
    ScenarioConfig::resolve(scenario_id).map_err(|e| BatchError::Config(e.to_string()))
}

/// Classifies stored transcripts again (with new rules, or with the LLM
/// judge) and writes `results.jsonl` plus the metrics report to `out_dir`.
pub fn reanalyse(
    transcripts: &Path,
    scenario: Option<ScenarioConfig>,
    rules: &CompiledRules,
    judge: Option<&JudgeClassifier<'_>>,
    out_dir: &Path,
) -> Result<BatchMetrics, BatchError> {
    let mut records: Vec<TranscriptRecord> = read_jsonl(transcripts)?;
    let first = records.first().ok_or(MetricsError::EmptyBatch)?;
    let config = scenario_for(transcripts, scenario, &first.transcript.scenario_id)?;
    records.sort_by_key(|r| r.run_index);
    std::fs::create_dir_all(out_dir).map_err(|e| ReportError::io(out_dir, e))?;
    let (path, mut out) = create(out_dir, RESULTS_FILE)?;
    let mut results = Vec::with_capacity(records.len());
    for r in &records {
        let result = match judge {
            None => analyse(r.run_index, &r.transcript, &config.agents, rules),
            Some(judge) => {
                let ctx = CallContext { run_index: r.run_index, call_index: 0 };
                judge.classify(r.run_index, &r.transcript, &config.agents, ctx)?
            }
        };
        write_json_line(&mut out, &result).map_err(|e| ReportError::io(&path, e))?;
        results.push(result);
    }
    out.flush().map_err(|e| ReportError::io(&path, e))?;
    let metrics = aggregate(&results, &config.focal_agent().name)?;
    emit_report(None, &metrics, "", out_dir)?;
    Ok(metrics)
}

/// Recomputes metrics from a batch directory's `results.jsonl`.
pub fn load_report(dir: &Path) -> Result<(Option<RunManifest>, BatchMetrics), BatchError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Option<RunManifest> = if manifest_path.exists() { Some(read_json(&manifest_path)?) } else { None };
    let results: Vec<SimulationResult> = read_jsonl(&dir.join(RESULTS_FILE))?;
    let first = results.first().ok_or(MetricsError::EmptyBatch)?;
    let focal = match &manifest {
        Some(m) => m.scenario.focal_agent().name.clone(),
        None => ScenarioConfig::resolve(&first.scenario_id)
            .map_err(|e| BatchError::Config(e.to_string()))?
            .focal_agent()
            .name
            .clone(),
    };
    let metrics = aggregate(&results, &focal)?;
    Ok((manifest, metrics))
}
