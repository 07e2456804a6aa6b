//! On-disk batch layout and report emission.
//!
//! ```text
//! out_dir/
//!   manifest.json      run envelope (backend, model, seed, counts, times)
//!   transcripts.jsonl  one TranscriptRecord per run, in run_index order
//!   results.jsonl      one SimulationResult per run, in run_index order
//!   exchanges.jsonl    every request/response pair, in (run, call) order
//!   metrics.json       BatchMetrics plus benchmark comparison
//!   metrics.csv        metric,value,low,high
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::BackendKind;
use crate::metrics::{compare_to_benchmarks, BatchMetrics, BenchmarkComparison};
use crate::model::Transcript;
use crate::scenario::{Mode, ScenarioConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub const DENOMINATOR_NOTE: &str =
    "Rates exclude runs that ended in a backend error; those are counted in n_errored.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("unknown report format {0:?} (expected json, csv or both)")]
    Format(String),
}

impl ReportError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ReportError::Io { path: path.display().to_string(), source }
    }
}

/// One line of `transcripts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub run_index: usize,
    #[serde(flatten)]
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunErrorRecord {
    pub run_index: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_id: String,
    pub mode: Mode,
    pub n_requested: u64,
    pub n_completed: u64,
    pub n_errored: u64,
    pub backend_kind: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub concurrency: usize,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
    pub rules_version: String,
    #[serde(default)]
    pub errors: Vec<RunErrorRecord>,
    /// The full scenario, so `analyze` can recover agent profiles.
    pub scenario: ScenarioConfig,
}

impl RunManifest {
    pub fn is_consistent(&self) -> bool {
        self.n_completed + self.n_errored == self.n_requested
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub note: String,
    pub metrics: BatchMetrics,
    pub benchmarks: BenchmarkComparison,
}

impl MetricsReport {
    pub fn new(metrics: BatchMetrics) -> Self {
        let benchmarks = compare_to_benchmarks(&metrics);
        Self { note: DENOMINATOR_NOTE.into(), metrics, benchmarks }
    }
}

pub fn write_json_line(out: &mut impl Write, value: &impl Serialize) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let file = std::fs::File::open(path).map_err(|e| ReportError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ReportError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ReportError::io(path, e))
}

/// `metric,value,low,high` rows. Counts and the gap carry no interval.
pub fn metrics_csv(metrics: &BatchMetrics) -> String {
    let mut csv = String::from("metric,value,low,high\n");
    let _ = writeln!(csv, "n_runs,{},,", metrics.n_runs);
    let _ = writeln!(csv, "n_errored,{},,", metrics.n_errored);
    for (name, rate) in &metrics.rates {
        let _ = writeln!(csv, "{name},{},{},{}", rate.value, rate.low, rate.high);
    }
    let _ = writeln!(csv, "intention_to_execution_gap,{},,", metrics.intention_to_execution_gap);
    csv
}

/// Writes `metrics.json` and/or `metrics.csv` into `out_dir`. An empty
/// format means both.
pub fn emit_report(
    manifest: Option<&RunManifest>,
    metrics: &BatchMetrics,
    format: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let (json, csv) = match format.trim().to_ascii_lowercase().as_str() {
        "" | "both" => (true, true),
        "json" => (true, false),
        "csv" => (false, true),
        other => return Err(ReportError::Format(other.to_string())),
    };
    let mut written = Vec::new();
    if json {
        let path = out_dir.join(METRICS_JSON);
        write_json_file(&path, &MetricsReport::new(metrics.clone()))?;
        written.push(path);
    }
    if csv {
        let path = out_dir.join(METRICS_CSV);
        std::fs::write(&path, metrics_csv(metrics)).map_err(|e| ReportError::io(&path, e))?;
        written.push(path);
    }
    if let Some(manifest) = manifest {
        let path = out_dir.join(MANIFEST_FILE);
        write_json_file(&path, manifest)?;
        written.push(path);
    }
    Ok(written)
}

fn pct(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

/// Human-readable summary for the terminal.
pub fn summary(manifest: Option<&RunManifest>, metrics: &BatchMetrics) -> String {
    let mut s = String::new();
    if let Some(m) = manifest {
        let _ = writeln!(
            s,
            "scenario {} ({:?}), backend {:?}, model {}, {} runs requested",
            m.scenario_id, m.mode, m.backend_kind, m.model_id, m.n_requested
        );
    }
    let _ = writeln!(s, "runs: {} ({} errored, excluded from rates)", metrics.n_runs, metrics.n_errored);
    let line = |s: &mut String, label: &str, key: &str, value: f64| {
        let (low, high) = metrics.interval(key).unwrap_or((value, value));
        let _ = writeln!(s, "{label:<34} {:>7}  [{} - {}]", pct(value), pct(low), pct(high));
    };
    line(&mut s, &format!("no trade ({})", metrics.focal_agent), "no_trade_rate", metrics.no_trade_rate);
    for (d, v) in &metrics.decision_distribution {
        line(&mut s, &format!("  decision {}", d.as_str()), &format!("decision.{}", d.as_str()), *v);
    }
    line(&mut s, "both intend to trade", "both_intend_rate", metrics.both_intend_rate);
    line(&mut s, "at least one intends", "any_intend_rate", metrics.any_intend_rate);
    for (agent, v) in &metrics.per_agent_intention_rate {
        line(&mut s, &format!("  {agent} intends"), &format!("intention_rate.{agent}"), *v);
    }
    line(&mut s, "trade executed", "trade_rate", metrics.trade_rate);
    let _ = writeln!(s, "{:<34} {:>7}", "intention to execution gap", pct(metrics.intention_to_execution_gap));
    line(&mut s, "both recall holdings", "recall_both_correct_rate", metrics.recall_both_correct_rate);
    line(&mut s, "holdings omitted", "recall_omitted_rate", metrics.recall_omitted_rate);
    let b = compare_to_benchmarks(metrics);
    let _ = writeln!(
        s,
        "trade rate vs reference: {} vs {} reported ({:+.4}), {} equity OTR ({:+.4}); not a pass/fail check",
        pct(b.trade_rate),
        pct(b.reference_trade_rate),
        b.trade_rate - b.reference_trade_rate,
        pct(b.sec_equity_otr),
        b.trade_rate - b.sec_equity_otr
    );
    s
}
