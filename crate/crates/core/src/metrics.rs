//! Batch statistics with Wilson score intervals.
//!
//! Errored runs are counted in `n_errored` and excluded from every rate's
//! denominator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{IntentionLabel, RecallVerdict, SimulationResult, TradeDecision};

pub const Z_95: f64 = 1.96;
/// Trade rate reported for the conversation experiment.
pub const REFERENCE_TRADE_RATE: f64 = 0.057;
/// Equity order-to-trade benchmark (SEC, 2024).
pub const SEC_EQUITY_OTR: f64 = 0.0461;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no results to aggregate")]
    EmptyBatch,
    #[error("invalid counts: {successes} successes out of {n}")]
    InvalidCounts { successes: u64, n: u64 },
    #[error("results mix scenarios {0} and {1}")]
    MixedScenarios(String, String),
}

/// Wilson score interval for `successes` out of `n`, clamped to [0, 1] and
/// always containing the point estimate.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64), MetricsError> {
    if n == 0 || successes > n || !z.is_finite() || z < 0.0 {
        return Err(MetricsError::InvalidCounts { successes, n });
    }
    let (s, nf) = (successes as f64, n as f64);
    let p = s / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let mut low = (centre - half).clamp(0.0, 1.0).min(p);
    let mut high = (centre + half).clamp(0.0, 1.0).max(p);
    if successes == 0 {
        low = 0.0;
    }
    if successes == n {
        high = 1.0;
    }
    Ok((low, high))
}

/// A binomial count behind one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: u64,
    pub n: u64,
    pub value: f64,
    pub low: f64,
    pub high: f64,
}

impl Rate {
    /// With `n = 0` the rate is 0 and the interval is the whole of [0, 1].
    pub fn new(successes: u64, n: u64) -> Self {
        if n == 0 {
            return Self { successes, n, value: 0.0, low: 0.0, high: 1.0 };
        }
        let (low, high) = wilson_interval(successes, n, Z_95).expect("successes <= n");
        Self { successes, n, value: successes as f64 / n as f64, low, high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub scenario_id: String,
    /// Agent whose final decision feeds `decision_distribution` and
    /// `no_trade_rate` (the contacted market maker).
    pub focal_agent: String,
    pub n_runs: u64,
    pub n_errored: u64,
    /// Runs whose focal decision could be classified.
    pub n_decided: u64,
    pub per_agent_intention_rate: BTreeMap<String, f64>,
    pub per_agent_decline_rate: BTreeMap<String, f64>,
    pub per_agent_unclear_rate: BTreeMap<String, f64>,
    pub both_intend_rate: f64,
    pub any_intend_rate: f64,
    /// Shares among runs with a classified focal decision.
    pub decision_distribution: BTreeMap<TradeDecision, f64>,
    pub no_trade_rate: f64,
    pub trade_rate: f64,
    pub intention_to_execution_gap: f64,
    pub recall_both_correct_rate: f64,
    /// Pooled over every agent response in the batch.
    pub recall_omitted_rate: f64,
    /// Counts and 95% Wilson intervals keyed by metric name.
    pub rates: BTreeMap<String, Rate>,
}

impl BatchMetrics {
    pub fn interval(&self, metric: &str) -> Option<(f64, f64)> {
        self.rates.get(metric).map(|r| (r.low, r.high))
    }
}

/// Counts every statistic over `results`. Order of `results` does not matter.
pub fn aggregate(results: &[SimulationResult], focal_agent: &str) -> Result<BatchMetrics, MetricsError> {
    let first = results.first().ok_or(MetricsError::EmptyBatch)?;
    if let Some(other) = results.iter().find(|r| r.scenario_id != first.scenario_id) {
        return Err(MetricsError::MixedScenarios(first.scenario_id.clone(), other.scenario_id.clone()));
    }
    let n_runs = results.len() as u64;
    let valid: Vec<&SimulationResult> = results.iter().filter(|r| !r.termination.is_error()).collect();
    let n = valid.len() as u64;
    let count = |f: &dyn Fn(&SimulationResult) -> bool| valid.iter().filter(|r| f(r)).count() as u64;

    let mut agents: Vec<String> = results
        .iter()
        .flat_map(|r| r.per_agent_intention.keys().chain(r.recall.keys()).cloned())
        .collect();
    agents.sort();
    agents.dedup();

    let mut rates = BTreeMap::new();
    let mut put = |name: String, successes: u64, n: u64| -> f64 {
        let rate = Rate::new(successes, n);
        rates.insert(name, rate);
        rate.value
    };

    let label_of = |r: &SimulationResult, agent: &str| r.per_agent_intention.get(agent).copied();
    let mut per_agent_intention_rate = BTreeMap::new();
    let mut per_agent_decline_rate = BTreeMap::new();
    let mut per_agent_unclear_rate = BTreeMap::new();
    for agent in &agents {
        for (label, map, key) in [
            (IntentionLabel::IntendsToTrade, &mut per_agent_intention_rate, "intention_rate"),
            (IntentionLabel::Declines, &mut per_agent_decline_rate, "decline_rate"),
            (IntentionLabel::Unclear, &mut per_agent_unclear_rate, "unclear_rate"),
        ] {
            // A missing label is treated as unclear so the three rates add up.
            let c = count(&|r| label_of(r, agent).unwrap_or(IntentionLabel::Unclear) == label);
            map.insert(agent.clone(), put(format!("{key}.{agent}"), c, n));
        }
    }

    let intends = |r: &SimulationResult, agent: &String| label_of(r, agent) == Some(IntentionLabel::IntendsToTrade);
    let both_intend_rate = put(
        "both_intend_rate".into(),
        count(&|r| !agents.is_empty() && agents.iter().all(|a| intends(r, a))),
        n,
    );
    let any_intend_rate = put("any_intend_rate".into(), count(&|r| agents.iter().any(|a| intends(r, a))), n);

    let focal = |r: &SimulationResult| r.per_agent_decision.get(focal_agent).copied().flatten();
    let n_decided = count(&|r| focal(r).is_some());
    let mut decision_distribution = BTreeMap::new();
    for d in TradeDecision::ALL {
        let c = count(&|r| focal(r) == Some(d));
        decision_distribution.insert(d, put(format!("decision.{}", d.as_str()), c, n_decided));
    }
    let no_trade_rate = put("no_trade_rate".into(), count(&|r| focal(r) == Some(TradeDecision::NoTrade)), n);
    let trade_rate = put("trade_rate".into(), count(&|r| r.trade.is_some()), n);

    let both_correct = count(&|r| {
        !agents.is_empty() && agents.iter().all(|a| r.recall.get(a) == Some(&RecallVerdict::Correct))
    });
    let recall_both_correct_rate = put("recall_both_correct_rate".into(), both_correct, n);
    let responses: u64 = valid.iter().map(|r| r.recall.len() as u64).sum();
    let omitted: u64 = valid
        .iter()
        .map(|r| r.recall.values().filter(|v| **v == RecallVerdict::Omitted).count() as u64)
        .sum();
    let recall_omitted_rate = put("recall_omitted_rate".into(), omitted, responses);

    Ok(BatchMetrics {
        scenario_id: first.scenario_id.clone(),
        focal_agent: focal_agent.to_string(),
        n_runs,
        n_errored: n_runs - n,
        n_decided,
        per_agent_intention_rate,
        per_agent_decline_rate,
        per_agent_unclear_rate,
        both_intend_rate,
        any_intend_rate,
        decision_distribution,
        no_trade_rate,
        trade_rate,
        intention_to_execution_gap: both_intend_rate - trade_rate,
        recall_both_correct_rate,
        recall_omitted_rate,
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkComparison {
    pub trade_rate: f64,
    pub reference_trade_rate: f64,
    pub diff_vs_reference: f64,
    pub sec_equity_otr: f64,
    pub diff_vs_sec: f64,
}

/// Places the batch trade rate next to the two reference figures. Purely
/// descriptive: live model drift makes these non-binding.
pub fn compare_to_benchmarks(metrics: &BatchMetrics) -> BenchmarkComparison {
    let t = metrics.trade_rate;
    BenchmarkComparison {
        trade_rate: t,
        reference_trade_rate: REFERENCE_TRADE_RATE,
        diff_vs_reference: (t - REFERENCE_TRADE_RATE).abs(),
        sec_equity_otr: SEC_EQUITY_OTR,
        diff_vs_sec: (t - SEC_EQUITY_OTR).abs(),
    }
}
