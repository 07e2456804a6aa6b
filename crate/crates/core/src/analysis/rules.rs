use std::collections::BTreeMap;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{IntentionLabel, TradeDecision};

/// The rules shipped with the crate.
pub const DEFAULT_RULES_TOML: &str = include_str!("../../data/default_rules.toml");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("reading rules {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing rules: {0}")]
    Parse(String),
    #[error("rules: {0}")]
    Invalid(String),
    #[error("rules pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationRules {
    pub window: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldingsRules {
    pub window_chars: usize,
    pub cues: Vec<String>,
    pub negative: Vec<String>,
    pub flat: Vec<String>,
    pub zero: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantityPattern {
    pub pattern: String,
    pub multiplier: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationRules {
    #[serde(default = "yes")]
    pub consistent_decisions: bool,
    pub final_agreement: Vec<String>,
    pub final_refusal: Vec<String>,
}

fn yes() -> bool {
    true
}

/// Versioned pattern sets used by the rule-based classifier and the Game
/// Master's conclusion detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierRules {
    pub version: String,
    pub decision_markers: Vec<String>,
    pub agreement_patterns: Vec<String>,
    pub decision_patterns: BTreeMap<TradeDecision, Vec<String>>,
    pub intention_patterns: BTreeMap<IntentionLabel, Vec<String>>,
    pub negation: NegationRules,
    pub holdings: HoldingsRules,
    pub quantity_patterns: Vec<QuantityPattern>,
    pub termination: TerminationRules,
}

impl Default for ClassifierRules {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RULES_TOML).expect("bundled rules parse")
    }
}

impl ClassifierRules {
    pub fn from_toml_str(text: &str) -> Result<Self, RulesError> {
        toml::from_str(text).map_err(|e| RulesError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RulesError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn compile(&self) -> Result<CompiledRules, RulesError> {
        CompiledRules::new(self.clone())
    }
}

fn compile_all(patterns: &[String], what: &str) -> Result<Vec<Regex>, RulesError> {
    if patterns.is_empty() {
        return Err(RulesError::Invalid(format!("{what} has no patterns")));
    }
    patterns
        .iter()
        .map(|p| {
            RegexBuilder::new(p)
                .case_insensitive(true)
                .build()
                .map_err(|source| RulesError::Pattern { pattern: p.clone(), source })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledQuantity {
    pub regex: Regex,
    pub multiplier: u64,
}

/// Rules with every pattern compiled, ready for matching.
#[derive(Debug, Clone)]
pub struct CompiledRules {
    pub(crate) source: ClassifierRules,
    pub(crate) markers: Vec<Regex>,
    pub(crate) agreement: Vec<Regex>,
    pub(crate) decisions: Vec<(TradeDecision, Vec<Regex>)>,
    pub(crate) intends: Vec<Regex>,
    pub(crate) declines: Vec<Regex>,
    pub(crate) negation_tokens: Vec<String>,
    pub(crate) negation_window: usize,
    pub(crate) holding_cues: Vec<Regex>,
    pub(crate) holding_negative: Vec<Regex>,
    pub(crate) holding_flat: Vec<Regex>,
    pub(crate) holding_zero: Vec<Regex>,
    pub(crate) holding_window: usize,
    pub(crate) quantities: Vec<CompiledQuantity>,
    pub(crate) final_agreement: Vec<Regex>,
    pub(crate) final_refusal: Vec<Regex>,
}

impl CompiledRules {
    pub fn new(source: ClassifierRules) -> Result<Self, RulesError> {
        let mut decisions = Vec::new();
        for d in TradeDecision::ALL {
            let patterns = source
                .decision_patterns
                .get(&d)
                .ok_or_else(|| RulesError::Invalid(format!("no decision patterns for {d}")))?;
            decisions.push((d, compile_all(patterns, &format!("decision_patterns.{d}"))?));
        }
        let intention = |label: IntentionLabel| -> Result<Vec<Regex>, RulesError> {
            let patterns = source.intention_patterns.get(&label).ok_or_else(|| {
                RulesError::Invalid(format!("no intention patterns for {}", label.as_str()))
            })?;
            compile_all(patterns, &format!("intention_patterns.{}", label.as_str()))
        };
        if source.intention_patterns.contains_key(&IntentionLabel::Unclear) {
            return Err(RulesError::Invalid("unclear is the fallback label and takes no patterns".into()));
        }
        let intends = intention(IntentionLabel::IntendsToTrade)?;
        let declines = intention(IntentionLabel::Declines)?;
        let quantities = if source.quantity_patterns.is_empty() {
            return Err(RulesError::Invalid("quantity_patterns is empty".into()));
        } else {
            source
                .quantity_patterns
                .iter()
                .map(|q| {
                    let regex = compile_all(std::slice::from_ref(&q.pattern), "quantity_patterns")?.remove(0);
                    if regex.captures_len() < 2 {
                        return Err(RulesError::Invalid(format!(
                            "quantity pattern {:?} needs a capture group",
                            q.pattern
                        )));
                    }
                    Ok(CompiledQuantity { regex, multiplier: q.multiplier })
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self {
            markers: compile_all(&source.decision_markers, "decision_markers")?,
            agreement: compile_all(&source.agreement_patterns, "agreement_patterns")?,
            decisions,
            intends,
            declines,
            negation_tokens: source.negation.tokens.iter().map(|t| t.to_lowercase()).collect(),
            negation_window: source.negation.window,
            holding_cues: compile_all(&source.holdings.cues, "holdings.cues")?,
            holding_negative: compile_all(&source.holdings.negative, "holdings.negative")?,
            holding_flat: compile_all(&source.holdings.flat, "holdings.flat")?,
            holding_zero: compile_all(&source.holdings.zero, "holdings.zero")?,
            holding_window: source.holdings.window_chars,
            quantities,
            final_agreement: compile_all(&source.termination.final_agreement, "termination.final_agreement")?,
            final_refusal: compile_all(&source.termination.final_refusal, "termination.final_refusal")?,
            source,
        })
    }

    pub fn rules(&self) -> &ClassifierRules {
        &self.source
    }

    pub fn version(&self) -> &str {
        &self.source.version
    }

    /// The bundled rules, compiled once per process.
    pub fn default_rules() -> &'static CompiledRules {
        static RULES: std::sync::OnceLock<CompiledRules> = std::sync::OnceLock::new();
        RULES.get_or_init(|| ClassifierRules::default().compile().expect("bundled rules compile"))
    }
}
