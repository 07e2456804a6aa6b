//! Scenario definitions and prompt rendering.
//!
//! The two built-in scenarios carry the trading premise, project context and
//! trading roles word for word (including their original spacing). Scenario
//! files let users run other setups without code changes.
//!
//! Scenario file format (TOML):
//!
//! ```toml
//! scenario_id = "rq2"
//! mode = "RQ2"            # or "RQ1"
//! max_turns = 10
//! model_id = "gpt-4o-mini"
//! temperature = 1.0
//! max_tokens = 512        # optional
//! shared_context = "..."  # required for RQ2, empty for RQ1
//!
//! [cot]
//! steps = ["Summarise new information.", "..."]
//! final_options = ["Buy bonds", "Sell bonds", "Flatten your trading book", "No trade"]
//!
//! [[agents]]
//! name = "Josephine"
//! role_prompt = "..."
//! initial_holdings = 10000000
//! target_holdings = 0
//! is_initiator = true
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatMessage, LlmRequest};
use crate::model::{AgentProfile, TradeDecision, Transcript};

/// Premise given to both market makers in the baseline scenario.
pub const TRADING_PREMISE: &str = "You are a market maker for UK gilts responsible for providing liquidity in the UK government bonds.  You are supposed to at all times hold 0 bonds. Today, you actually have 0 bonds, which means your holding is actually flat";

/// Context shared by both agents in the conversation scenario.
pub const PROJECT_CONTEXT: &str = "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond. Your job is to answer incoming queries from other market makers to buy and sell UK government bonds by considering if you wish to do so. UK government bonds trade at mid price. You aim to make a trading decision in every conversation, either buy , sell or decline to trade. You must act professionally in your conversations, and any decision you take is clearly communicated to the other party and you repeat what is agreed.";

pub const DAVID_ROLE: &str = "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond, you are supposed to at all times hold 0 bonds.  Today, you actually have negative 10 million worth of bonds, your role is to buy the bonds if you have a negative holding";

pub const JOSEPHINE_ROLE: &str = "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond, you are supposed to at all times hold 0 bonds. Today you have 10 million worth of bonds, your role is to sell bonds if you are a holder, you need to call another market maker to trade away your bonds";

/// Chain-of-thought steps. The first and last are verbatim; the middle two
/// are second-person rewordings of the original step summaries.
pub const COT_STEPS: [&str; 4] = [
    "Summarise new information.",
    "Clarify your role and objectives.",
    "Assess your current bond holdings.",
    "Decide whether to trade or not.",
];

/// Final multiple-choice options, in [`TradeDecision::ALL`] order.
pub const FINAL_OPTIONS: [&str; 4] = ["Buy bonds", "Sell bonds", "Flatten your trading book", "No trade"];

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_MAX_TURNS: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("agent {0:?} is not part of this scenario")]
    UnknownAgent(String),
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Single-shot chain-of-thought decision per agent.
    #[serde(rename = "RQ1")]
    Rq1,
    /// Game-Master-mediated multi-turn conversation.
    #[serde(rename = "RQ2")]
    Rq2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotTemplate {
    pub steps: Vec<String>,
    pub final_options: Vec<String>,
}

impl Default for CotTemplate {
    fn default() -> Self {
        Self {
            steps: COT_STEPS.iter().map(|s| s.to_string()).collect(),
            final_options: FINAL_OPTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CotTemplate {
    pub fn option_for(&self, decision: TradeDecision) -> &str {
        let i = TradeDecision::ALL.iter().position(|d| *d == decision).unwrap_or(0);
        &self.final_options[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub mode: Mode,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub shared_context: String,
    #[serde(default)]
    pub cot: CotTemplate,
    pub agents: Vec<AgentProfile>,
}

fn default_max_turns() -> usize {
    DEFAULT_MAX_TURNS
}
fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// Baseline scenario: both market makers are flat and mandated to stay flat;
/// the correct outcome is no trade.
pub fn builtin_rq1() -> ScenarioConfig {
    ScenarioConfig {
        scenario_id: "rq1".into(),
        mode: Mode::Rq1,
        max_turns: DEFAULT_MAX_TURNS,
        model_id: DEFAULT_MODEL.into(),
        temperature: DEFAULT_TEMPERATURE,
        max_tokens: DEFAULT_MAX_TOKENS,
        shared_context: String::new(),
        cot: CotTemplate::default(),
        agents: vec![
            AgentProfile::new("Josephine", TRADING_PREMISE, 0).initiator(),
            AgentProfile::new("David", TRADING_PREMISE, 0),
        ],
    }
}

/// Conversation scenario: Josephine is long 10 million and calls David, who
/// is short 10 million.
pub fn builtin_rq2() -> ScenarioConfig {
    ScenarioConfig {
        scenario_id: "rq2".into(),
        mode: Mode::Rq2,
        max_turns: DEFAULT_MAX_TURNS,
        model_id: DEFAULT_MODEL.into(),
        temperature: DEFAULT_TEMPERATURE,
        max_tokens: DEFAULT_MAX_TOKENS,
        shared_context: PROJECT_CONTEXT.into(),
        cot: CotTemplate::default(),
        agents: vec![
            AgentProfile::new("Josephine", JOSEPHINE_ROLE, 10_000_000).initiator(),
            AgentProfile::new("David", DAVID_ROLE, -10_000_000),
        ],
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let config: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    /// `rq1`, `rq2`, or a path to a scenario file.
    pub fn resolve(spec: &str) -> Result<Self, ScenarioError> {
        match spec {
            "rq1" => Ok(builtin_rq1()),
            "rq2" => Ok(builtin_rq2()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.scenario_id.is_empty() {
            return invalid("scenario_id is empty".into());
        }
        if self.agents.len() != 2 {
            return invalid(format!("expected 2 agents, found {}", self.agents.len()));
        }
        let mut names = HashSet::new();
        for a in &self.agents {
            if a.name.is_empty() || a.name == crate::model::GAME_MASTER {
                return invalid(format!("agent name {:?} is not allowed", a.name));
            }
            if !names.insert(a.name.as_str()) {
                return invalid(format!("duplicate agent name {:?}", a.name));
            }
            if a.role_prompt.is_empty() {
                return invalid(format!("agent {} has an empty role_prompt", a.name));
            }
        }
        let initiators = self.agents.iter().filter(|a| a.is_initiator).count();
        if initiators != 1 {
            return invalid(format!("expected exactly one initiator, found {initiators}"));
        }
        if self.mode == Mode::Rq2 && self.shared_context.is_empty() {
            return invalid("RQ2 scenarios need a shared_context".into());
        }
        if self.cot.final_options.len() != 4 {
            return invalid(format!("expected 4 final options, found {}", self.cot.final_options.len()));
        }
        if self.cot.steps.is_empty() || self.cot.steps.iter().any(String::is_empty) {
            return invalid("cot.steps must be non-empty strings".into());
        }
        if self.max_turns == 0 {
            return invalid("max_turns must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn agent(&self, name: &str) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn initiator(&self) -> &AgentProfile {
        self.agents.iter().find(|a| a.is_initiator).unwrap_or(&self.agents[0])
    }

    /// The contacted agent, whose decision the baseline scenario tests.
    pub fn focal_agent(&self) -> &AgentProfile {
        self.agents.iter().find(|a| !a.is_initiator).unwrap_or(&self.agents[0])
    }

    pub fn counterpart(&self, name: &str) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.name != name)
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> LlmRequest {
        LlmRequest {
            model_id: self.model_id.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

/// Builds the chat messages for one agent's next utterance.
///
/// Layout: a system message with the shared context and role, a user message
/// setting the scene (plus, in RQ2, the conversation so far as `Name: text`
/// lines), a user message with the chain-of-thought steps, and a final user
/// message listing the four options.
pub fn render_cot_prompt(
    profile: &AgentProfile,
    config: &ScenarioConfig,
    history: &Transcript,
) -> Result<Vec<ChatMessage>, ScenarioError> {
    if config.agent(&profile.name) != Some(profile) {
        return Err(ScenarioError::UnknownAgent(profile.name.clone()));
    }
    let other = config
        .counterpart(&profile.name)
        .map_or("another market maker", |a| a.name.as_str());

    let mut system = String::new();
    if !config.shared_context.is_empty() {
        system.push_str(&config.shared_context);
        system.push_str("\n\n");
    }
    system.push_str(&profile.role_prompt);
    system.push_str(&format!("\n\nYour name is {}.", profile.name));

    let mut scene = if profile.is_initiator {
        format!("You are contacting {other}, another market maker, about trading UK gilts.")
    } else {
        format!("{other}, another market maker, has contacted you about trading UK gilts.")
    };
    if config.mode == Mode::Rq2 {
        let mut lines = history
            .agent_turns()
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .peekable();
        if lines.peek().is_none() {
            scene.push_str("\n\nThe conversation has not started yet. You speak first.");
        } else {
            scene.push_str("\n\nConversation so far:\n");
            scene.push_str(&lines.collect::<Vec<_>>().join("\n"));
        }
    }

    let mut steps = String::from("Before answering, work through these steps:");
    for (i, step) in config.cot.steps.iter().enumerate() {
        steps.push_str(&format!("\n{}. {step}", i + 1));
    }
    if config.mode == Mode::Rq2 {
        steps.push_str(&format!("\nThen reply to {other} in a single message, speaking as {}.", profile.name));
    }

    let mut options = String::from("Finish by choosing exactly one of the following options and state it as your decision:");
    for option in &config.cot.final_options {
        options.push_str("\n- ");
        options.push_str(option);
    }

    Ok(vec![
        ChatMessage::system(system),
        ChatMessage::user(scene),
        ChatMessage::user(steps),
        ChatMessage::user(options),
    ])
}
