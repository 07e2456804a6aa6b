//! Domain types shared by every stage of the pipeline.
//!
//! Nothing in here performs I/O. Holdings and quantities are whole currency
//! units (GBP notional) stored as integers so recall checks can compare
//! exactly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Speaker name used for orchestration notes in transcripts.
pub const GAME_MASTER: &str = "game_master";

/// One trader taking part in a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    pub role_prompt: String,
    /// Signed bond notional held at the start of the conversation.
    pub initial_holdings: i64,
    /// Holdings the agent is mandated to reach (0 in every built-in scenario).
    #[serde(default)]
    pub target_holdings: i64,
    #[serde(default)]
    pub is_initiator: bool,
}

impl AgentProfile {
    pub fn new(name: impl Into<String>, role_prompt: impl Into<String>, initial_holdings: i64) -> Self {
        Self {
            name: name.into(),
            role_prompt: role_prompt.into(),
            initial_holdings,
            target_holdings: 0,
            is_initiator: false,
        }
    }

    pub fn initiator(mut self) -> Self {
        self.is_initiator = true;
        self
    }
}

/// The four options offered at the end of the chain of thought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeDecision {
    Buy,
    Sell,
    Flatten,
    NoTrade,
}

impl TradeDecision {
    pub const ALL: [TradeDecision; 4] = [
        TradeDecision::Buy,
        TradeDecision::Sell,
        TradeDecision::Flatten,
        TradeDecision::NoTrade,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TradeDecision::Buy => "buy",
            TradeDecision::Sell => "sell",
            TradeDecision::Flatten => "flatten",
            TradeDecision::NoTrade => "no_trade",
        }
    }

    /// Trading direction implied by the decision for an agent holding
    /// `holdings`. Flattening a long book sells, flattening a short book buys.
    pub fn direction(self, holdings: i64) -> Option<Side> {
        match self {
            TradeDecision::Buy => Some(Side::Buy),
            TradeDecision::Sell => Some(Side::Sell),
            TradeDecision::Flatten if holdings > 0 => Some(Side::Sell),
            TradeDecision::Flatten if holdings < 0 => Some(Side::Buy),
            TradeDecision::Flatten | TradeDecision::NoTrade => None,
        }
    }
}

impl fmt::Display for TradeDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Direction of one side of a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentionLabel {
    IntendsToTrade,
    Declines,
    Unclear,
}

impl IntentionLabel {
    pub const ALL: [IntentionLabel; 3] = [
        IntentionLabel::IntendsToTrade,
        IntentionLabel::Declines,
        IntentionLabel::Unclear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentionLabel::IntendsToTrade => "intends_to_trade",
            IntentionLabel::Declines => "declines",
            IntentionLabel::Unclear => "unclear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallVerdict {
    Correct,
    Incorrect,
    Omitted,
}

impl RecallVerdict {
    pub const ALL: [RecallVerdict; 3] = [
        RecallVerdict::Correct,
        RecallVerdict::Incorrect,
        RecallVerdict::Omitted,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn is_game_master(&self) -> bool {
        self.speaker == GAME_MASTER
    }
}

/// Why a conversation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Concluded,
    TurnCapReached,
    BackendError,
}

impl Termination {
    pub fn is_error(self) -> bool {
        matches!(self, Termination::BackendError)
    }
}

/// The ordered, attributed turns of one simulated conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario_id: String,
    pub turns: Vec<Turn>,
    pub termination: Termination,
}

impl Transcript {
    pub fn new(scenario_id: impl Into<String>) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            turns: Vec::new(),
            termination: Termination::Concluded,
        }
    }

    /// Appends a turn with the next contiguous index.
    pub fn push(&mut self, speaker: impl Into<String>, text: impl Into<String>) {
        let index = self.turns.len();
        self.turns.push(Turn {
            index,
            speaker: speaker.into(),
            text: text.into(),
        });
    }

    pub fn agent_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| !t.is_game_master())
    }

    /// Texts spoken by one agent, in order.
    pub fn texts_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.turns
            .iter()
            .filter(move |t| t.speaker == name)
            .map(|t| t.text.as_str())
    }

    pub fn last_agent_turn(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| !t.is_game_master())
    }

    pub fn agent_turn_count(&self) -> usize {
        self.agent_turns().count()
    }

    /// Checks the structural invariants: contiguous indices, non-empty text,
    /// no agent speaking twice in a row, and a non-empty concluded transcript.
    pub fn validate(&self) -> Result<(), String> {
        if self.termination == Termination::Concluded && self.turns.is_empty() {
            return Err("concluded transcript has no turns".into());
        }
        let mut previous: Option<&str> = None;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return Err(format!("turn {i} carries index {}", turn.index));
            }
            if turn.text.is_empty() {
                return Err(format!("turn {i} is empty"));
            }
            if turn.is_game_master() {
                continue;
            }
            if previous == Some(turn.speaker.as_str()) {
                return Err(format!("{} speaks twice in a row at turn {i}", turn.speaker));
            }
            previous = Some(turn.speaker.as_str());
        }
        Ok(())
    }
}

/// Price convention for executed trades. The scenarios fix all trades at mid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceConvention {
    #[default]
    Mid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedTrade {
    pub buyer: String,
    pub seller: String,
    pub quantity: u64,
    #[serde(default)]
    pub price_convention: PriceConvention,
}

impl ExecutedTrade {
    /// Returns `None` when buyer and seller coincide or the quantity is zero.
    pub fn new(buyer: impl Into<String>, seller: impl Into<String>, quantity: u64) -> Option<Self> {
        let (buyer, seller) = (buyer.into(), seller.into());
        (buyer != seller && quantity > 0).then_some(Self {
            buyer,
            seller,
            quantity,
            price_convention: PriceConvention::Mid,
        })
    }
}

/// Classified outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub scenario_id: String,
    pub run_index: usize,
    pub termination: Termination,
    pub per_agent_intention: BTreeMap<String, IntentionLabel>,
    pub per_agent_decision: BTreeMap<String, Option<TradeDecision>>,
    pub trade: Option<ExecutedTrade>,
    pub recall: BTreeMap<String, RecallVerdict>,
    pub transcript_ref: String,
}

/// Stable key of a transcript inside a batch's transcript store.
pub fn transcript_ref(scenario_id: &str, run_index: usize) -> String {
    format!("{scenario_id}#{run_index}")
}
