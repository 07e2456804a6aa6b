//! Runs one simulation: a single decision per agent (RQ1) or a Game Master
//! mediated conversation (RQ2).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::text::{first_match, normalize, sentences};
use crate::analysis::{final_decision, CompiledRules};
use crate::llm::{CallContext, ChatMessage, Gateway, LlmError, LlmRequest};
use crate::model::{Termination, TradeDecision, Transcript, GAME_MASTER};
use crate::scenario::{render_cot_prompt, Mode, ScenarioConfig};

pub const REASON_AGREEMENT: &str = "agreement detected";
pub const REASON_REFUSAL: &str = "refusal detected";
pub const REASON_CONSISTENT: &str = "decisions consistent";
pub const REASON_JUDGE: &str = "judge concluded";
pub const REASON_TURN_CAP: &str = "turn cap";

/// Stands in for a blank completion so every turn carries text.
pub const EMPTY_REPLY: &str = "(no reply)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameMasterState {
    pub next_speaker: Option<String>,
    pub turn_count: usize,
    pub concluded: bool,
    pub conclusion_reason: Option<String>,
}

impl GameMasterState {
    pub fn new() -> Self {
        Self { next_speaker: None, turn_count: 0, concluded: false, conclusion_reason: None }
    }

    fn conclude(mut self, reason: &str) -> Self {
        self.concluded = true;
        self.conclusion_reason = Some(reason.to_string());
        self.next_speaker = None;
        self
    }

    pub fn termination(&self) -> Termination {
        match self.conclusion_reason.as_deref() {
            Some(REASON_TURN_CAP) => Termination::TurnCapReached,
            _ => Termination::Concluded,
        }
    }
}

impl Default for GameMasterState {
    fn default() -> Self {
        Self::new()
    }
}

/// How the Game Master decides a conversation is over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMode {
    /// Phrase and decision rules from the classifier rules file.
    #[default]
    Rules,
    /// One extra completion after every agent turn asking whether the
    /// negotiation has concluded.
    Judge,
}

/// Rule-based conclusion check on the latest agent turn.
pub fn detect_conclusion(transcript: &Transcript, config: &ScenarioConfig, rules: &CompiledRules) -> Option<&'static str> {
    let latest = transcript.last_agent_turn()?;
    let text = normalize(&latest.text);
    let neg = Some((rules.negation_tokens.as_slice(), rules.negation_window));
    let statements: Vec<&str> = sentences(&text).into_iter().filter(|s| !s.is_question()).map(|s| s.text).collect();
    if statements.iter().any(|s| first_match(s, &rules.final_agreement, neg).is_some()) {
        return Some(REASON_AGREEMENT);
    }
    if statements.iter().any(|s| first_match(s, &rules.final_refusal, None).is_some()) {
        return Some(REASON_REFUSAL);
    }
    if rules.rules().termination.consistent_decisions {
        let decisions: Vec<Option<TradeDecision>> = config
            .agents
            .iter()
            .map(|a| final_decision(transcript.texts_of(&a.name), rules))
            .collect();
        use TradeDecision::*;
        if let [Some(x), Some(y)] = decisions[..] {
            if matches!((x, y), (Buy, Sell) | (Sell, Buy) | (NoTrade, NoTrade)) {
                return Some(REASON_CONSISTENT);
            }
        }
    }
    None
}

/// One scheduling step. Pure: the next state depends only on the inputs.
/// `rules` of `None` disables the rule-based detector (judge mode).
pub fn game_master_step(
    state: GameMasterState,
    transcript: &Transcript,
    config: &ScenarioConfig,
    rules: Option<&CompiledRules>,
) -> GameMasterState {
    if state.concluded {
        return state;
    }
    if let Some(reason) = rules.and_then(|r| detect_conclusion(transcript, config, r)) {
        return state.conclude(reason);
    }
    if state.turn_count >= config.max_turns {
        return state.conclude(REASON_TURN_CAP);
    }
    let next = match transcript.last_agent_turn() {
        None => config.initiator().name.clone(),
        Some(turn) => config
            .counterpart(&turn.speaker)
            .map_or_else(|| config.initiator().name.clone(), |a| a.name.clone()),
    };
    GameMasterState {
        next_speaker: Some(next),
        turn_count: state.turn_count + 1,
        concluded: false,
        conclusion_reason: None,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'r> {
    pub rules: &'r CompiledRules,
    pub termination: TerminationMode,
}

impl Default for RunOptions<'static> {
    fn default() -> Self {
        Self { rules: CompiledRules::default_rules(), termination: TerminationMode::Rules }
    }
}

/// A finished (or failed) simulation.
#[derive(Debug)]
pub struct RunOutcome {
    pub transcript: Transcript,
    /// Each agent's last utterance, verbatim.
    pub final_texts: BTreeMap<String, String>,
    pub error: Option<LlmError>,
}

impl RunOutcome {
    fn finish(transcript: Transcript, error: Option<LlmError>) -> Self {
        let mut final_texts = BTreeMap::new();
        for turn in transcript.agent_turns() {
            final_texts.insert(turn.speaker.clone(), turn.text.clone());
        }
        Self { transcript, final_texts, error }
    }
}

fn scene_note(config: &ScenarioConfig) -> String {
    let initiator = &config.initiator().name;
    let other = config.counterpart(initiator).map_or("another market maker", |a| a.name.as_str());
    match config.mode {
        Mode::Rq1 => format!("{initiator} contacts {other} to ask about trading UK gilts."),
        Mode::Rq2 => format!("{initiator} calls {other} to discuss trading UK gilts."),
    }
}

struct Caller<'a> {
    gateway: &'a Gateway,
    run_index: usize,
    next_call: usize,
}

impl Caller<'_> {
    fn complete(&mut self, request: &LlmRequest) -> Result<String, LlmError> {
        let ctx = CallContext { run_index: self.run_index, call_index: self.next_call };
        self.next_call += 1;
        let text = self.gateway.complete(request, ctx)?;
        Ok(if text.trim().is_empty() { EMPTY_REPLY.to_string() } else { text })
    }
}

fn fail(mut transcript: Transcript, error: LlmError) -> RunOutcome {
    transcript.push(GAME_MASTER, format!("The conversation stopped after a backend error ({}).", error.kind()));
    transcript.termination = Termination::BackendError;
    RunOutcome::finish(transcript, Some(error))
}

fn wrong_mode(config: &ScenarioConfig, want: Mode) -> Option<LlmError> {
    (config.mode != want).then(|| LlmError::Config(format!("scenario {} is not in mode {want:?}", config.scenario_id)))
}

/// Every agent answers its chain-of-thought prompt once, initiator first.
pub fn run_rq1(gateway: &Gateway, config: &ScenarioConfig, run_index: usize) -> RunOutcome {
    let mut transcript = Transcript::new(&config.scenario_id);
    if let Some(e) = wrong_mode(config, Mode::Rq1) {
        return fail(transcript, e);
    }
    transcript.push(GAME_MASTER, scene_note(config));
    let mut caller = Caller { gateway, run_index, next_call: 0 };
    let mut order: Vec<_> = config.agents.iter().collect();
    order.sort_by_key(|a| !a.is_initiator);
    for agent in order {
        let messages = match render_cot_prompt(agent, config, &transcript) {
            Ok(m) => m,
            Err(e) => return fail(transcript, LlmError::Config(e.to_string())),
        };
        match caller.complete(&config.request(messages)) {
            Ok(text) => transcript.push(&agent.name, text),
            Err(e) => return fail(transcript, e),
        }
    }
    transcript.push(GAME_MASTER, "Each market maker has stated a decision.");
    transcript.termination = Termination::Concluded;
    RunOutcome::finish(transcript, None)
}

fn judge_request(config: &ScenarioConfig, transcript: &Transcript) -> LlmRequest {
    let mut body = String::from("Conversation:\n");
    for turn in transcript.agent_turns() {
        body.push_str(&format!("{}: {}\n", turn.speaker, turn.text));
    }
    body.push_str("\nHas this negotiation concluded? Answer yes or no.");
    LlmRequest {
        model_id: config.model_id.clone(),
        messages: vec![
            ChatMessage::system("You supervise a conversation between two market makers."),
            ChatMessage::user(body),
        ],
        temperature: 0.0,
        max_tokens: 5,
    }
}

/// Anything other than a leading "yes" counts as not concluded.
pub fn judge_says_concluded(reply: &str) -> bool {
    reply.trim_start().to_ascii_lowercase().starts_with("yes")
}

/// Alternating conversation scheduled by the Game Master.
pub fn run_rq2(gateway: &Gateway, config: &ScenarioConfig, run_index: usize, options: RunOptions<'_>) -> RunOutcome {
    let mut transcript = Transcript::new(&config.scenario_id);
    if let Some(e) = wrong_mode(config, Mode::Rq2) {
        return fail(transcript, e);
    }
    transcript.push(GAME_MASTER, scene_note(config));
    let mut caller = Caller { gateway, run_index, next_call: 0 };
    let detector = match options.termination {
        TerminationMode::Rules => Some(options.rules),
        TerminationMode::Judge => None,
    };
    let mut state = GameMasterState::new();
    loop {
        if options.termination == TerminationMode::Judge && transcript.agent_turn_count() > 0 {
            match caller.complete(&judge_request(config, &transcript)) {
                Ok(reply) if judge_says_concluded(&reply) => state = state.conclude(REASON_JUDGE),
                Ok(_) => {}
                Err(e) => return fail(transcript, e),
            }
        }
        state = game_master_step(state, &transcript, config, detector);
        if state.concluded {
            break;
        }
        let speaker = state.next_speaker.clone().expect("scheduled speaker");
        let agent = config.agent(&speaker).expect("speaker comes from the scenario");
        let messages = match render_cot_prompt(agent, config, &transcript) {
            Ok(m) => m,
            Err(e) => return fail(transcript, LlmError::Config(e.to_string())),
        };
        match caller.complete(&config.request(messages)) {
            Ok(text) => transcript.push(&speaker, text),
            Err(e) => return fail(transcript, e),
        }
    }
    let reason = state.conclusion_reason.clone().unwrap_or_default();
    transcript.push(GAME_MASTER, format!("The Game Master closes the conversation: {reason}."));
    transcript.termination = state.termination();
    RunOutcome::finish(transcript, None)
}

/// Dispatches on the scenario mode.
pub fn run_simulation(gateway: &Gateway, config: &ScenarioConfig, run_index: usize, options: RunOptions<'_>) -> RunOutcome {
    match config.mode {
        Mode::Rq1 => run_rq1(gateway, config, run_index),
        Mode::Rq2 => run_rq2(gateway, config, run_index, options),
    }
}
