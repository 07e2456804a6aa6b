//! Optional LLM judge: one completion per transcript asking for a structured
//! verdict. Used to study disagreement with the rule-based classifier, never
//! as the default path.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::llm::{CallContext, ChatMessage, Gateway, LlmError, LlmRequest};
use crate::model::{
    transcript_ref, AgentProfile, ExecutedTrade, IntentionLabel, RecallVerdict, SimulationResult, TradeDecision,
    Transcript,
};

const INSTRUCTIONS: &str = "You label transcripts of conversations between bond market makers. \
Reply with a single JSON object and nothing else, with keys \"decisions\", \"intentions\", \"recall\" and \"trade\". \
\"decisions\" maps each trader name to \"buy\", \"sell\", \"flatten\", \"no_trade\" or null (the trader's final stated decision). \
\"intentions\" maps each trader name to \"intends_to_trade\", \"declines\" or \"unclear\". \
\"recall\" maps each trader name to \"correct\", \"incorrect\" or \"omitted\" (whether they stated their own starting holdings correctly). \
\"trade\" is null unless both traders explicitly agreed a trade, in which case it is {\"buyer\": name, \"seller\": name, \"quantity\": integer units}.";

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct JudgeTrade {
    pub buyer: String,
    pub seller: String,
    pub quantity: u64,
}

/// The structure the judge must reply with.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct JudgeVerdict {
    pub decisions: BTreeMap<String, Option<TradeDecision>>,
    pub intentions: BTreeMap<String, IntentionLabel>,
    pub recall: BTreeMap<String, RecallVerdict>,
    pub trade: Option<JudgeTrade>,
}

impl JudgeVerdict {
    /// Accepts a bare JSON object, optionally wrapped in a code fence.
    pub fn parse(reply: &str, profiles: &[AgentProfile]) -> Result<Self, LlmError> {
        let start = reply.find('{');
        let end = reply.rfind('}');
        let body = match (start, end) {
            (Some(s), Some(e)) if s < e => &reply[s..=e],
            _ => return Err(LlmError::MalformedResponse("judge reply has no JSON object".into())),
        };
        let verdict: JudgeVerdict = serde_json::from_str(body)
            .map_err(|e| LlmError::MalformedResponse(format!("judge verdict: {e}")))?;
        for p in profiles {
            if !verdict.intentions.contains_key(&p.name) || !verdict.recall.contains_key(&p.name) {
                return Err(LlmError::MalformedResponse(format!("judge verdict omits {}", p.name)));
            }
        }
        Ok(verdict)
    }
}

pub struct JudgeClassifier<'g> {
    gateway: &'g Gateway,
    pub model_id: String,
    pub max_tokens: u32,
}

impl<'g> JudgeClassifier<'g> {
    pub fn new(gateway: &'g Gateway, model_id: impl Into<String>) -> Self {
        Self { gateway, model_id: model_id.into(), max_tokens: 400 }
    }

    pub fn request(&self, transcript: &Transcript, profiles: &[AgentProfile]) -> LlmRequest {
        let mut body = String::new();
        for p in profiles {
            body.push_str(&format!("{} starts with holdings of {}.\n", p.name, p.initial_holdings));
        }
        body.push_str("\nTranscript:\n");
        for turn in transcript.agent_turns() {
            body.push_str(&format!("{}: {}\n", turn.speaker, turn.text));
        }
        LlmRequest {
            model_id: self.model_id.clone(),
            messages: vec![ChatMessage::system(INSTRUCTIONS), ChatMessage::user(body)],
            temperature: 0.0,
            max_tokens: self.max_tokens,
        }
    }

    pub fn classify(
        &self,
        run_index: usize,
        transcript: &Transcript,
        profiles: &[AgentProfile],
        ctx: CallContext,
    ) -> Result<SimulationResult, LlmError> {
        let reply = self.gateway.complete(&self.request(transcript, profiles), ctx)?;
        let verdict = JudgeVerdict::parse(&reply, profiles)?;
        let named = |name: &str| profiles.iter().any(|p| p.name == name);
        let trade = verdict
            .trade
            .filter(|t| named(&t.buyer) && named(&t.seller))
            .and_then(|t| ExecutedTrade::new(t.buyer, t.seller, t.quantity));
        let keep = |name: &String| named(name);
        Ok(SimulationResult {
            scenario_id: transcript.scenario_id.clone(),
            run_index,
            termination: transcript.termination,
            per_agent_intention: verdict.intentions.into_iter().filter(|(k, _)| keep(k)).collect(),
            per_agent_decision: profiles
                .iter()
                .map(|p| (p.name.clone(), verdict.decisions.get(&p.name).copied().flatten()))
                .collect(),
            trade,
            recall: verdict.recall.into_iter().filter(|(k, _)| keep(k)).collect(),
            transcript_ref: transcript_ref(&transcript.scenario_id, run_index),
        })
    }
}
