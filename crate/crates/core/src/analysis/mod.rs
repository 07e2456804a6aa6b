//! Rule-based transcript classification.
//!
//! Every function here is pure: the same rules and the same transcript always
//! give the same answer.

pub mod judge;
pub mod quantity;
pub mod rules;
pub mod text;

use std::collections::BTreeMap;

use regex::Regex;

use crate::model::{
    transcript_ref, AgentProfile, ExecutedTrade, IntentionLabel, RecallVerdict, Side, SimulationResult,
    TradeDecision, Transcript,
};

pub use judge::{JudgeClassifier, JudgeVerdict};
pub use quantity::parse_quantity;
pub use rules::{ClassifierRules, CompiledRules, RulesError, DEFAULT_RULES_TOML};
use text::{first_match, normalize, sentences, Sentence};

fn negatable(rules: &CompiledRules) -> Option<(&[String], usize)> {
    Some((&rules.negation_tokens, rules.negation_window))
}

fn decisions_in(sentence: &str, rules: &CompiledRules, found: &mut Vec<TradeDecision>) {
    for (decision, patterns) in &rules.decisions {
        let neg = match decision {
            TradeDecision::NoTrade => None,
            _ => negatable(rules),
        };
        if first_match(sentence, patterns, neg).is_some() && !found.contains(decision) {
            found.push(*decision);
        }
    }
}

fn unique(found: &[TradeDecision]) -> Option<TradeDecision> {
    match found {
        [one] => Some(*one),
        _ => None,
    }
}

/// The decision stated in one utterance. Questions are ignored. When a
/// decision marker such as "Decision:" is present only the text after the
/// last marker counts. Conflicting decisions give `None`.
pub fn extract_decision(text: &str, rules: &CompiledRules) -> Option<TradeDecision> {
    let text = normalize(text);
    let sents: Vec<Sentence<'_>> = sentences(&text).into_iter().filter(|s| !s.is_question()).collect();

    let last_marker = sents
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, s)| {
            rules
                .markers
                .iter()
                .flat_map(|p| p.find_iter(s.text))
                .map(|m| m.end())
                .max()
                .map(|end| (i, end))
        });

    let mut found = Vec::new();
    match last_marker {
        Some((i, end)) => {
            let sentence = sents[i].text;
            // The clause prefix stays visible so negation still sees it.
            for (decision, patterns) in &rules.decisions {
                let neg = match decision {
                    TradeDecision::NoTrade => None,
                    _ => negatable(rules),
                };
                let hit = patterns.iter().flat_map(|p| p.find_iter(sentence)).any(|m| {
                    m.start() >= end
                        && neg.is_none_or(|(t, w)| !text::is_negated(sentence, m.start(), t, w))
                });
                if hit && !found.contains(decision) {
                    found.push(*decision);
                }
            }
            if found.is_empty() {
                if let Some(next) = sents.get(i + 1) {
                    decisions_in(next.text, rules, &mut found);
                }
            }
        }
        None => {
            for s in &sents {
                decisions_in(s.text, rules, &mut found);
            }
        }
    }
    unique(&found)
}

/// The decision of the agent's last decision-bearing turn.
pub fn final_decision<'a>(turns: impl IntoIterator<Item = &'a str>, rules: &CompiledRules) -> Option<TradeDecision> {
    turns.into_iter().filter_map(|t| extract_decision(t, rules)).last()
}

fn matches_any(text: &str, patterns: &[Regex], neg: Option<(&[String], usize)>, skip_questions: bool) -> bool {
    let text = normalize(text);
    sentences(&text)
        .iter()
        .filter(|s| !(skip_questions && s.is_question()))
        .any(|s| first_match(s.text, patterns, neg).is_some())
}

/// Labels what one agent wanted from the conversation.
pub fn classify_intention<S: AsRef<str>>(agent_turns: &[S], rules: &CompiledRules) -> IntentionLabel {
    let decisions: Vec<Option<TradeDecision>> =
        agent_turns.iter().map(|t| extract_decision(t.as_ref(), rules)).collect();
    let wants_trade = decisions
        .iter()
        .any(|d| matches!(d, Some(TradeDecision::Buy | TradeDecision::Sell | TradeDecision::Flatten)))
        || agent_turns
            .iter()
            .any(|t| matches_any(t.as_ref(), &rules.intends, negatable(rules), false));
    if wants_trade {
        return IntentionLabel::IntendsToTrade;
    }
    let refuses = decisions.contains(&Some(TradeDecision::NoTrade))
        || agent_turns.iter().any(|t| matches_any(t.as_ref(), &rules.declines, None, true));
    if refuses {
        IntentionLabel::Declines
    } else {
        IntentionLabel::Unclear
    }
}

/// The sentence holding the first agreement phrase, if the turn carries one
/// outside questions and negations.
fn agreement_sentence(text: &str, rules: &CompiledRules) -> Option<String> {
    let text = normalize(text);
    sentences(&text)
        .into_iter()
        .filter(|s| !s.is_question())
        .find(|s| first_match(s.text, &rules.agreement, negatable(rules)).is_some())
        .map(|s| s.text.to_string())
}

/// True when `text` contains agreement language the trade detector accepts.
pub fn is_agreement(text: &str, rules: &CompiledRules) -> bool {
    agreement_sentence(text, rules).is_some()
}

fn side_of(decision: Option<TradeDecision>, holdings: i64) -> Option<Side> {
    decision.and_then(|d| d.direction(holdings))
}

/// A trade counts as executed only when both agents used agreement language,
/// neither ended on "no trade", their directions are opposite and one of the
/// agreement turns names a single size.
pub fn detect_trade(transcript: &Transcript, profiles: &[AgentProfile], rules: &CompiledRules) -> Option<ExecutedTrade> {
    let [a, b] = profiles else {
        return None;
    };
    let agreements = |p: &AgentProfile| -> Vec<(usize, String)> {
        transcript
            .turns
            .iter()
            .filter(|t| t.speaker == p.name && is_agreement(&t.text, rules))
            .map(|t| (t.index, t.text.clone()))
            .collect()
    };
    let (agree_a, agree_b) = (agreements(a), agreements(b));
    if agree_a.is_empty() || agree_b.is_empty() {
        return None;
    }
    let finals = [a, b].map(|p| final_decision(transcript.texts_of(&p.name), rules));
    if finals.contains(&Some(TradeDecision::NoTrade)) {
        return None;
    }
    let own_side = |p: &AgentProfile, agreed: &[(usize, String)], last: Option<TradeDecision>| {
        let (_, text) = agreed.last().expect("non-empty");
        side_of(extract_decision(text, rules), p.initial_holdings).or_else(|| side_of(last, p.initial_holdings))
    };
    let (side_a, side_b) = match (own_side(a, &agree_a, finals[0]), own_side(b, &agree_b, finals[1])) {
        (Some(x), Some(y)) => (x, y),
        (Some(x), None) => (x, x.opposite()),
        (None, Some(y)) => (y.opposite(), y),
        (None, None) => return None,
    };
    if side_a == side_b {
        return None;
    }

    let mut turns: Vec<&(usize, String)> = agree_a.iter().chain(agree_b.iter()).collect();
    turns.sort_by_key(|(index, _)| std::cmp::Reverse(*index));
    let quantity = turns.iter().find_map(|(_, text)| {
        agreement_sentence(text, rules)
            .and_then(|s| parse_quantity(&s, rules))
            .or_else(|| parse_quantity(text, rules))
    })?;

    let (buyer, seller) = match side_a {
        Side::Buy => (a, b),
        Side::Sell => (b, a),
    };
    ExecutedTrade::new(&buyer.name, &seller.name, quantity)
}

/// First signed holdings figure the speaker states in `text`.
pub fn stated_holdings(text: &str, rules: &CompiledRules) -> Option<i64> {
    let text = normalize(text);
    let mut best: Option<(usize, i64)> = None;
    for s in sentences(&text) {
        if let Some(found) = holdings_in_sentence(s, rules) {
            if best.is_none_or(|(at, _)| found.0 < at) {
                best = Some(found);
            }
        }
    }
    best.map(|(_, v)| v)
}

fn holdings_in_sentence(s: Sentence<'_>, rules: &CompiledRules) -> Option<(usize, i64)> {
    let mut statements: Vec<(usize, i64)> = Vec::new();
    for m in rules.holding_flat.iter().flat_map(|p| p.find_iter(s.text)) {
        statements.push((s.start + m.start(), 0));
    }
    for cue in rules.holding_cues.iter().flat_map(|p| p.find_iter(s.text)) {
        let mut limit = (cue.end() + rules.holding_window).min(s.text.len());
        while !s.text.is_char_boundary(limit) {
            limit -= 1;
        }
        let window = &s.text[cue.end()..limit];
        let quantity = quantity::scan(window, rules)
            .into_iter()
            .next()
            .map(|q| (q.start, i128::try_from(q.value).ok()));
        let zero = rules
            .holding_zero
            .iter()
            .filter_map(|p| p.find(window))
            .map(|m| (m.start(), Some(0i128)))
            .min();
        let first = match (quantity, zero) {
            (Some(q), Some(z)) => Some(if z.0 < q.0 { z } else { q }),
            (q, z) => q.or(z),
        };
        let Some((offset, Some(value))) = first else {
            continue;
        };
        let between = &s.text[cue.start()..cue.end() + offset];
        let minus = window[..offset].ends_with('-');
        let negative = minus || rules.holding_negative.iter().any(|p| p.is_match(between));
        let signed = if negative { -value } else { value };
        if let Ok(v) = i64::try_from(signed) {
            statements.push((s.start + cue.start(), v));
        }
    }
    statements.into_iter().min_by_key(|(at, _)| *at)
}

/// Whether the agent's own turns state its starting holdings correctly.
pub fn recall_verdict<'a>(
    turns: impl IntoIterator<Item = &'a str>,
    profile: &AgentProfile,
    rules: &CompiledRules,
) -> RecallVerdict {
    match turns.into_iter().find_map(|t| stated_holdings(t, rules)) {
        None => RecallVerdict::Omitted,
        Some(v) if v == profile.initial_holdings => RecallVerdict::Correct,
        Some(_) => RecallVerdict::Incorrect,
    }
}

pub fn check_holdings_recall(
    transcript: &Transcript,
    profiles: &[AgentProfile],
    rules: &CompiledRules,
) -> BTreeMap<String, RecallVerdict> {
    profiles
        .iter()
        .map(|p| (p.name.clone(), recall_verdict(transcript.texts_of(&p.name), p, rules)))
        .collect()
}

/// Classifies one stored run.
pub fn analyse(
    run_index: usize,
    transcript: &Transcript,
    profiles: &[AgentProfile],
    rules: &CompiledRules,
) -> SimulationResult {
    let mut per_agent_intention = BTreeMap::new();
    let mut per_agent_decision = BTreeMap::new();
    for p in profiles {
        let turns: Vec<&str> = transcript.texts_of(&p.name).collect();
        per_agent_intention.insert(p.name.clone(), classify_intention(&turns, rules));
        per_agent_decision.insert(p.name.clone(), final_decision(turns.iter().copied(), rules));
    }
    SimulationResult {
        scenario_id: transcript.scenario_id.clone(),
        run_index,
        termination: transcript.termination,
        per_agent_intention,
        per_agent_decision,
        trade: detect_trade(transcript, profiles, rules),
        recall: check_holdings_recall(transcript, profiles, rules),
        transcript_ref: transcript_ref(&transcript.scenario_id, run_index),
    }
}
