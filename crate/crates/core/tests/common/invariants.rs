//! Generated-input invariants, run through proptest's `TestRunner` so the
//! acceptance report can drive them with an explicit case count.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use tradertalk::analysis::{analyse, classify_intention, final_decision, parse_quantity, CompiledRules};
use tradertalk::llm::{Gateway, ScriptedBackend, ScriptedReply};
use tradertalk::metrics::{aggregate, wilson_interval, Z_95};
use tradertalk::model::{
    transcript_ref, ExecutedTrade, IntentionLabel, RecallVerdict, Termination, TradeDecision, Transcript,
};
use tradertalk::orchestrator::{game_master_step, run_rq2, GameMasterState, RunOptions, TerminationMode};
use tradertalk::scenario::builtin_rq2;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn outcome(r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>, cases: u32) -> Result<u32, String> {
    r.map(|_| cases).map_err(|e| e.to_string())
}

/// Phrases that exercise the classifier and the Game Master's detector.
const FRAGMENTS: &[&str] = &[
    "Good morning.",
    "I hold 10 million gilts.",
    "I hold negative 10 million.",
    "I want to sell 10 million at mid.",
    "I would like to buy 5 million.",
    "Agreed, I buy 10 million from you at mid.",
    "Deal.",
    "I will not trade today.",
    "I decline to trade.",
    "Decision: No trade.",
    "Decision: Buy bonds.",
    "Decision: Sell bonds.",
    "Decision: Flatten your trading book.",
    "Should we trade?",
    "Let me check with my desk.",
    "Not interested.",
    "I don't want to buy.",
    "Done, 10mm at mid.",
    "We are flat.",
];

fn utterance() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::collection::vec(prop::sample::select(FRAGMENTS), 1..4).prop_map(|v| v.join(" ")),
        1 => ".{0,80}",
    ]
}

/// Agent turns alternate starting with the initiator, and never exceed the cap.
pub fn turn_alternation_and_cap(cases: u32) -> Result<u32, String> {
    let strategy = (1usize..14, prop::collection::vec(utterance(), 0..30), any::<bool>());
    let r = runner(cases).run(&strategy, |(max_turns, replies, judge)| {
        let mut config = builtin_rq2();
        config.max_turns = max_turns;
        let run = replies.into_iter().map(ScriptedReply::Text).collect();
        let gateway = Gateway::new(ScriptedBackend::with_default("Lovely weather.").with_runs(vec![run]));
        let termination = if judge { TerminationMode::Judge } else { TerminationMode::Rules };
        let options = RunOptions { rules: CompiledRules::default_rules(), termination };
        let out = run_rq2(&gateway, &config, 0, options);
        prop_assert!(out.error.is_none());
        let speakers: Vec<&str> = out.transcript.agent_turns().map(|t| t.speaker.as_str()).collect();
        prop_assert!(!speakers.is_empty());
        prop_assert!(speakers.len() <= max_turns);
        prop_assert_eq!(speakers[0], "Josephine");
        for pair in speakers.windows(2) {
            prop_assert_ne!(pair[0], pair[1]);
        }
        if out.transcript.termination == Termination::TurnCapReached {
            prop_assert_eq!(speakers.len(), max_turns);
        }
        prop_assert!(out.transcript.validate().is_ok());
        Ok(())
    });
    outcome(r, cases)
}

/// Stepping the Game Master on a conversation that never concludes stops
/// after exactly `max_turns` speakers.
pub fn game_master_terminates(cases: u32) -> Result<u32, String> {
    let r = runner(cases).run(&(0usize..40), |max_turns| {
        let mut config = builtin_rq2();
        config.max_turns = max_turns;
        let mut transcript = Transcript::new("rq2");
        let mut state = GameMasterState::new();
        let mut steps = 0;
        loop {
            state = game_master_step(state, &transcript, &config, Some(CompiledRules::default_rules()));
            if state.concluded {
                break;
            }
            steps += 1;
            prop_assert!(steps <= max_turns);
            transcript.push(state.next_speaker.clone().unwrap(), "Lovely weather.");
        }
        prop_assert_eq!(steps, max_turns);
        prop_assert_eq!(state.termination(), Termination::TurnCapReached);
        let again = game_master_step(state.clone(), &transcript, &config, None);
        prop_assert_eq!(again, state);
        Ok(())
    });
    outcome(r, cases)
}

fn decision() -> impl Strategy<Value = Option<TradeDecision>> + Clone {
    prop::option::of(prop::sample::select(TradeDecision::ALL.to_vec()))
}

fn result() -> impl Strategy<Value = tradertalk::model::SimulationResult> {
    let agent = (prop::sample::select(IntentionLabel::ALL.to_vec()), decision(), prop::sample::select(RecallVerdict::ALL.to_vec()));
    (
        prop::sample::select(vec![Termination::Concluded, Termination::TurnCapReached, Termination::BackendError]),
        agent.clone(),
        agent,
        prop::option::of((any::<bool>(), 1u64..100_000_000)),
    )
        .prop_map(|(termination, j, d, trade)| tradertalk::model::SimulationResult {
            scenario_id: "rq2".into(),
            run_index: 0,
            termination,
            per_agent_intention: [("Josephine".to_string(), j.0), ("David".to_string(), d.0)].into(),
            per_agent_decision: [("Josephine".to_string(), j.1), ("David".to_string(), d.1)].into(),
            trade: trade.and_then(|(david_buys, q)| {
                let (b, s) = if david_buys { ("David", "Josephine") } else { ("Josephine", "David") };
                ExecutedTrade::new(b, s, q)
            }),
            recall: [("Josephine".to_string(), j.2), ("David".to_string(), d.2)].into(),
            transcript_ref: String::new(),
        })
}

fn results() -> impl Strategy<Value = Vec<tradertalk::model::SimulationResult>> {
    prop::collection::vec(result(), 1..60).prop_map(|mut v| {
        for (i, r) in v.iter_mut().enumerate() {
            r.run_index = i;
            r.transcript_ref = transcript_ref("rq2", i);
        }
        v
    })
}

/// Every reported rate and interval bound lies in [0, 1] with low <= value <= high.
pub fn rates_are_bounded(cases: u32) -> Result<u32, String> {
    let r = runner(cases).run(&results(), |results| {
        let m = aggregate(&results, "David").unwrap();
        for (name, rate) in &m.rates {
            prop_assert!((0.0..=1.0).contains(&rate.value), "{} value {}", name, rate.value);
            prop_assert!(0.0 <= rate.low && rate.low <= rate.value + 1e-12, "{} low {}", name, rate.low);
            prop_assert!(rate.value <= rate.high + 1e-12 && rate.high <= 1.0, "{} high {}", name, rate.high);
        }
        let fields = [m.both_intend_rate, m.any_intend_rate, m.no_trade_rate, m.trade_rate, m.recall_both_correct_rate, m.recall_omitted_rate];
        for v in fields.into_iter().chain(m.decision_distribution.values().copied()) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((-1.0..=1.0).contains(&m.intention_to_execution_gap));
        Ok(())
    });
    outcome(r, cases)
}

/// The Wilson interval contains the point estimate, stays in [0, 1], and
/// pins its bounds at the edges.
pub fn wilson_contains_estimate(cases: u32) -> Result<u32, String> {
    let strategy = (1u64..1_000_000).prop_flat_map(|n| (0..=n, Just(n)));
    let r = runner(cases).run(&strategy, |(s, n)| {
        let (low, high) = wilson_interval(s, n, Z_95).unwrap();
        let p = s as f64 / n as f64;
        prop_assert!(0.0 <= low && low <= p + 1e-12 && p <= high + 1e-12 && high <= 1.0, "{} {} {}", low, p, high);
        prop_assert_eq!(wilson_interval(0, n, Z_95).unwrap().0, 0.0);
        prop_assert_eq!(wilson_interval(n, n, Z_95).unwrap().1, 1.0);
        prop_assert!(wilson_interval(n + 1, n, Z_95).is_err());
        Ok(())
    });
    outcome(r, cases)
}

/// parse_quantity never panics, and a single stated amount is recovered.
pub fn parse_quantity_is_total(cases: u32) -> Result<u32, String> {
    let rules = CompiledRules::default_rules();
    let any_text = runner(cases).run(&any::<String>(), |text| {
        if let Some(q) = parse_quantity(&text, rules) {
            prop_assert!(q > 0);
        }
        Ok(())
    });
    outcome(any_text, cases)?;
    let stated = (1u64..1000, prop::sample::select(vec![(" million", 1_000_000u64), (" mm", 1_000_000), ("m", 1_000_000), (" bn", 1_000_000_000)]));
    let r = runner(cases).run(&stated, |(k, (unit, scale))| {
        let text = format!("I can do {k}{unit} at mid.");
        prop_assert_eq!(parse_quantity(&text, rules), Some(k * scale), "{}", text);
        Ok(())
    });
    outcome(r, cases)
}

/// Metrics do not depend on the order results arrive in.
pub fn aggregate_is_permutation_invariant(cases: u32) -> Result<u32, String> {
    let strategy = results().prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()));
    let r = runner(cases).run(&strategy, |(original, shuffled)| {
        prop_assert_eq!(aggregate(&original, "David").unwrap(), aggregate(&shuffled, "David").unwrap());
        Ok(())
    });
    outcome(r, cases)
}

/// An agent labelled as declining never ends on Buy or Sell.
pub fn declines_never_buys_or_sells(cases: u32) -> Result<u32, String> {
    let rules = CompiledRules::default_rules();
    let r = runner(cases).run(&prop::collection::vec(utterance(), 1..5), |turns| {
        if classify_intention(&turns, rules) == IntentionLabel::Declines {
            let last = final_decision(turns.iter().map(String::as_str), rules);
            prop_assert!(!matches!(last, Some(TradeDecision::Buy | TradeDecision::Sell)), "{:?}", turns);
        }
        let mut t = Transcript::new("rq2");
        for (i, text) in turns.iter().enumerate() {
            t.push(if i % 2 == 0 { "Josephine" } else { "David" }, text.clone());
        }
        let result = analyse(0, &t, &builtin_rq2().agents, rules);
        for (agent, label) in &result.per_agent_intention {
            if *label == IntentionLabel::Declines {
                prop_assert!(!matches!(result.per_agent_decision[agent], Some(TradeDecision::Buy | TradeDecision::Sell)));
            }
        }
        Ok(())
    });
    outcome(r, cases)
}

pub type Invariant = fn(u32) -> Result<u32, String>;

pub const ALL: &[(&str, Invariant)] = &[
    ("turn alternation and cap", turn_alternation_and_cap),
    ("game master terminates", game_master_terminates),
    ("rates bounded", rates_are_bounded),
    ("wilson containment and edges", wilson_contains_estimate),
    ("parse_quantity totality", parse_quantity_is_total),
    ("aggregate permutation invariance", aggregate_is_permutation_invariant),
    ("declines never buys or sells", declines_never_buys_or_sells),
];
