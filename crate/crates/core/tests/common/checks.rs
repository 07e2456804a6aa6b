//! End-to-end checks shared by the topic tests and the acceptance report.
//! Each returns a one-line detail on success and the reason on failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Deserialize;
use tradertalk::analysis::{analyse, CompiledRules};
use tradertalk::batch::{run_batch, BackendSpec, BatchOptions};
use tradertalk::llm::{Gateway, ScriptFile, ScriptedReply};
use tradertalk::metrics::BatchMetrics;
use tradertalk::model::{IntentionLabel, RecallVerdict, TradeDecision, Transcript};
use tradertalk::orchestrator::TerminationMode;
use tradertalk::report::{MANIFEST_FILE, METRICS_JSON, RESULTS_FILE, TRANSCRIPTS_FILE};
use tradertalk::scenario::{builtin_rq1, builtin_rq2, render_cot_prompt, ScenarioConfig};

use super::{completion_body, fake_model, rq1_runs, rq2_runs, write_script, StubServer};

pub type Check = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name} = {got}, expected {want} ± {tol}"))
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn scripted_batch(config: &ScenarioConfig, runs: Vec<Vec<String>>, dir: &Path) -> Result<(BatchMetrics, Duration), String> {
    let script = dir.join("script.json");
    write_script(&script, runs);
    let started = Instant::now();
    let gateway = BackendSpec::Scripted(script).build(0, None).map_err(|e| e.to_string())?;
    let out = dir.join("batch");
    let (manifest, metrics) = run_batch(config, &gateway, &BatchOptions::new(300, &out)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(manifest.n_errored == 0, || format!("{} runs errored", manifest.n_errored))?;
    Ok((metrics, elapsed))
}

pub fn rq1_distribution() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (m, elapsed) = scripted_batch(&builtin_rq1(), rq1_runs(), dir.path())?;
    let d = |k| m.decision_distribution.get(&k).copied().unwrap_or(0.0);
    close("no_trade", d(TradeDecision::NoTrade), 0.600, 0.0005)?;
    close("flatten", d(TradeDecision::Flatten), 0.2367, 0.0005)?;
    close("buy", d(TradeDecision::Buy), 0.100, 0.0005)?;
    close("sell", d(TradeDecision::Sell), 0.0633, 0.0005)?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "no_trade {:.4} flatten {:.4} buy {:.4} sell {:.4} in {:.2}s",
        d(TradeDecision::NoTrade),
        d(TradeDecision::Flatten),
        d(TradeDecision::Buy),
        d(TradeDecision::Sell),
        elapsed.as_secs_f64()
    ))
}

pub fn rq2_gap() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (m, elapsed) = scripted_batch(&builtin_rq2(), rq2_runs(), dir.path())?;
    close("both_intend_rate", m.both_intend_rate, 0.580, 0.002)?;
    close("any_intend_rate", m.any_intend_rate, 0.980, 0.002)?;
    close("trade_rate", m.trade_rate, 0.0567, 0.002)?;
    ensure(m.intention_to_execution_gap == m.both_intend_rate - m.trade_rate, || {
        format!("gap {} != {} - {}", m.intention_to_execution_gap, m.both_intend_rate, m.trade_rate)
    })?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "both {:.4} any {:.4} trade {:.4} gap {:.4} in {:.2}s",
        m.both_intend_rate,
        m.any_intend_rate,
        m.trade_rate,
        m.intention_to_execution_gap,
        elapsed.as_secs_f64()
    ))
}

#[derive(Deserialize)]
struct Stored {
    run_index: usize,
    #[serde(flatten)]
    transcript: Transcript,
}

#[derive(Deserialize)]
pub struct Label {
    pub run_index: usize,
    pub scenario_id: String,
    pub decisions: BTreeMap<String, Option<TradeDecision>>,
    pub intentions: BTreeMap<String, IntentionLabel>,
    pub recall: BTreeMap<String, RecallVerdict>,
    pub trade: Option<LabelTrade>,
}

#[derive(Deserialize, PartialEq, Debug)]
pub struct LabelTrade {
    pub buyer: String,
    pub seller: String,
    pub quantity: u64,
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_labels() -> Vec<Label> {
    serde_json::from_str(&std::fs::read_to_string(golden_dir().join("labels.json")).unwrap()).unwrap()
}

/// Every field of every label must be reproduced by the rule classifier.
pub fn golden_agreement() -> Check {
    let transcripts: Vec<Stored> = std::fs::read_to_string(golden_dir().join("transcripts.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let labels = golden_labels();
    ensure(transcripts.len() == labels.len(), || "transcripts and labels differ in length".into())?;
    ensure(labels.len() >= 50, || format!("only {} labelled transcripts", labels.len()))?;

    let rules = CompiledRules::default_rules();
    let mut failures = Vec::new();
    for (stored, label) in transcripts.iter().zip(&labels) {
        ensure(stored.run_index == label.run_index, || format!("label order differs at {}", label.run_index))?;
        let scenario = ScenarioConfig::resolve(&label.scenario_id).map_err(|e| e.to_string())?;
        let r = analyse(stored.run_index, &stored.transcript, &scenario.agents, rules);
        let trade = r.trade.as_ref().map(|t| LabelTrade {
            buyer: t.buyer.clone(),
            seller: t.seller.clone(),
            quantity: t.quantity,
        });
        if r.per_agent_decision != label.decisions {
            failures.push(format!("#{} decisions {:?} != {:?}", label.run_index, r.per_agent_decision, label.decisions));
        }
        if r.per_agent_intention != label.intentions {
            failures.push(format!("#{} intentions {:?} != {:?}", label.run_index, r.per_agent_intention, label.intentions));
        }
        if r.recall != label.recall {
            failures.push(format!("#{} recall {:?} != {:?}", label.run_index, r.recall, label.recall));
        }
        if trade != label.trade {
            failures.push(format!("#{} trade {:?} != {:?}", label.run_index, trade, label.trade));
        }
    }
    ensure(failures.is_empty(), || format!("{} disagreements: {}", failures.len(), failures.join("; ")))?;
    Ok(format!("{}/{} transcripts agree on every field", labels.len(), labels.len()))
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        ensure(read(&a.join(name))? == read(&b.join(name))?, || format!("{name} differs"))?;
    }
    Ok(())
}

/// A script whose initiator prompt has several seeded alternatives, so the
/// seed actually matters.
fn seeded_rq1_script(path: &Path) {
    let config = builtin_rq1();
    let mut opening = Transcript::new(&config.scenario_id);
    opening.push(tradertalk::model::GAME_MASTER, "Josephine contacts David to ask about trading UK gilts.");
    let messages = render_cot_prompt(config.initiator(), &config, &opening).unwrap();
    let mut file = ScriptFile::default();
    file.default = Some("Decision: No trade.".into());
    file.insert_choices(
        config.request(messages).fingerprint(),
        ["Decision: No trade.", "Decision: Buy bonds.", "Decision: Flatten your trading book.", "I am not sure."]
            .map(|t| ScriptedReply::Text(t.into()))
            .to_vec(),
    );
    file.save(path).unwrap();
}

fn seeded_batch(config: &ScenarioConfig, script: &Path, seed: u64, out: &Path) -> Result<BatchMetrics, String> {
    let gateway = BackendSpec::Scripted(script.to_path_buf()).build(seed, None).map_err(|e| e.to_string())?;
    let mut options = BatchOptions::new(120, out);
    options.seed = Some(seed);
    options.concurrency = 8;
    run_batch(config, &gateway, &options).map(|(_, m)| m).map_err(|e| e.to_string())
}

/// Same scenario, script, seed and concurrency twice: byte-identical output.
pub fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = [TRANSCRIPTS_FILE, RESULTS_FILE, METRICS_JSON];

    let script = dir.path().join("rq1.json");
    seeded_rq1_script(&script);
    let a = seeded_batch(&builtin_rq1(), &script, 7, &dir.path().join("a"))?;
    seeded_batch(&builtin_rq1(), &script, 7, &dir.path().join("b"))?;
    same_files(&dir.path().join("a"), &dir.path().join("b"), &files)?;
    let c = seeded_batch(&builtin_rq1(), &script, 8, &dir.path().join("c"))?;
    ensure(a.per_agent_intention_rate != c.per_agent_intention_rate || a.rates != c.rates, || {
        "a different seed gave identical metrics, so the seed is not exercised".into()
    })?;

    let script2 = dir.path().join("rq2.json");
    write_script(&script2, rq2_runs());
    seeded_batch(&builtin_rq2(), &script2, 7, &dir.path().join("d"))?;
    seeded_batch(&builtin_rq2(), &script2, 7, &dir.path().join("e"))?;
    same_files(&dir.path().join("d"), &dir.path().join("e"), &files)?;
    Ok("rq1 (seeded choices) and rq2 batches byte-identical across reruns".into())
}

fn record_and_replay(config: &ScenarioConfig, termination: TerminationMode, dir: &Path) -> Result<usize, String> {
    let stub = StubServer::start(|body, n| (200, completion_body(&fake_model(body, n))));
    let live = Gateway::new(stub.backend());
    let recorded = dir.join("recorded");
    let mut options = BatchOptions::new(12, &recorded);
    options.concurrency = 4;
    options.termination = termination;
    let (manifest, _) = run_batch(config, &live, &options).map_err(|e| e.to_string())?;
    ensure(manifest.n_errored == 0, || format!("recording had {} errored runs", manifest.n_errored))?;

    let log = recorded.join(tradertalk::report::EXCHANGES_FILE);
    let replay = BackendSpec::Replay(log).build(0, None).map_err(|e| e.to_string())?;
    let replayed = dir.join("replayed");
    options.out_dir = replayed.clone();
    let (manifest2, _) = run_batch(config, &replay, &options).map_err(|e| e.to_string())?;
    ensure(manifest2.n_errored == 0, || format!("replay had {} errored runs", manifest2.n_errored))?;
    same_files(&recorded, &replayed, &[TRANSCRIPTS_FILE, RESULTS_FILE, METRICS_JSON])?;
    ensure(read(&recorded.join(MANIFEST_FILE)).is_ok(), || "no manifest".into())?;
    Ok(stub.requests().len())
}

/// Batches recorded against the stub server replay to identical files.
pub fn replay_fidelity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = record_and_replay(&builtin_rq1(), TerminationMode::Rules, &dir.path().join("rq1"))?;
    let b = record_and_replay(&builtin_rq2(), TerminationMode::Rules, &dir.path().join("rq2"))?;
    let c = record_and_replay(&builtin_rq2(), TerminationMode::Judge, &dir.path().join("judge"))?;
    Ok(format!("rq1, rq2 and judge-terminated rq2 replay identically ({} recorded calls)", a + b + c))
}

/// Request shape and auth against the stub, and no retry on malformed replies.
pub fn wire_conformance() -> Check {
    let stub = StubServer::start(|body, n| (200, completion_body(&fake_model(body, n))));
    let gateway = Gateway::new(stub.backend());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut options = BatchOptions::new(4, dir.path());
    options.termination = TerminationMode::Judge;
    run_batch(&builtin_rq2(), &gateway, &options).map_err(|e| e.to_string())?;
    let seen = stub.requests();
    ensure(!seen.is_empty(), || "no requests reached the stub".into())?;
    for r in &seen {
        ensure(r.header("authorization") == Some("Bearer test-key"), || "missing bearer auth".into())?;
        let body = r.json();
        let obj = body.as_object().ok_or("body is not an object")?;
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        ensure(keys == ["max_tokens", "messages", "model", "temperature"], || format!("fields {keys:?}"))?;
        ensure(obj["model"].is_string() && obj["temperature"].is_number() && obj["max_tokens"].is_u64(), || {
            format!("wrong field types in {body}")
        })?;
        let messages = obj["messages"].as_array().ok_or("messages is not an array")?;
        ensure(
            !messages.is_empty()
                && messages.iter().all(|m| {
                    m.as_object().is_some_and(|o| o.len() == 2)
                        && m["role"].as_str().is_some_and(|r| ["system", "user", "assistant"].contains(&r))
                        && m["content"].is_string()
                }),
            || format!("bad messages in {body}"),
        )?;
    }

    for reply in ["not json", r#"{"choices":[]}"#] {
        let bad = StubServer::start(move |_, _| (200, reply.to_string()));
        let request = builtin_rq1().request(vec![tradertalk::llm::ChatMessage::user("Decide.")]);
        let err = Gateway::new(bad.backend())
            .complete(&request, Default::default())
            .err()
            .ok_or("malformed reply was accepted")?;
        ensure(matches!(err, tradertalk::llm::LlmError::MalformedResponse(_)), || format!("{reply}: {err:?}"))?;
        ensure(bad.requests().len() == 1, || format!("{reply}: retried {} times", bad.requests().len() - 1))?;
    }
    Ok(format!("{} requests well-formed; malformed replies fail once without retry", seen.len()))
}
