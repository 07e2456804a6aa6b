//! Helpers shared by the integration tests: a local chat-completion stub and
//! the scripted corpora behind the pipeline-math checks.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tradertalk::llm::{LiveBackend, LiveConfig, RetryPolicy, ScriptFile, ScriptedReply};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

type Handler = dyn Fn(&Value, usize) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server speaking just enough of the protocol for the
/// live backend. The handler sees the parsed body and a global request
/// counter and returns a status and response body.
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&Value, usize) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = Arc::new(AtomicUsize::new(0));
        let recorded = Arc::clone(&requests);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (handler, recorded, counter) = (Arc::clone(&handler), Arc::clone(&recorded), Arc::clone(&counter));
                std::thread::spawn(move || serve(stream, &*handler, &recorded, &counter));
            }
        });
        Self { base_url, requests }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }

    /// Live backend pointed at this stub with millisecond backoff.
    pub fn backend(&self) -> LiveBackend {
        let mut config = LiveConfig::new(&self.base_url, "test-key");
        config.retry = RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(1) };
        config.timeout = Duration::from_secs(10);
        LiveBackend::new(config)
    }
}

fn serve(stream: TcpStream, handler: &Handler, recorded: &Mutex<Vec<Recorded>>, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let length: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();
    let value: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
    let n = counter.fetch_add(1, Ordering::SeqCst);
    recorded.lock().unwrap().push(Recorded { method, path, headers, body });
    let (status, reply) = handler(&value, n);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.flush();
}

/// Wraps assistant text in a chat-completion response body.
pub fn completion_body(text: &str) -> String {
    json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

/// A deterministic stand-in for the model: answers from the speaker's name
/// and how far the conversation has got, with a variant picked by `n`.
pub fn fake_model(body: &Value, n: usize) -> String {
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let all: String = messages.iter().filter_map(|m| m["content"].as_str()).collect::<Vec<_>>().join("\n");
    if all.contains("Has this negotiation concluded?") {
        return "no".into();
    }
    let speaker = if all.contains("Your name is David.") { "David" } else { "Josephine" };
    let turns = all
        .split("Conversation so far:\n")
        .nth(1)
        .map_or(0, |history| history.split("\nBefore answering").next().unwrap_or("").lines().count());
    if !all.contains("Conversation so far:") && !all.contains("You speak first.") {
        // single-shot decision
        return ["Decision: No trade.", "Decision: Flatten your trading book.", "Decision: Buy bonds."][n % 3].into();
    }
    match (speaker, turns, n % 2) {
        ("Josephine", 0, _) => "Good morning David. I hold 10 million gilts and would like to sell them at mid.".into(),
        ("David", _, 0) => "I hold negative 10 million. Agreed, I buy 10 million from you at mid.".into(),
        ("David", _, _) => "Let me check with my desk first.".into(),
        _ => "Are you still there?".into(),
    }
}

pub fn write_script(path: &Path, runs: Vec<Vec<String>>) {
    let runs = runs.into_iter().map(|r| r.into_iter().map(ScriptedReply::Text).collect()).collect();
    ScriptFile::from_runs(runs).save(path).unwrap();
}

/// RQ1: every run has both agents answering the same option; 180 no trade,
/// 71 flatten, 30 buy, 19 sell.
pub fn rq1_runs() -> Vec<Vec<String>> {
    let mut runs = Vec::new();
    for (text, count) in [
        ("Summary: I was contacted about trading. I hold 0 bonds. Decision: No trade.", 180),
        ("I hold 0 bonds. Decision: Flatten your trading book.", 71),
        ("Decision: Buy bonds.", 30),
        ("Decision: Sell bonds.", 19),
    ] {
        for _ in 0..count {
            runs.push(vec![text.to_string(), text.to_string()]);
        }
    }
    // Interleave so the counts are not in contiguous blocks.
    let n = runs.len();
    (0..n).map(|i| runs[(i * 7) % n].clone()).collect()
}

/// RQ2 conversations with 174 runs where both intend to trade, 294 where at
/// least one does and 17 executed trades, out of 300.
pub fn rq2_runs() -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    let mut runs = Vec::new();
    // 17 trades; the first 7 state both holdings correctly
    for i in 0..17 {
        runs.push(if i < 7 {
            s(&[
                "I hold 10 million gilts. I sell you 10 million at mid.",
                "I hold negative 10 million. Agreed, I buy 10 million from you at mid.",
            ])
        } else {
            s(&["I sell you 10 million at mid.", "Agreed, I buy 10 million from you at mid."])
        });
    }
    // 157 both intend, nobody confirms
    for _ in 0..157 {
        runs.push(s(&["I want to sell 10 million gilts at mid.", "I would like to buy, let me check with my desk."]));
    }
    // 2 where only David intends
    for _ in 0..2 {
        runs.push(s(&["Hello David.", "I want to buy 10 million.", "Sorry, I will not be trading today."]));
    }
    // 67 where only Josephine intends and David declines
    for _ in 0..67 {
        runs.push(s(&["I need to sell 10 million gilts today.", "I decline to trade today."]));
    }
    // 51 where only Josephine intends and David is unclear
    for _ in 0..51 {
        runs.push(s(&["I want to sell 10 million.", "The market is quiet.", "Then there is no trade today."]));
    }
    // 6 where neither intends: small talk until the turn cap
    for _ in 0..6 {
        runs.push(
            (0..10)
                .map(|k| if k % 2 == 0 { "Good morning.".to_string() } else { "Lovely weather.".to_string() })
                .collect(),
        );
    }
    let n = runs.len();
    (0..n).map(|i| runs[(i * 7) % n].clone()).collect()
}

pub mod checks;
pub mod invariants;
