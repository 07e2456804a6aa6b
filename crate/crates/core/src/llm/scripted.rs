use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, CallContext, Completion, Fingerprint, LlmError, LlmRequest};

/// Failure a script can inject in place of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transport,
    RateLimited,
    Malformed,
}

/// One scripted answer: either text or an injected failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Failure { error: ScriptedFailure },
}

impl ScriptedReply {
    fn resolve(&self) -> Result<Completion, LlmError> {
        match self {
            ScriptedReply::Text(text) => Ok(Completion::first_try(text.clone())),
            ScriptedReply::Failure { error } => Err(match error {
                ScriptedFailure::Transport => LlmError::Transport {
                    attempts: 1,
                    message: "scripted transport failure".into(),
                },
                ScriptedFailure::RateLimited => LlmError::RateLimited { attempts: 1 },
                ScriptedFailure::Malformed => {
                    LlmError::MalformedResponse("scripted malformed response".into())
                }
            }),
        }
    }
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::Text(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(ScriptedReply),
    Many(Vec<ScriptedReply>),
}

/// On-disk script (JSON).
///
/// ```json
/// {
///   "default": "No trade",
///   "responses": { "<fingerprint>": "text" | ["a", "b"] | {"error": "transport"} },
///   "runs": [["run 0, call 0", "run 0, call 1"], ["run 1, call 0"]]
/// }
/// ```
///
/// Lookup order for a call: `runs[run_index][call_index]`, then the
/// fingerprint map, then `default`. When a fingerprint maps to several
/// texts the seed picks one per `(run_index, call_index)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    responses: HashMap<String, OneOrMany>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<Vec<ScriptedReply>>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LlmError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("script {}: {e}", path.display())))
    }

    /// A script that answers each run from its own reply sequence.
    pub fn from_runs(runs: Vec<Vec<ScriptedReply>>) -> Self {
        Self { runs, ..Self::default() }
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(self).expect("script serializes");
        std::fs::write(path, text).map_err(|source| LlmError::Io { path: path.display().to_string(), source })
    }

    pub fn insert(&mut self, fingerprint: Fingerprint, reply: ScriptedReply) {
        self.responses.insert(fingerprint.0, OneOrMany::One(reply));
    }

    pub fn insert_choices(&mut self, fingerprint: Fingerprint, replies: Vec<ScriptedReply>) {
        self.responses.insert(fingerprint.0, OneOrMany::Many(replies));
    }
}

/// Deterministic test double keyed on prompt fingerprints.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: HashMap<Fingerprint, Vec<ScriptedReply>>,
    runs: Vec<Vec<ScriptedReply>>,
    default: Option<String>,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(script: HashMap<Fingerprint, String>, default: Option<String>) -> Self {
        Self {
            script: script
                .into_iter()
                .map(|(k, v)| (k, vec![ScriptedReply::Text(v)]))
                .collect(),
            runs: Vec::new(),
            default,
            seed: 0,
        }
    }

    pub fn with_default(default: impl Into<String>) -> Self {
        Self::new(HashMap::new(), Some(default.into()))
    }

    pub fn from_file(file: ScriptFile, seed: u64) -> Self {
        let script = file
            .responses
            .into_iter()
            .map(|(k, v)| {
                let replies = match v {
                    OneOrMany::One(r) => vec![r],
                    OneOrMany::Many(rs) => rs,
                };
                (Fingerprint(k), replies)
            })
            .collect();
        Self { script, runs: file.runs, default: file.default, seed }
    }

    pub fn with_runs(mut self, runs: Vec<Vec<ScriptedReply>>) -> Self {
        self.runs = runs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn pick<'a>(&self, choices: &'a [ScriptedReply], ctx: CallContext) -> Option<&'a ScriptedReply> {
        match choices.len() {
            0 => None,
            1 => choices.first(),
            n => {
                let stream = ((ctx.run_index as u64) << 32) ^ ctx.call_index as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(stream);
                choices.get(rng.random_range(0..n))
            }
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest, ctx: CallContext) -> Result<Completion, LlmError> {
        if let Some(reply) = self.runs.get(ctx.run_index).and_then(|run| run.get(ctx.call_index)) {
            return reply.resolve();
        }
        let fingerprint = request.fingerprint();
        if let Some(reply) = self.script.get(&fingerprint).and_then(|c| self.pick(c, ctx)) {
            return reply.resolve();
        }
        match &self.default {
            Some(text) => Ok(Completion::first_try(text.clone())),
            None => Err(LlmError::MalformedResponse(format!(
                "no scripted response for prompt {fingerprint}"
            ))),
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }
}
