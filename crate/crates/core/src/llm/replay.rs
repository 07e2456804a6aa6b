use std::collections::BTreeMap;
use std::path::Path;

use super::{read_exchanges, Backend, BackendKind, CallContext, Completion, LlmError, LlmExchange, LlmRequest};

/// Serves responses from a recorded exchange log, in recorded order per run.
///
/// A request is accepted when its prompt fingerprint matches the recorded
/// request at the same `(run_index, call_index)`; anything else is a
/// [`LlmError::ReplayDivergence`] naming the log entry that was expected.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    log: Vec<LlmExchange>,
    by_run: BTreeMap<usize, Vec<usize>>,
}

impl ReplayBackend {
    pub fn new(log: Vec<LlmExchange>) -> Self {
        let mut by_run: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (position, e) in log.iter().enumerate() {
            by_run.entry(e.run_index).or_default().push(position);
        }
        for positions in by_run.values_mut() {
            positions.sort_by_key(|&p| log[p].call_index);
        }
        Self { log, by_run }
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(read_exchanges(path)?))
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &LlmRequest, ctx: CallContext) -> Result<Completion, LlmError> {
        let Some(positions) = self.by_run.get(&ctx.run_index) else {
            return Err(LlmError::ReplayDivergence { index: self.log.len() });
        };
        let Some(&position) = positions.get(ctx.call_index) else {
            let after = positions.last().map_or(self.log.len(), |&p| p + 1);
            return Err(LlmError::ReplayDivergence { index: after });
        };
        let recorded = &self.log[position];
        if recorded.request.fingerprint() != request.fingerprint() {
            return Err(LlmError::ReplayDivergence { index: position });
        }
        Ok(Completion::first_try(recorded.response_text.clone()))
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }
}
