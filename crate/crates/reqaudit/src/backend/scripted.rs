//! Scripted backend: a queue of canned responses matched by prompt substring
//! or by call position. Exhaustion is an error — it signals a fixture bug,
//! never a silent fallback.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse};

/// Chooses which calls a script entry answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatcher {
    /// Matches any prompt containing this substring.
    Substring(String),
    /// Matches exactly the n-th call (0-based) on this backend instance.
    Position(usize),
}

impl ScriptMatcher {
    fn matches(&self, prompt: &str, call_index: usize) -> bool {
        match self {
            ScriptMatcher::Substring(s) => prompt.contains(s.as_str()),
            ScriptMatcher::Position(p) => *p == call_index,
        }
    }
}

/// One canned response with its matcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub matcher: ScriptMatcher,
    pub response: String,
}

struct ScriptState {
    entries: Vec<(ScriptEntry, bool)>,
    calls: usize,
}

/// Fixture-driven backend. Each entry is consumed at most once; each call
/// takes the first unconsumed entry whose matcher matches.
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            state: Mutex::new(ScriptState {
                entries: entries.into_iter().map(|e| (e, false)).collect(),
                calls: 0,
            }),
        }
    }

    /// Loads a JSONL fixture file, one `ScriptEntry` per line.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                BackendError::Protocol(format!(
                    "bad script entry at {}:{}: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    /// Number of entries not yet consumed (fixture hygiene checks).
    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("scripted backend poisoned");
        state.entries.iter().filter(|(_, used)| !used).count()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut state = self.state.lock().expect("scripted backend poisoned");
        let call_index = state.calls;
        state.calls += 1;
        for (entry, consumed) in state.entries.iter_mut() {
            if !*consumed && entry.matcher.matches(&request.prompt, call_index) {
                *consumed = true;
                return Ok(BackendResponse::complete(entry.response.clone()));
            }
        }
        Err(BackendError::ScriptExhausted { call_index })
    }

    /// Queue consumption is order-dependent, so scripted runs are sequential.
    fn parallelism(&self) -> usize {
        1
    }
}
