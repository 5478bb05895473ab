use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, Phase, ProviderError};

/// One scripted reply. A plain string is returned as the model's text; an
/// object `{"error": "..."}` makes that call fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Response(String),
    Failure { error: String },
}

impl From<&str> for ScriptEntry {
    fn from(s: &str) -> Self {
        ScriptEntry::Response(s.to_owned())
    }
}

impl From<String> for ScriptEntry {
    fn from(s: String) -> Self {
        ScriptEntry::Response(s)
    }
}

/// Per-phase FIFO response lists, stored as
/// `{"vision": [...], "text": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub vision: Vec<ScriptEntry>,
    pub text: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn new<V, T>(vision: V, text: T) -> Self
    where
        V: IntoIterator,
        V::Item: Into<ScriptEntry>,
        T: IntoIterator,
        T::Item: Into<ScriptEntry>,
    {
        Self {
            vision: vision.into_iter().map(Into::into).collect(),
            text: text.into_iter().map(Into::into).collect(),
        }
    }

    /// Parses a script. Blank input is an empty script.
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| ProviderError::ScriptFormat {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

pub fn load_script(path: &Path) -> Result<MockScript, ProviderError> {
    MockScript::parse(&std::fs::read_to_string(path)?)
}

/// What the mock saw for one call. Image bytes are reduced to timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedRequest {
    pub phase: Phase,
    pub system_text: String,
    pub user_text: String,
    pub image_timestamps: Vec<f64>,
}

impl CapturedRequest {
    /// System and user text joined, as the model would read them.
    pub fn prompt(&self) -> String {
        format!("{}\n\n{}", self.system_text, self.user_text)
    }
}

#[derive(Debug, Default)]
struct MockState {
    vision: VecDeque<ScriptEntry>,
    text: VecDeque<ScriptEntry>,
    captured: Vec<CapturedRequest>,
}

/// Deterministic provider replaying a [`MockScript`].
#[derive(Debug, Default)]
pub struct MockProvider {
    state: Mutex<MockState>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            state: Mutex::new(MockState {
                vision: script.vision.into(),
                text: script.text.into(),
                captured: Vec::new(),
            }),
        }
    }

    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.lock().captured.clone()
    }

    pub fn captured_for(&self, phase: Phase) -> Vec<CapturedRequest> {
        self.lock().captured.iter().filter(|c| c.phase == phase).cloned().collect()
    }

    pub fn remaining(&self, phase: Phase) -> usize {
        let state = self.lock();
        match phase {
            Phase::Vision => state.vision.len(),
            Phase::Text => state.text.len(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let mut state = self.lock();
        state.captured.push(CapturedRequest {
            phase: request.phase,
            system_text: request.system_text.clone(),
            user_text: request.user_text.clone(),
            image_timestamps: request.images.iter().map(|i| i.timestamp_s).collect(),
        });
        let queue = match request.phase {
            Phase::Vision => &mut state.vision,
            Phase::Text => &mut state.text,
        };
        match queue.pop_front() {
            Some(ScriptEntry::Response(text)) => Ok(text),
            Some(ScriptEntry::Failure { error }) => Err(ProviderError::Scripted(error)),
            None => Err(ProviderError::ScriptExhausted { phase: request.phase }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_phase_and_capture() {
        let mock = MockProvider::new(MockScript::new(["{v1}", "{v2}"], ["{t1}"]));
        let v = ChatRequest::vision("sys".into(), "user".into(), vec![]);
        let t = ChatRequest::text("sys".into(), "user".into());
        assert_eq!(mock.complete(&v).unwrap(), "{v1}");
        assert_eq!(mock.complete(&t).unwrap(), "{t1}");
        assert_eq!(mock.complete(&v).unwrap(), "{v2}");
        assert_eq!(mock.captured().len(), 3);
        assert_eq!(mock.captured_for(Phase::Text).len(), 1);
    }

    #[test]
    fn exhausted_names_the_phase() {
        let mock = MockProvider::new(MockScript::default());
        let err = mock.complete(&ChatRequest::text("s".into(), "u".into())).unwrap_err();
        assert!(matches!(err, ProviderError::ScriptExhausted { phase: Phase::Text }));
        assert!(err.to_string().contains("text"));
    }

    #[test]
    fn scripted_failure() {
        let script = MockScript::parse(r#"{"vision": [{"error": "boom"}, "ok"]}"#).unwrap();
        let mock = MockProvider::new(script);
        let req = ChatRequest::vision("s".into(), "u".into(), vec![]);
        assert!(matches!(mock.complete(&req), Err(ProviderError::Scripted(m)) if m == "boom"));
        assert_eq!(mock.complete(&req).unwrap(), "ok");
    }

    #[test]
    fn load_script_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, r#"{"vision": ["a", "b"], "text": ["c"]}"#).unwrap();
        let s = load_script(&p).unwrap();
        assert_eq!((s.vision.len(), s.text.len()), (2, 1));

        std::fs::write(&p, "").unwrap();
        assert_eq!(load_script(&p).unwrap(), MockScript::default());

        std::fs::write(&p, "vision:\n  - a").unwrap();
        assert!(matches!(load_script(&p), Err(ProviderError::ScriptFormat { line: 1, .. })));

        std::fs::write(&p, "{\n  \"vision\": [1]\n}").unwrap();
        assert!(matches!(load_script(&p), Err(ProviderError::ScriptFormat { .. })));
    }

    #[test]
    fn identical_runs_identical_logs() {
        let run = || {
            let mock = MockProvider::new(MockScript::new(["x", "y"], ["z"]));
            let mut out = Vec::new();
            for _ in 0..3 {
                out.push(mock.complete(&ChatRequest::vision("s".into(), "u".into(), vec![])).ok());
            }
            out.push(mock.complete(&ChatRequest::text("s".into(), "u".into())).ok());
            (out, mock.captured())
        };
        assert_eq!(run(), run());
    }
}
