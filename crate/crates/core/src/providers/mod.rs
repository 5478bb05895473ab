//! Chat-completion backends shared by both pipeline phases.
//!
//! Everything that talks to a model goes through [`ChatProvider`]. Two
//! implementations ship here: [`HttpProvider`] speaks the OpenAI-compatible
//! chat-completions wire format, and [`MockProvider`] replays a scripted list
//! of responses per phase while recording every request it receives.

mod http;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{backoff_delays, ApiKey, HttpProvider, ProviderConfig};
pub use mock::{load_script, CapturedRequest, MockProvider, MockScript, ScriptEntry};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Vision,
    Text,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Vision => "vision",
            Phase::Text => "text",
        })
    }
}

/// A PNG frame attached to a vision request.
#[derive(Clone, PartialEq)]
pub struct ImageAttachment {
    pub timestamp_s: f64,
    pub png: Vec<u8>,
}

impl std::fmt::Debug for ImageAttachment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageAttachment({}s, {} bytes)", self.timestamp_s, self.png.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub phase: Phase,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<ImageAttachment>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn vision(system_text: String, user_text: String, images: Vec<ImageAttachment>) -> Self {
        Self {
            phase: Phase::Vision,
            system_text,
            user_text,
            images,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn text(system_text: String, user_text: String) -> Self {
        Self {
            phase: Phase::Text,
            system_text,
            user_text,
            images: Vec::new(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.phase == Phase::Text && !self.images.is_empty() {
            return Err(ProviderError::InvalidRequest("text requests cannot carry images".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider rejected the request with HTTP {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("mock script exhausted for the {phase} phase")]
    ScriptExhausted { phase: Phase },
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("malformed script at line {line}, column {column}: {message}")]
    ScriptFormat { line: usize, column: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A chat-completion backend. Implementations must be shareable across the
/// segment workers of one analysis.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}
