use std::fmt;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, Phase, ProviderError};

/// Longest single backoff sleep.
const MAX_BACKOFF_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Base URL (e.g. `https://api.openai.com/v1`) or the full
    /// `.../chat/completions` URL.
    pub endpoint_url: String,
    pub model_name: String,
    /// Model for the text phase; falls back to `model_name`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_model_name: Option<String>,
    pub api_key_env_var_name: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4.1".into(),
            text_model_name: None,
            api_key_env_var_name: "OPENAI_API_KEY".into(),
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!("timeout must be positive, got {}", self.timeout_s)));
        }
        if self.endpoint_url.is_empty() || self.model_name.is_empty() {
            return Err(ProviderError::InvalidRequest("endpoint and model name are required".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn model_for(&self, phase: Phase) -> &str {
        match phase {
            Phase::Vision => &self.model_name,
            Phase::Text => self.text_model_name.as_deref().unwrap_or(&self.model_name),
        }
    }
}

/// Exponential backoff schedule for `max_retries` retries:
/// `base, 2·base, 4·base, …`, capped.
pub fn backoff_delays(config: &ProviderConfig) -> Vec<Duration> {
    (0..config.max_retries)
        .map(|k| {
            let ms = config
                .backoff_base_ms
                .saturating_mul(1u64.checked_shl(k).unwrap_or(u64::MAX))
                .min(MAX_BACKOFF_MS);
            Duration::from_millis(ms)
        })
        .collect()
}

/// API key that never shows up in `Debug` output.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env(var: &str) -> Result<Self, ProviderError> {
        std::env::var(var)
            .ok()
            .filter(|k| !k.is_empty())
            .map(ApiKey)
            .ok_or_else(|| ProviderError::MissingApiKey(var.to_owned()))
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Client for OpenAI-compatible chat-completions endpoints.
#[derive(Debug)]
pub struct HttpProvider {
    config: ProviderConfig,
    key: ApiKey,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(ProviderError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, key: ApiKey) -> Result<Self, ProviderError> {
        config.validate()?;
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build();
        Ok(Self { agent: ureq::Agent::new_with_config(agent_config), config, key })
    }

    /// Reads the key from the environment variable named in the config.
    pub fn from_env(config: ProviderConfig) -> Result<Self, ProviderError> {
        let key = ApiKey::from_env(&config.api_key_env_var_name)?;
        Self::new(config, key)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let user_content = if request.images.is_empty() {
            Value::String(request.user_text.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.user_text})];
            let b64 = base64::engine::general_purpose::STANDARD;
            parts.extend(request.images.iter().map(|img| {
                json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(&img.png))}
                })
            }));
            Value::Array(parts)
        };
        json!({
            "model": self.config.model_for(request.phase),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": user_content},
            ],
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let result = self
            .agent
            .post(url)
            .header("Authorization", format!("Bearer {}", self.key.expose()))
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading response body: {e}")),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(ProviderError::Rejected { status, message: truncate(&text, 500) });
        }
        match extract_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_owned(),
    }
}

fn extract_content(body: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::MalformedResponse("no choices[0].message.content".into()))
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let url = self.config.completions_url();
        let body = self.request_body(request);
        let delays = backoff_delays(&self.config);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(message) => {
                    let Some(delay) = delays.get(attempts as usize - 1) else {
                        return Err(ProviderError::Unavailable { attempts, message });
                    };
                    tracing::warn!(attempt = attempts, %message, ?delay, "retrying chat completion");
                    std::thread::sleep(*delay);
                }
            }
        }
    }
}
