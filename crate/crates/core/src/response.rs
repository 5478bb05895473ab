//! Reading structured JSON out of free-form model output.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::providers::{ChatProvider, ChatRequest, ProviderError};

/// Appended to the user message when a response has to be re-requested.
pub const REASK_SUFFIX: &str = "Respond with JSON only.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error("no JSON object found in model response")]
    NoJson { raw: String },
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
}

impl ResponseError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        ResponseError::Schema { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum ModelCallError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{source} (after one re-ask)")]
    Response {
        #[source]
        source: ResponseError,
    },
}

/// Returns the first complete JSON object embedded in `raw`.
///
/// Handles bare JSON, triple-backtick fences (with or without a language
/// tag) and objects surrounded by prose. Candidates are tried at every `{`
/// in order, so a stray brace in leading prose does not hide a later object.
pub fn first_object(raw: &str) -> Option<Map<String, Value>> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

pub(crate) fn require_object(raw: &str) -> Result<Map<String, Value>, ResponseError> {
    first_object(raw).ok_or_else(|| ResponseError::NoJson { raw: raw.to_owned() })
}

pub(crate) fn require_bool(obj: &Map<String, Value>, field: &str) -> Result<bool, ResponseError> {
    match obj.get(field) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(other) => Err(ResponseError::schema(field, format!("expected a boolean, got {}", kind(other)))),
        None => Err(ResponseError::schema(field, "missing")),
    }
}

pub(crate) fn require_string_list(obj: &Map<String, Value>, field: &str) -> Result<Vec<String>, ResponseError> {
    match obj.get(field) {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) => Ok(s.clone()),
                other => Err(ResponseError::schema(
                    format!("{field}[{i}]"),
                    format!("expected a string, got {}", kind(other)),
                )),
            })
            .collect(),
        Some(other) => Err(ResponseError::schema(field, format!("expected a list of strings, got {}", kind(other)))),
        None => Err(ResponseError::schema(field, "missing")),
    }
}

/// `Ok(None)` when absent or null.
pub(crate) fn optional_string(obj: &Map<String, Value>, field: &str) -> Result<Option<String>, ResponseError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(ResponseError::schema(field, format!("expected a string, got {}", kind(other)))),
    }
}

pub(crate) fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Sends `request` and parses the reply. A reply that fails to parse is
/// re-requested exactly once with [`REASK_SUFFIX`] appended to the user
/// message; a second failure is returned.
pub fn complete_parsed<T>(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    parse: impl Fn(&str) -> Result<T, ResponseError>,
) -> Result<T, ModelCallError> {
    let raw = provider.complete(request)?;
    match parse(&raw) {
        Ok(v) => Ok(v),
        Err(first) => {
            tracing::warn!(error = %first, "unparseable model response, re-asking once");
            let mut retry = request.clone();
            retry.user_text = format!("{}\n\n{REASK_SUFFIX}", request.user_text);
            let raw = provider.complete(&retry)?;
            parse(&raw).map_err(|source| ModelCallError::Response { source })
        }
    }
}
