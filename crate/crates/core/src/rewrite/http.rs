use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{Backend, BackendError, BackendRequest, BackendResponse};

pub const DEFAULT_TOKEN_ENV: &str = "ROBUST_RANK_API_KEY";

/// Settings for an OpenAI-compatible chat-completions endpoint. The auth
/// token is read from the environment variable named by `token_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub token_env: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            timeout: Duration::from_secs(60),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
    tag: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let tag = format!("http:{}", config.model);
        Self { config, token, agent, tag }
    }
}

fn classify_status(status: u16, body: &str) -> BackendError {
    let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
    if status == 408 || status == 429 || status >= 500 {
        BackendError::Transient(msg)
    } else {
        BackendError::Fatal(msg)
    }
}

/// Pulls the assistant text out of a chat-completions response body.
pub fn extract_content(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => {
                BackendError::Transient(e.to_string())
            }
            other => BackendError::Fatal(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(classify_status(status, &text));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transient(format!("unreadable response body: {e}")))?;
        Ok(BackendResponse { text: extract_content(&value)?, backend_tag: self.tag.clone() })
    }

    fn tag(&self) -> &str {
        &self.tag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "1, 1"}}]});
        assert_eq!(extract_content(&v).unwrap(), "1, 1");
        assert!(extract_content(&json!({"choices": []})).is_err());
    }

    #[test]
    fn status_classes() {
        assert!(matches!(classify_status(503, ""), BackendError::Transient(_)));
        assert!(matches!(classify_status(429, ""), BackendError::Transient(_)));
        assert!(matches!(classify_status(401, ""), BackendError::Fatal(_)));
    }

    #[test]
    fn unreachable_endpoint_is_an_error() {
        let mut cfg = HttpConfig::new("http://127.0.0.1:9/v1/chat/completions", "m");
        cfg.timeout = Duration::from_millis(500);
        let b = HttpBackend::new(cfg);
        let r = b.complete(&BackendRequest { prompt: "hi".into(), temperature: 0.0, max_tokens: 8 });
        assert!(r.is_err());
    }
}
