use std::collections::VecDeque;
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    /// Raw model output.
    pub text: String,
    pub backend_tag: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, 5xx, rate limits.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Not worth retrying: bad credentials, malformed request, script ran dry.
    #[error("backend failure: {0}")]
    Fatal(String),
}

/// A text-completion service.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
    fn tag(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first for one logical step.
    pub retries: u32,
    /// Sleep before retry `i` (0-based) is `backoff · 2^i`.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, backoff: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        Self { retries, backoff: Duration::ZERO }
    }

    pub(crate) fn pause(&self, retry: u32) {
        if !self.backoff.is_zero() {
            std::thread::sleep(self.backoff.saturating_mul(1 << retry.min(16)));
        }
    }
}

/// Replays canned responses in order and records every prompt it receives.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, BackendError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results(responses: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self { script: Mutex::new(responses.into_iter().collect()), prompts: Mutex::default() }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        let next = self.script.lock().unwrap().pop_front();
        match next {
            Some(Ok(text)) => Ok(BackendResponse { text, backend_tag: self.tag().to_string() }),
            Some(Err(e)) => Err(e),
            None => Err(BackendError::Fatal("script exhausted".into())),
        }
    }

    fn tag(&self) -> &str {
        "scripted"
    }
}

/// Offline stand-in for an LLM. Recognizes each prompt by its fixed wording
/// and answers deterministically from a hash of the prompt's variable parts,
/// so runs are reproducible and the check loop sees some failures.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub seed: u64,
}

static SEARCH_QUERY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)The search query is (.*)\. Please analyze").unwrap());
static ORIGINAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Original query: (.*)$").unwrap());
static INTENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Intent: (.*)$").unwrap());
static AGENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Assuming you are (an? [a-z ]+?),").unwrap());
static REPHRASED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)The (?:rephrased|rewritten) query is: (.*?)\. (?:Evaluate|Rate)").unwrap()
});

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    fn capture<'a>(re: &Regex, text: &'a str) -> Option<&'a str> {
        re.captures(text).and_then(|c| c.get(1)).map(|m| m.as_str().trim())
    }

    fn rewrite(&self, prompt: &str) -> String {
        let agent = Self::capture(&AGENT, prompt).unwrap_or("someone");
        let base = Self::capture(&ORIGINAL, prompt)
            .or_else(|| Self::capture(&INTENT, prompt).map(|i| i.trim_start_matches("INTENT:").trim()))
            .unwrap_or("");
        let variant = self.hash(&[prompt]) % 3;
        let words: Vec<&str> = base.split_whitespace().collect();
        match agent {
            "a student" => {
                let keys: Vec<&str> = words.iter().copied().filter(|w| w.chars().count() > 3).collect();
                let keys = if keys.is_empty() { words.clone() } else { keys };
                match variant {
                    0 => keys.join(" "),
                    1 => format!("{} quick guide", keys.join(" ")),
                    _ => format!("{} tutorial", keys.join(" ")),
                }
            }
            "an elderly person" => match variant {
                0 => format!("could you please tell me {base}"),
                1 => format!("I would like to know, {base}, in simple words"),
                _ => format!("please explain slowly: {base}"),
            },
            "a woman" => match variant {
                0 => format!("{base} advice for women"),
                1 => format!("as a woman, {base}"),
                _ => format!("{base}, tips from other women"),
            },
            "a man" => match variant {
                0 => format!("{base} for men"),
                1 => format!("{base} quick answer"),
                _ => format!("how do guys handle {base}"),
            },
            _ => base.to_string(),
        }
    }

    fn answer(&self, prompt: &str) -> String {
        if let Some(q) = Self::capture(&SEARCH_QUERY, prompt) {
            return format!("INTENT: {q}");
        }
        if prompt.contains("Assign judgment scores") {
            let candidate = Self::capture(&REPHRASED, prompt).unwrap_or("");
            return match self.hash(&["check", candidate]) % 8 {
                0 => "Scores: -1, 1".into(),
                1 => "Scores: 1, -1".into(),
                2 => "Scores: -1, -1".into(),
                3 => "Scores: 0, 1".into(),
                _ => "Scores: 1, 1".into(),
            };
        }
        if prompt.contains("on a 0 to 5 scale") {
            let candidate = Self::capture(&REPHRASED, prompt).unwrap_or("");
            let h = self.hash(&["judge", candidate]);
            return format!("semantic: {}, persona: {}", 2 + h % 4, 1 + (h >> 8) % 5);
        }
        self.rewrite(prompt)
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Ok(BackendResponse { text: self.answer(&request.prompt), backend_tag: self.tag().to_string() })
    }

    fn tag(&self) -> &str {
        "mock"
    }
}
