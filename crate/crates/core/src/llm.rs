//! Minimal blocking client for chat-completions style HTTP endpoints.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("API key variable `{0}` is not set")]
    MissingKey(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub temperature: f64,
    /// Directory for request / response logs; no logging when unset.
    pub log_dir: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "EVOSKILL_API_KEY".into(),
            max_concurrency: 4,
            max_retries: 3,
            backoff_ms: 250,
            timeout_secs: 120,
            temperature: 0.0,
            log_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub total_tokens: u64,
}

/// Counting semaphore bounding outstanding requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmClient {
    config: LlmConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    slots: Slots,
    log_counter: AtomicU64,
}

impl LlmClient {
    /// Build a client, reading the key from the configured variable.
    pub fn from_env(config: LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingKey(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LlmConfig, api_key: String) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let slots = Slots { free: Mutex::new(config.max_concurrency.max(1)), cv: Condvar::new() };
        Ok(LlmClient { config, api_key, http, slots, log_counter: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Send one user message and return the first choice's content.
    /// Transport failures and 429 / 5xx responses are retried with
    /// exponential backoff; other statuses fail immediately.
    pub fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();

        let _slot = self.slots.acquire();
        let mut attempt = 0;
        loop {
            let result = self.send_once(&url, &body);
            let retryable = match &result {
                Err(LlmError::Transport(_)) => true,
                Err(LlmError::Status { status, .. }) => *status == 429 || *status >= 500,
                _ => false,
            };
            if !retryable || attempt >= self.config.max_retries {
                return result;
            }
            std::thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt));
            attempt += 1;
        }
    }

    fn send_once(&self, url: &str, body: &str) -> Result<Completion, LlmError> {
        let response = self
            .http
            .post(url)
            .header("content-type", "application/json")
            .bearer_auth(&self.api_key)
            .body(body.to_string())
            .send()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        self.log_exchange(url, body, status, &text);
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { status, body: text });
        }
        parse_completion(&text)
    }

    fn log_exchange(&self, url: &str, request: &str, status: u16, response: &str) {
        let Some(dir) = &self.config.log_dir else { return };
        let n = self.log_counter.fetch_add(1, Ordering::SeqCst);
        let entry = json!({
            "url": url,
            "authorization": "Bearer [REDACTED]",
            "request": redact(request, &self.api_key),
            "status": status,
            "response": redact(response, &self.api_key),
        });
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join(format!("llm-{n:05}.json")), entry.to_string());
        }
    }
}

fn redact(text: &str, key: &str) -> String {
    if key.is_empty() {
        text.to_string()
    } else {
        text.replace(key, "[REDACTED]")
    }
}

pub fn parse_completion(text: &str) -> Result<Completion, LlmError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
    let total_tokens = v.pointer("/usage/total_tokens").and_then(|t| t.as_u64()).unwrap_or(0);
    Ok(Completion { text: content.to_string(), total_tokens })
}

/// Contents of the first fenced code block (```json preferred but any
/// language tag is accepted).
pub fn first_fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_is_extracted() {
        let t = "Plan below.\n```json\n{\"a\": 1}\n```\nand another\n```\n{}\n```";
        assert_eq!(first_fenced_block(t), Some("{\"a\": 1}"));
        assert_eq!(first_fenced_block("no fences"), None);
    }

    #[test]
    fn completion_body_is_parsed() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"total_tokens":42}}"#;
        assert_eq!(parse_completion(body).unwrap(), Completion { text: "hi".into(), total_tokens: 42 });
        assert!(matches!(parse_completion("{}"), Err(LlmError::BadResponse(_))));
    }

    #[test]
    fn key_is_redacted() {
        assert_eq!(redact("token sk-123 here", "sk-123"), "token [REDACTED] here");
    }
}
