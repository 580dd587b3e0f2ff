//! Chat-completion client over HTTP (`POST {model, messages, max_tokens,
//! temperature}`), with bounded concurrency and exponential backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendProfile, ChatBackend, ChatRequest, ChatResponse, Part};

pub const API_KEY_ENV: &str = "GCAGENT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: f64,
    /// Retries after the first attempt, for retriable failures only.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_in_flight: usize,
    pub multimodal: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            name: "http".into(),
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            max_in_flight: 4,
            multimodal: false,
        }
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        Self {
            name: model.clone(),
            endpoint: endpoint.into(),
            model,
            ..Self::default()
        }
    }

    /// Fills `api_key` from the environment when it is not already set.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }

    fn backoff(&self, attempt: u32, retry_after_s: Option<f64>) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.backoff_max_ms);
        let hinted = retry_after_s.map_or(0, |s| (s * 1000.0) as u64).min(self.backoff_max_ms);
        Duration::from_millis(exp.max(hinted))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    profile: BackendProfile,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::InvalidRequest("endpoint URL is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            profile: BackendProfile {
                name: config.name.clone(),
                multimodal: config.multimodal,
                deterministic: false,
            },
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight.max(1),
            },
            client,
            config,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Request body in chat-completion wire format.
    pub fn wire_body(&self, request: &ChatRequest) -> Value {
        let content = if request.has_images() {
            Value::Array(
                request
                    .user_parts
                    .iter()
                    .map(|p| match p {
                        Part::Text { text } => json!({ "type": "text", "text": text }),
                        Part::Image { image } => {
                            json!({ "type": "image_url", "image_url": { "url": image.url() } })
                        }
                    })
                    .collect(),
            )
        } else {
            Value::String(request.user_text())
        };
        json!({
            "model": self.config.model,
            "messages": [
                { "role": "system", "content": request.system },
                { "role": "user", "content": content },
            ],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, BackendError> {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after_s = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok());
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_wire_response(&text),
            429 => Err(BackendError::RateLimited { retry_after_s }),
            408 | 500..=599 => Err(BackendError::Transport(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(BackendError::Rejected {
                status,
                message: snippet(&text),
            }),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.wire_body(request);
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retriable() && attempt < self.config.max_retries => {
                    let retry_after = match &e {
                        BackendError::RateLimited { retry_after_s } => *retry_after_s,
                        _ => None,
                    };
                    let wait = self.config.backoff(attempt, retry_after);
                    log::warn!("{}: {e}; retrying in {wait:?}", self.profile.name);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Reads `choices[0].message.content` and the optional `usage` block.
pub fn parse_wire_response(body: &str) -> Result<ChatResponse, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(BackendError::MalformedResponse(
                "missing choices[0].message.content".into(),
            ))
        }
    };
    Ok(ChatResponse {
        text,
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    })
}

fn snippet(s: &str) -> String {
    s.chars().take(300).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_usage_and_content() {
        let r = parse_wire_response(
            r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!((r.text.as_str(), r.prompt_tokens, r.completion_tokens), ("hi", 7, 1));
        let r = parse_wire_response(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#).unwrap();
        assert_eq!(r.text, "ab");
        assert!(matches!(
            parse_wire_response(r#"{"choices":[]}"#),
            Err(BackendError::MalformedResponse(_))
        ));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let c = HttpConfig {
            backoff_base_ms: 100,
            backoff_max_ms: 1000,
            ..HttpConfig::default()
        };
        assert_eq!(c.backoff(0, None), Duration::from_millis(100));
        assert_eq!(c.backoff(2, None), Duration::from_millis(400));
        assert_eq!(c.backoff(8, None), Duration::from_millis(1000));
        assert_eq!(c.backoff(0, Some(0.5)), Duration::from_millis(500));
    }

    #[test]
    fn empty_endpoint_rejected() {
        assert!(HttpBackend::new(HttpConfig::default()).is_err());
    }
}
