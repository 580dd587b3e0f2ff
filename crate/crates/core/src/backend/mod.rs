//! Language-model backends shared by the memory manager and the reasoner.
//!
//! Every model call goes through [`ChatBackend::complete`], which checks the
//! request invariants and the backend's capabilities before handing the
//! request to the implementation. Two implementations ship here: an HTTP
//! chat-completion client and a deterministic reference backend.

mod http;
mod payload;
mod reference;
mod template;

use std::fmt::Write as _;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use payload::{LineTiming, OptionText, StagePayload};
pub use reference::{ReferenceBackend, REFERENCE_NAME, REFERENCE_VL_NAME};
pub(crate) use reference::segment as heuristic_segments;
pub use template::{render_template, PromptTemplate, TemplateError, TemplateId, TemplateSet, PLACEHOLDERS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by endpoint")]
    RateLimited { retry_after_s: Option<f64> },
    #[error("request rejected (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("backend {backend} cannot accept image parts")]
    CapabilityMismatch { backend: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl BackendError {
    /// Transport failures and rate limiting may succeed on a later attempt.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ImageSource {
    Uri { uri: String },
    Inline { mime: String, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub source: ImageSource,
    pub timestamp_s: f64,
}

impl ImageRef {
    /// URL form for the wire: inline bytes become a base64 data URI.
    pub fn url(&self) -> String {
        match &self.source {
            ImageSource::Uri { uri } => uri.clone(),
            ImageSource::Inline { mime, bytes } => {
                format!("data:{mime};base64,{}", BASE64.encode(bytes))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Part {
    Text { text: String },
    Image { image: ImageRef },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Self::Text { text: s.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user_parts: Vec<Part>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Structured copy of the stage input. Remote backends ignore it; the
    /// reference backend computes its reply from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<StagePayload>,
}

impl ChatRequest {
    pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

    /// Temperature 0 and the default output budget.
    pub fn new(system: impl Into<String>, user_parts: Vec<Part>) -> Self {
        Self {
            system: system.into(),
            user_parts,
            max_output_tokens: Self::DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            payload: None,
        }
    }

    pub fn with_payload(mut self, payload: StagePayload) -> Self {
        self.payload = Some(payload);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_parts.is_empty() {
            return Err(BackendError::InvalidRequest("no user parts".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn has_images(&self) -> bool {
        self.user_parts.iter().any(|p| matches!(p, Part::Image { .. }))
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.user_parts.iter().filter_map(|p| match p {
            Part::Image { image } => Some(image),
            Part::Text { .. } => None,
        })
    }

    /// Concatenated text parts, separated by blank lines.
    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Human-readable rendering used by dry runs. Images appear as
    /// `[image t=…s …]` lines in their position.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[system]\n{}\n", self.system);
        let _ = writeln!(out, "[user]");
        for part in &self.user_parts {
            match part {
                Part::Text { text } => {
                    let _ = writeln!(out, "{text}\n");
                }
                Part::Image { image } => {
                    let src = match &image.source {
                        ImageSource::Uri { uri } => uri.clone(),
                        ImageSource::Inline { mime, bytes } => format!("{mime}, {} bytes", bytes.len()),
                    };
                    let _ = writeln!(out, "[image t={:.3}s {src}]", image.timestamp_s);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    pub multimodal: bool,
    pub deterministic: bool,
}

pub trait ChatBackend: Send + Sync {
    fn profile(&self) -> &BackendProfile;

    /// Performs the call. Callers go through [`ChatBackend::complete`].
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        if request.has_images() && !self.profile().multimodal {
            return Err(BackendError::CapabilityMismatch {
                backend: self.profile().name.clone(),
            });
        }
        self.send(request)
    }
}

/// Pulls the first JSON object out of a model reply, tolerating code fences
/// and surrounding prose.
pub fn extract_json(text: &str) -> Option<serde_json::Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(trimmed) {
        if v.is_object() {
            return Some(v);
        }
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<serde_json::Value>(&trimmed[start..=end])
        .ok()
        .filter(|v| v.is_object())
}
