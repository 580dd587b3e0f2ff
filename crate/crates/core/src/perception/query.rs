use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::backend::OptionText;

pub type AnswerOption = OptionText;

/// A multiple-choice question. Labels run `A`, `B`, … in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    pub text: String,
    pub options: Vec<AnswerOption>,
}

#[derive(Deserialize)]
struct RawQuery {
    text: String,
    options: Vec<AnswerOption>,
}

impl TryFrom<RawQuery> for Query {
    type Error = PerceptionError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        Query::with_options(raw.text, raw.options)
    }
}

pub fn label_for(position: usize) -> Option<String> {
    (position < 26).then(|| char::from(b'A' + position as u8).to_string())
}

impl Query {
    /// Labels the options `A`, `B`, … in the order given.
    pub fn new<S: AsRef<str>>(text: impl Into<String>, options: &[S]) -> Result<Self, PerceptionError> {
        let options = options
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let label = label_for(i).ok_or_else(|| PerceptionError::InvalidQuery("more than 26 options".into()))?;
                Ok(AnswerOption {
                    label,
                    text: o.as_ref().trim().to_string(),
                })
            })
            .collect::<Result<Vec<_>, PerceptionError>>()?;
        Self::with_options(text, options)
    }

    /// Validates explicitly labelled options.
    pub fn with_options(text: impl Into<String>, options: Vec<AnswerOption>) -> Result<Self, PerceptionError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(PerceptionError::InvalidQuery("question text is empty".into()));
        }
        if options.len() < 2 {
            return Err(PerceptionError::InvalidQuery(format!(
                "need at least 2 options, got {}",
                options.len()
            )));
        }
        for (i, o) in options.iter().enumerate() {
            let expected = label_for(i).ok_or_else(|| PerceptionError::InvalidQuery("more than 26 options".into()))?;
            if o.label != expected {
                return Err(PerceptionError::InvalidQuery(format!(
                    "option {} is labelled {:?}; labels must run A, B, … without gaps",
                    i + 1,
                    o.label
                )));
            }
            if o.text.trim().is_empty() {
                return Err(PerceptionError::InvalidQuery(format!("option {} has no text", o.label)));
            }
        }
        Ok(Self { text, options })
    }

    pub fn option(&self, label: &str) -> Option<&AnswerOption> {
        let label = label.trim().trim_matches(|c| c == '(' || c == ')');
        self.options.iter().find(|o| o.label.eq_ignore_ascii_case(label))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.label.as_str())
    }

    /// `(A) text` per line.
    pub fn render_options(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("({}) {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
