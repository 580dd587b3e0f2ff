use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionEvidence {
    None,
    Uniform,
    QrSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEvidence {
    None,
    FullTranscript,
    QrTranscript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEvidence {
    None,
    Schematic,
    SchematicPlusNarrative,
}

impl VisionEvidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Uniform => "uniform",
            Self::QrSegment => "qr_segment",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Self::None,
            "uniform" => Self::Uniform,
            "qr_segment" | "qr" => Self::QrSegment,
            _ => return None,
        })
    }
}

impl TextEvidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::FullTranscript => "full_transcript",
            Self::QrTranscript => "qr_transcript",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Self::None,
            "full_transcript" | "full" => Self::FullTranscript,
            "qr_transcript" | "qr" => Self::QrTranscript,
            _ => return None,
        })
    }
}

impl MemoryEvidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Schematic => "schematic",
            Self::SchematicPlusNarrative => "schematic_plus_narrative",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Self::None,
            "schematic" => Self::Schematic,
            "schematic_plus_narrative" | "narrative" => Self::SchematicPlusNarrative,
            _ => return None,
        })
    }
}

/// Which evidence blocks the reasoner sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct EvidenceConfig {
    pub vision: VisionEvidence,
    pub text: TextEvidence,
    pub memory: MemoryEvidence,
}

#[derive(Deserialize)]
struct RawConfig {
    vision: VisionEvidence,
    text: TextEvidence,
    memory: MemoryEvidence,
}

impl TryFrom<RawConfig> for EvidenceConfig {
    type Error = ConfigError;

    fn try_from(r: RawConfig) -> Result<Self, ConfigError> {
        EvidenceConfig::new(r.vision, r.text, r.memory)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid evidence config: {0}")]
pub struct ConfigError(pub String);

const fn row(vision: VisionEvidence, text: TextEvidence, memory: MemoryEvidence) -> EvidenceConfig {
    EvidenceConfig { vision, text, memory }
}

/// The ten ablation rows, with their display names.
pub const ABLATION_ROWS: [(&str, EvidenceConfig); 10] = {
    use MemoryEvidence as M;
    use TextEvidence as T;
    use VisionEvidence as V;
    [
        ("Uniform Sampling (Baseline)", row(V::Uniform, T::None, M::None)),
        ("QR Video Segment", row(V::QrSegment, T::None, M::None)),
        ("Full Speech Transcript", row(V::None, T::FullTranscript, M::None)),
        ("QR Speech Transcript", row(V::None, T::QrTranscript, M::None)),
        ("Full Speech Transcript + Episodic Memory", row(V::None, T::FullTranscript, M::Schematic)),
        ("QR Speech Transcript + Episodic Memory", row(V::None, T::QrTranscript, M::Schematic)),
        ("QR Video Segment + QR Speech Transcript", row(V::QrSegment, T::QrTranscript, M::None)),
        ("QR Video Segment + Memory", row(V::QrSegment, T::None, M::Schematic)),
        (
            "QR Video Segment + QR Speech Transcript + Episodic Memory",
            row(V::QrSegment, T::QrTranscript, M::Schematic),
        ),
        (
            "QR Video Segment + QR Speech Transcript + Episodic Memory (w/ narrative structure)",
            row(V::QrSegment, T::QrTranscript, M::SchematicPlusNarrative),
        ),
    ]
};

impl EvidenceConfig {
    pub fn new(vision: VisionEvidence, text: TextEvidence, memory: MemoryEvidence) -> Result<Self, ConfigError> {
        if vision == VisionEvidence::None && text == TextEvidence::None && memory == MemoryEvidence::None {
            return Err(ConfigError("at least one of vision, text, memory must be enabled".into()));
        }
        Ok(Self { vision, text, memory })
    }

    /// The full configuration: query-related frames and transcript plus
    /// memory with narrative structure.
    pub fn full() -> Self {
        ABLATION_ROWS[9].1
    }

    pub fn needs_perception(&self) -> bool {
        self.vision == VisionEvidence::QrSegment || self.text == TextEvidence::QrTranscript
    }

    pub fn uses_frames(&self) -> bool {
        self.vision != VisionEvidence::None
    }

    /// Display name of the matching ablation row, else the `k=v` form.
    pub fn label(&self) -> String {
        ABLATION_ROWS
            .iter()
            .find(|(_, c)| c == self)
            .map_or_else(|| self.to_string(), |(name, _)| name.to_string())
    }

    /// Applies `key=value` overrides (keys: vision, text, memory) to `self`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, ConfigError> {
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("expected key=value, got {pair:?}")))?;
            let (k, v) = (k.trim(), v.trim().to_ascii_lowercase());
            let bad = || ConfigError(format!("unknown {k} value {v:?}"));
            match k {
                "vision" => self.vision = VisionEvidence::parse(&v).ok_or_else(bad)?,
                "text" => self.text = TextEvidence::parse(&v).ok_or_else(bad)?,
                "memory" => self.memory = MemoryEvidence::parse(&v).ok_or_else(bad)?,
                _ => return Err(ConfigError(format!("unknown key {k:?} (expected vision, text or memory)"))),
            }
        }
        Self::new(self.vision, self.text, self.memory)
    }
}

impl fmt::Display for EvidenceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vision={},text={},memory={}",
            self.vision.as_str(),
            self.text.as_str(),
            self.memory.as_str()
        )
    }
}

/// Parses `vision=..,text=..,memory=..`; omitted keys default to `none`.
impl FromStr for EvidenceConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let none = Self {
            vision: VisionEvidence::None,
            text: TextEvidence::None,
            memory: MemoryEvidence::None,
        };
        none.with_overrides(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distinct_and_valid() {
        for (i, (_, a)) in ABLATION_ROWS.iter().enumerate() {
            assert!(EvidenceConfig::new(a.vision, a.text, a.memory).is_ok());
            for (_, b) in &ABLATION_ROWS[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn parse_and_display() {
        for (_, c) in ABLATION_ROWS {
            assert_eq!(c.to_string().parse::<EvidenceConfig>().unwrap(), c);
        }
        let c: EvidenceConfig = "text=full".parse().unwrap();
        assert_eq!(c.label(), "Full Speech Transcript");
        assert!("".parse::<EvidenceConfig>().is_err());
        assert!("vision=everything".parse::<EvidenceConfig>().is_err());
        assert!("colour=red".parse::<EvidenceConfig>().is_err());
        let c = EvidenceConfig::full().with_overrides("vision=none").unwrap();
        assert_eq!(c.label(), "vision=none,text=qr_transcript,memory=schematic_plus_narrative");
    }

    #[test]
    fn serde_rejects_all_none() {
        let j = r#"{"vision":"none","text":"none","memory":"none"}"#;
        assert!(serde_json::from_str::<EvidenceConfig>(j).is_err());
        let c = EvidenceConfig::full();
        let back: EvidenceConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
