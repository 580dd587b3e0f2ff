use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BenchmarkItem, MemoryStore};
use crate::backend::{BackendError, ChatBackend, TemplateSet};
use crate::memory::{build_memory, reflect, EpisodicMemory, MemoryError, MemoryParams};
use crate::perception::{perceive, PerceptionError, PerceptionParams, PerceptionResult};
use crate::reasoning::{act, assemble_evidence, ActionResult, EvidenceConfig, FrameOptions, ReasoningError};
use crate::transcript::{load_transcript, Transcript, TranscriptError};
use crate::warning::Warning;

/// The manager builds memory, perceives and reflects; the reasoner answers.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub manager: &'a dyn ChatBackend,
    pub reasoner: &'a dyn ChatBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub memory: MemoryParams,
    pub perception: PerceptionParams,
    pub frames: FrameOptions,
    pub reflect: bool,
    pub build_on_demand: bool,
    #[serde(skip)]
    pub templates: TemplateSet,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            memory: MemoryParams::default(),
            perception: PerceptionParams::default(),
            frames: FrameOptions::default(),
            reflect: true,
            build_on_demand: true,
            templates: TemplateSet::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("transcript: {0}")]
    Transcript(#[from] TranscriptError),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("memory: no memory for video {video_id}; build it first or allow building on demand")]
    MemoryMissing { video_id: String },
    #[error("perception: {0}")]
    Perception(#[from] PerceptionError),
    #[error("action: {0}")]
    Action(#[from] ReasoningError),
    #[error("reflection: {0}")]
    Reflection(#[source] MemoryError),
    #[error("input: {0}")]
    Input(String),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Transcript(_) | Self::Input(_) => "input",
            Self::Memory(_) | Self::MemoryMissing { .. } => "memory",
            Self::Perception(_) => "perception",
            Self::Action(_) => "action",
            Self::Reflection(_) => "reflection",
        }
    }

    /// The failure came from a model backend rather than from the inputs.
    pub fn is_backend(&self) -> bool {
        self.backend_error().is_some()
    }

    fn backend_error(&self) -> Option<&BackendError> {
        match self {
            Self::Memory(MemoryError::Backend { source, .. }) | Self::Reflection(MemoryError::Backend { source, .. }) => {
                Some(source)
            }
            Self::Perception(PerceptionError::Backend(e)) | Self::Action(ReasoningError::Backend(e)) => Some(e),
            _ => None,
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, Self::Action(ReasoningError::UnparseableAnswer { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub action: ActionResult,
    pub perception: PerceptionResult,
    /// Memory version after this item (unchanged when reflection is off).
    pub memory_version: u32,
    /// Wall-clock reasoning time, absent for deterministic backends.
    pub latency_ms: Option<u64>,
    pub warnings: Vec<Warning>,
}

/// Deterministic reasoners never look at pixels, so they get URIs and no
/// frame files need to exist.
pub fn frame_options(frames: &FrameOptions, reasoner: &dyn ChatBackend) -> FrameOptions {
    FrameOptions {
        inline: frames.inline && !reasoner.profile().deterministic,
        ..frames.clone()
    }
}

/// Reads the item's transcript, preferring subtitles over captions.
pub fn load_item_transcript(item: &BenchmarkItem) -> Result<Transcript, PipelineError> {
    let path = item.source_path().ok_or_else(|| {
        PipelineError::Input(format!("item {} has no readable subtitle or caption file", item.question_id))
    })?;
    Ok(load_transcript(path)?.with_duration(item.duration_s)?)
}

/// Loads the stored memory for a transcript or builds and stores it.
pub fn ensure_memory(
    video_id: &str,
    transcript: &Transcript,
    manager: &dyn ChatBackend,
    store: &MemoryStore,
    opts: &PipelineOptions,
) -> Result<(EpisodicMemory, Vec<Warning>), PipelineError> {
    let digest = transcript.digest();
    if let Some(m) = store.get(video_id, &digest)? {
        m.check_source(transcript)?;
        return Ok((m, Vec::new()));
    }
    if !opts.build_on_demand {
        return Err(PipelineError::MemoryMissing {
            video_id: video_id.to_string(),
        });
    }
    let out = build_memory(transcript, manager, &opts.templates, &opts.memory)?;
    store.put(video_id, &out.memory)?;
    Ok((out.memory, out.warnings))
}

/// Memory → perception → evidence → action → reflection for one question.
pub fn run_pipeline(
    item: &BenchmarkItem,
    config: &EvidenceConfig,
    backends: Backends<'_>,
    store: &MemoryStore,
    opts: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let transcript = load_item_transcript(item)?;
    let lock = store.video_lock(&item.video_id);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
    let (memory, mut warnings) = ensure_memory(&item.video_id, &transcript, backends.manager, store, opts)?;

    let perception = perceive(
        &item.query,
        &transcript,
        &memory,
        backends.manager,
        &opts.templates,
        &opts.perception,
    )?;
    warnings.extend(perception.warnings.iter().cloned());

    let request = assemble_evidence(
        config,
        &item.query,
        &transcript,
        &memory,
        Some(&perception),
        &opts.templates,
        &frame_options(&opts.frames, backends.reasoner),
    )?;
    let started = Instant::now();
    let action = act(&item.query, &request, config, backends.reasoner)?;
    let latency_ms =
        (!backends.reasoner.profile().deterministic).then(|| started.elapsed().as_millis() as u64);

    let mut memory_version = memory.version;
    if opts.reflect {
        let updated = reflect(
            &item.query,
            &action.answer_id,
            &action.evidence,
            &memory,
            &perception.intervals(),
            backends.manager,
            &opts.templates,
            &opts.memory,
        )
        .map_err(PipelineError::Reflection)?;
        store.put(&item.video_id, &updated).map_err(PipelineError::Reflection)?;
        memory_version = updated.version;
    }
    Ok(PipelineOutput {
        action,
        perception,
        memory_version,
        latency_ms,
        warnings,
    })
}
