//! Episodic-memory pipeline for multiple-choice question answering over long
//! videos.
//!
//! A memory manager turns a time-aligned transcript (subtitles, or frame
//! captions when the video has no audio) into an [`memory::EpisodicMemory`]
//! of event-level episodes with narrative roles and causal links. Each query
//! then runs perception (locate query-relevant spans and a frame plan),
//! action (answer from the composed evidence) and reflection (append a note
//! to the episode the answer drew on).

pub mod backend;
pub mod harness;
pub mod memory;
pub mod perception;
pub mod reasoning;
pub mod text;
pub mod transcript;
pub mod warning;
