use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::memory::{load_memory, save_memory, EpisodicMemory, MemoryError};

/// Memory files keyed by video id and transcript digest, plus a lock per
/// video so that only one writer touches a video's memory at a time.
/// Without a directory, memories live only in this process.
#[derive(Debug, Default)]
pub struct MemoryStore {
    dir: Option<PathBuf>,
    cache: Mutex<HashMap<(String, String), EpisodicMemory>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl MemoryStore {
    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// `<dir>/<video_id>.<first 16 hex digits of the digest>.json`
    pub fn path_for(&self, video_id: &str, digest: &str) -> Option<PathBuf> {
        let safe: String = video_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        let hex = digest.strip_prefix("sha256:").unwrap_or(digest);
        let short: String = hex.chars().take(16).collect();
        self.dir.as_ref().map(|d| d.join(format!("{safe}.{short}.json")))
    }

    /// Lock to hold while reading, updating and writing one video's memory.
    pub fn video_lock(&self, video_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(video_id.to_string()).or_default().clone()
    }

    pub fn get(&self, video_id: &str, digest: &str) -> Result<Option<EpisodicMemory>, MemoryError> {
        let key = (video_id.to_string(), digest.to_string());
        if let Some(m) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Some(m.clone()));
        }
        let Some(path) = self.path_for(video_id, digest) else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(MemoryError::violation(path.display().to_string(), e.to_string())),
        };
        let m = load_memory(&bytes)?;
        if m.source_digest != digest {
            return Err(MemoryError::DigestMismatch {
                memory: m.source_digest,
                transcript: digest.to_string(),
            });
        }
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, m.clone());
        Ok(Some(m))
    }

    /// Stores `memory` and, when backed by a directory, writes it atomically.
    pub fn put(&self, video_id: &str, memory: &EpisodicMemory) -> Result<Option<PathBuf>, MemoryError> {
        let path = self.path_for(video_id, &memory.source_digest);
        if let Some(path) = &path {
            write_atomic(path, &save_memory(memory))
                .map_err(|e| MemoryError::violation(path.display().to_string(), e.to_string()))?;
        }
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert((video_id.to_string(), memory.source_digest.clone()), memory.clone());
        Ok(path)
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::tests::episode;
    use crate::transcript::SourceKind;

    fn memory() -> EpisodicMemory {
        EpisodicMemory {
            version: 1,
            source_digest: "sha256:0123456789abcdef0123".into(),
            source_kind: SourceKind::Subtitle,
            episodes: vec![episode(0, [1, 1], [0.0, 1.0])],
        }
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = memory();
        let store = MemoryStore::on_disk(dir.path());
        let path = store.put("vid/1", &m).unwrap().unwrap();
        assert_eq!(path.file_name().unwrap(), "vid_1.0123456789abcdef.json");
        let fresh = MemoryStore::on_disk(dir.path());
        assert_eq!(fresh.get("vid/1", &m.source_digest).unwrap(), Some(m.clone()));
        assert_eq!(fresh.get("vid/1", "sha256:ffff").unwrap(), None);
    }

    #[test]
    fn in_memory_store() {
        let store = MemoryStore::in_memory();
        let m = memory();
        assert_eq!(store.put("v", &m).unwrap(), None);
        assert_eq!(store.get("v", &m.source_digest).unwrap(), Some(m));
        assert!(Arc::ptr_eq(&store.video_lock("v"), &store.video_lock("v")));
    }
}
