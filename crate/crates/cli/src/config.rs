//! Settings resolution. Precedence: flags > config file > env > defaults.

use std::path::{Path, PathBuf};

use epimem_core::backend::{HttpConfig, TemplateSet};
use epimem_core::harness::PipelineOptions;
use epimem_core::memory::MemoryParams;
use epimem_core::perception::PerceptionParams;
use epimem_core::reasoning::{EvidenceConfig, FrameOptions};
use serde::Deserialize;

use crate::{Failure, GlobalArgs};

pub const ENV_REFERENCE: &str = "EPIMEM_REFERENCE";
pub const ENV_EVIDENCE: &str = "EPIMEM_EVIDENCE";
pub const ENV_MEMORY_DIR: &str = "EPIMEM_MEMORY_DIR";
pub const ENV_MANAGER_ENDPOINT: &str = "EPIMEM_MANAGER_ENDPOINT";
pub const ENV_MANAGER_MODEL: &str = "EPIMEM_MANAGER_MODEL";
pub const ENV_REASONER_ENDPOINT: &str = "EPIMEM_REASONER_ENDPOINT";
pub const ENV_REASONER_MODEL: &str = "EPIMEM_REASONER_MODEL";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub reference: Option<bool>,
    pub evidence: Option<String>,
    pub manager: Option<HttpConfig>,
    pub reasoner: Option<HttpConfig>,
    pub memory: Option<MemoryParams>,
    pub perception: Option<PerceptionParams>,
    pub frames: Option<FrameOptions>,
    pub templates_dir: Option<PathBuf>,
    pub memory_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }

    fn from_env(get: &dyn Fn(&str) -> Option<String>) -> Result<Self, Failure> {
        let role = |endpoint: &str, model: &str| {
            get(endpoint).map(|e| HttpConfig::new(e, get(model).unwrap_or_default()))
        };
        let reference = match get(ENV_REFERENCE).as_deref() {
            None => None,
            Some("1" | "true" | "yes") => Some(true),
            Some("0" | "false" | "no" | "") => Some(false),
            Some(v) => return Err(Failure::usage(format!("{ENV_REFERENCE}={v:?} is not a boolean"))),
        };
        Ok(Self {
            reference,
            evidence: get(ENV_EVIDENCE),
            manager: role(ENV_MANAGER_ENDPOINT, ENV_MANAGER_MODEL),
            reasoner: role(ENV_REASONER_ENDPOINT, ENV_REASONER_MODEL),
            memory_dir: get(ENV_MEMORY_DIR).map(PathBuf::from),
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub reference: bool,
    pub manager: Option<HttpConfig>,
    pub reasoner: Option<HttpConfig>,
    pub pipeline: PipelineOptions,
    pub evidence: EvidenceConfig,
    pub memory_dir: Option<PathBuf>,
    pub workers: usize,
}

fn pick<T>(flag: Option<T>, file: Option<T>, env: Option<T>) -> Option<T> {
    flag.or(file).or(env)
}

/// A role's endpoint from the file, filling an empty endpoint or model from env.
fn role(file: Option<HttpConfig>, env: Option<HttpConfig>) -> Option<HttpConfig> {
    match (file, env) {
        (Some(mut f), Some(e)) => {
            if f.endpoint.is_empty() {
                f.endpoint = e.endpoint;
            }
            if f.model.is_empty() {
                f.model = e.model;
            }
            Some(f)
        }
        (f, e) => f.or(e),
    }
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, Failure> {
        Self::resolve_with_env(args, &|k| std::env::var(k).ok())
    }

    pub fn resolve_with_env(args: &GlobalArgs, get: &dyn Fn(&str) -> Option<String>) -> Result<Self, Failure> {
        let env = FileConfig::from_env(get)?;
        let file = match &args.config_file() {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let reference = args.reference || pick(None, file.reference, env.reference).unwrap_or(false);

        let mut manager = role(file.manager.clone(), env.manager.clone());
        let mut reasoner = role(file.reasoner.clone(), env.reasoner.clone());
        if reference {
            let from_file = |r: &Option<HttpConfig>| r.as_ref().is_some_and(|c| !c.endpoint.is_empty());
            if from_file(&file.manager) || from_file(&file.reasoner) {
                return Err(Failure::usage("reference mode cannot be combined with endpoint settings in the config file"));
            }
            manager = None;
            reasoner = None;
        }
        for (cfg, endpoint, model) in [
            (&mut manager, &args.manager_endpoint, &args.manager_model),
            (&mut reasoner, &args.reasoner_endpoint, &args.reasoner_model),
        ] {
            if let Some(e) = endpoint {
                let c = cfg.get_or_insert_with(HttpConfig::default);
                c.endpoint = e.clone();
            }
            if let (Some(m), Some(c)) = (model, cfg.as_mut()) {
                c.model = m.clone();
            }
            if let Some(c) = cfg.as_mut() {
                if c.name == HttpConfig::default().name && !c.model.is_empty() {
                    c.name = c.model.clone();
                }
            }
        }

        let mut memory = pick(None, file.memory, env.memory).unwrap_or_default();
        if let Some(v) = args.gap_threshold_s {
            memory.gap_threshold_s = v;
        }
        if let Some(v) = args.max_lines {
            memory.max_lines = v;
        }
        if let Some(v) = args.summary_budget {
            memory.summary_budget = v;
        }
        let mut perception = pick(None, file.perception, env.perception).unwrap_or_default();
        if let Some(v) = args.top_k {
            perception.top_k = v;
        }
        if let Some(v) = args.pad_s {
            perception.pad_s = v;
        }
        if let Some(v) = args.merge_window_s {
            perception.merge_window_s = v;
        }
        let mut frames = pick(None, file.frames, env.frames).unwrap_or_default();
        if let Some(d) = &args.frame_dir {
            frames.frame_dir = d.clone();
        }
        frames.max_frames = args.max_frames.unwrap_or(frames.max_frames.min(perception.max_frames));
        perception.max_frames = frames.max_frames;
        if frames.max_frames == 0 {
            return Err(Failure::usage("max_frames must be at least 1"));
        }
        if memory.max_lines == 0 {
            return Err(Failure::usage("max_lines must be at least 1"));
        }

        // every source overrides dimensions of the full configuration
        let mut evidence = EvidenceConfig::full();
        for spec in pick(None, file.evidence, env.evidence).into_iter().chain(args.evidence_overrides()) {
            evidence = evidence.with_overrides(&spec).map_err(|e| Failure::usage(format!("{e}")))?;
        }

        let templates = match pick(args.templates.clone(), file.templates_dir, None) {
            Some(dir) => TemplateSet::load_overrides(&dir).map_err(|e| Failure::input(format!("{e}")))?,
            None => TemplateSet::default(),
        };
        Ok(Self {
            reference,
            manager,
            reasoner,
            pipeline: PipelineOptions {
                memory,
                perception,
                frames,
                reflect: true,
                build_on_demand: true,
                templates,
            },
            evidence,
            memory_dir: pick(args.memory_dir.clone(), file.memory_dir, env.memory_dir),
            workers: pick(args.workers, file.workers, None).unwrap_or(4).max(1),
        })
    }
}
