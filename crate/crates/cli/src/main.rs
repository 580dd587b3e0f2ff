mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Episodic-memory question answering over long videos.
#[derive(Debug, Parser)]
#[command(name = "epimem", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Config file (TOML), or evidence overrides such as `vision=none,text=full_transcript`
    #[arg(long, global = true, value_name = "FILE|K=V")]
    config: Vec<String>,
    /// Use the deterministic reference backends for both roles
    #[arg(long, global = true)]
    reference: bool,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Print the assembled requests instead of calling the reasoner; no files are written
    #[arg(long, global = true)]
    dry_run: bool,
    /// Evidence composition, e.g. `vision=qr_segment,text=qr_transcript,memory=schematic`
    #[arg(long, global = true, value_name = "K=V,..")]
    evidence: Option<String>,
    #[arg(long, global = true, value_name = "URL", conflicts_with = "reference")]
    manager_endpoint: Option<String>,
    #[arg(long, global = true, value_name = "NAME")]
    manager_model: Option<String>,
    #[arg(long, global = true, value_name = "URL", conflicts_with = "reference")]
    reasoner_endpoint: Option<String>,
    #[arg(long, global = true, value_name = "NAME")]
    reasoner_model: Option<String>,
    /// Directory of prompt template overrides (`<name>.txt`)
    #[arg(long, global = true, value_name = "DIR")]
    templates: Option<PathBuf>,
    /// Directory for cached memory files
    #[arg(long, global = true, value_name = "DIR")]
    memory_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    pad_s: Option<f64>,
    #[arg(long, global = true)]
    merge_window_s: Option<f64>,
    #[arg(long, global = true)]
    max_frames: Option<usize>,
    #[arg(long, global = true)]
    frame_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    gap_threshold_s: Option<f64>,
    #[arg(long, global = true)]
    max_lines: Option<usize>,
    #[arg(long, global = true)]
    summary_budget: Option<usize>,
}

impl GlobalArgs {
    fn is_override(v: &str) -> bool {
        v.contains('=') && !std::path::Path::new(v).exists()
    }

    /// The last `--config` value that names a file.
    pub fn config_file(&self) -> Option<PathBuf> {
        self.config.iter().rev().find(|v| !Self::is_override(v)).map(PathBuf::from)
    }

    /// Evidence overrides in the order given: `--config k=v` values, then `--evidence`.
    pub fn evidence_overrides(&self) -> Vec<String> {
        self.config
            .iter()
            .filter(|v| Self::is_override(v))
            .cloned()
            .chain(self.evidence.clone())
            .collect()
    }
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Build the episodic memory of one transcript
    BuildMemory(commands::BuildArgs),
    /// Answer a multiple-choice question about one video
    Ask(commands::AskArgs),
    /// Run a benchmark manifest and report accuracy
    Eval(commands::EvalArgs),
    /// Token statistics of a transcript and its memory, or render a saved report
    Stats(commands::StatsArgs),
}

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

/// An error with its exit code and, when known, the stage that failed.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub stage: Option<&'static str>,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl fmt::Display) -> Self {
        Self { code: EXIT_INPUT, stage: None, message: message.to_string() }
    }

    pub fn backend(message: impl fmt::Display) -> Self {
        Self { code: EXIT_BACKEND, stage: None, message: message.to_string() }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Self { code: EXIT_USAGE, stage: None, message: message.to_string() }
    }

    pub fn at(mut self, stage: &'static str) -> Self {
        self.stage = Some(stage);
        self
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match f.stage {
                Some(stage) => eprintln!("error [{stage}]: {}", f.message),
                None => eprintln!("error: {}", f.message),
            }
            ExitCode::from(f.code)
        }
    }
}
