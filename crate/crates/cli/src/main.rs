//! `tagguard`: analyze, instrument, run, attack, fuzz and report on IR
//! programs.
//!
//! Exit codes: 0 success, 1 failed check (scenario or fuzz finding), 2 the
//! program trapped, 3 step or depth budget exhausted, 64 usage error, 65
//! unparsable or invalid input, 66 unreadable input file.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{Config, ConfigError, Format};
use std::path::PathBuf;
use std::process::ExitCode;
use tagguard_core::ir::Diagnostic;

#[derive(Parser, Debug)]
#[command(name = "tagguard", version, about = "Stack memory tagging pipeline for a small SSA IR")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalOpts {
    /// key = value file; flags given here take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worklist visits per function before its uses are given up on.
    #[arg(long, global = true, value_name = "N")]
    limit: Option<u32>,
    /// Guard width in granules.
    #[arg(long, global = true, value_name = "G")]
    guard_width: Option<u64>,
    /// Treat address tag 0 as matching every granule.
    #[arg(long, global = true)]
    wildcard: bool,
    /// Keep checks on statically resolved pointer loads.
    #[arg(long, global = true)]
    no_elision: bool,
    /// Run tag-blind.
    #[arg(long, global = true)]
    no_mte: bool,
    #[arg(long, global = true, value_name = "N")]
    step_budget: Option<u64>,
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    count: Option<usize>,
    #[arg(long, global = true, value_enum)]
    output: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify every alloca.
    Analyze { file: PathBuf },
    /// Instrument a program; writes a plan sidecar next to the output.
    Instrument {
        file: PathBuf,
        #[arg(short = 'o', long = "out", value_name = "FILE")]
        out: Option<PathBuf>,
        /// Plan sidecar path; defaults to OUT.plan.json.
        #[arg(long, value_name = "FILE")]
        plan: Option<PathBuf>,
    },
    /// Execute a program as written, or instrumented first.
    Run {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "A,B,..")]
        args: Vec<i64>,
        /// Instrument before running.
        #[arg(long)]
        instrument: bool,
        /// Write the execution trace as JSON lines.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Run an adversary scenario or script against a protected program.
    Attack {
        /// Target program; a scenario's bundled program when omitted.
        file: Option<PathBuf>,
        /// s1..s6, or `all`.
        #[arg(long, conflicts_with = "script", required_unless_present = "script")]
        scenario: Option<String>,
        /// Adversary script JSON.
        #[arg(long, value_name = "FILE", requires = "file")]
        script: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "A,B,..")]
        args: Option<Vec<i64>>,
        /// Plan sidecar of an instrumented target; defaults to FILE.plan.json.
        #[arg(long, value_name = "FILE")]
        plan: Option<PathBuf>,
    },
    /// Fuzz the classifier against the bounds oracle.
    Fuzz {
        #[arg(long, default_value_t = 4)]
        inputs: usize,
        /// Weaken the bounds check to self-test the oracle.
        #[arg(long)]
        weaken: bool,
    },
    /// Static overhead of the given programs, or of the bundled corpus.
    Report {
        files: Vec<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {diag}")]
    Parse { path: PathBuf, diag: Box<Diagnostic> },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Parse { .. } | CliError::Config { .. } | CliError::Invalid(_) => 65,
            CliError::Io { .. } => 66,
        }
    }
}

impl GlobalOpts {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut c = Config::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            c.merge_file(&text).map_err(|source| CliError::Config {
                path: path.clone(),
                source,
            })?;
        }
        if let Some(v) = self.limit {
            c.limit = v;
        }
        if let Some(v) = self.guard_width {
            c.guard_width = v;
        }
        if let Some(v) = self.step_budget {
            c.step_budget = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.count {
            c.count = v;
        }
        if let Some(v) = self.output {
            c.output = v;
        }
        c.wildcard |= self.wildcard;
        c.static_elision &= !self.no_elision;
        c.mte &= !self.no_mte;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = cli.global.resolve().and_then(|cfg| commands::dispatch(cli.command, &cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("tagguard: {e}");
            ExitCode::from(e.code())
        }
    }
}
