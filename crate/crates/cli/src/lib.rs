//! `kvmem` command-line driver.
//!
//! Every command writes a JSON manifest with the effective configuration,
//! the seed and content hashes of its inputs. Exit codes: 0 on success, 1
//! for bad input (flags, data, arguments), 2 for state or file-format
//! errors.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use kvmem_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "kvmem",
    version,
    about = "Key-value memory QA model: build, train, evaluate, query"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a JSONL knowledge source into a memory file.
    BuildMemory,
    /// Pre-train a model on a JSONL corpus (creates the model unless --model is given).
    Pretrain,
    /// Fine-tune a model on JSONL questions against a memory.
    Finetune,
    /// Print EM and F1 on a JSONL dataset.
    Eval,
    /// Answer one question and list the retrieved pairs.
    Query {
        #[arg(long)]
        text: String,
    },
    /// Measure query throughput over the questions of a JSONL dataset.
    Bench {
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum IndexArg {
    Exact,
    Hnsw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fksv,
    Sksv,
}

#[derive(Clone, Debug, clap::Args)]
pub struct Flags {
    /// TOML file with `[model]` and `[train]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub memory: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = IndexArg::Exact)]
    pub index: IndexArg,
    /// Retrieved pairs; defaults to the model's top_k.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, default_value_t = 64)]
    pub ef_search: usize,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Layer taps for inference; defaults to the model's own.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub simulate_search_delay_us: Option<u64>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Extra JSONL files whose text joins the vocabulary of a new model.
    #[arg(long, global = true)]
    pub vocab_data: Vec<PathBuf>,
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
        e if e.is_input_error() => 1,
        _ => 2,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Results go to stdout, diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match commands::execute(&cli, &mut out) {
        Ok(()) => {
            let _ = out.flush();
            0
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("kvmem: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> kvmem_core::Result<()> {
    commands::execute(cli, out)
}
