//! The `tablemb` command line: one binary with a subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.
//! Logs go to standard error; results go to standard output or `--out`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tablemb",
    version,
    about = "Table embeddings with a dual-axis Transformer pretrained by corrupt-cell detection",
    arg_required_else_help = true,
    args_override_self = true
)]
pub struct Cli {
    /// Plain-text key=value file of flag defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (0 = all cores). 1 gives the deterministic mode.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain an encoder by corrupt-cell detection.
    #[command(args_override_self = true)]
    Pretrain(commands::PretrainArgs),
    /// Fine-tune for column population (predict the remaining headers).
    #[command(args_override_self = true)]
    FinetuneColpop(commands::FinetuneArgs),
    /// Fine-tune for row population (predict the remaining entities).
    #[command(args_override_self = true)]
    FinetuneRowpop(commands::FinetuneArgs),
    /// Fine-tune for column type prediction.
    #[command(args_override_self = true)]
    FinetuneColtype(commands::FinetuneArgs),
    /// Score cells for corruption, or evaluate detection against gold records.
    #[command(args_override_self = true)]
    Detect(commands::DetectArgs),
    /// Encode a corpus and write an embedding index.
    #[command(args_override_self = true)]
    Embed(commands::EmbedArgs),
    /// Exact nearest neighbours of an indexed embedding.
    #[command(args_override_self = true)]
    Knn(commands::KnnArgs),
    /// k-means clustering of an index.
    #[command(args_override_self = true)]
    Cluster(commands::ClusterArgs),
    /// Ranking or classification metrics of a predictions file.
    #[command(args_override_self = true)]
    Eval(commands::EvalArgs),
}

/// Flags shared by subcommands that take a model configuration.
#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ModelArgs {
    /// Hidden width of the encoder and embedder.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Std of fresh attention/feed-forward weights; `scaled` means 1/sqrt(hidden).
    #[arg(long, default_value = "0.02")]
    pub init_std: String,
    #[arg(long, default_value_t = 30)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 20)]
    pub max_cols: usize,
    #[arg(long, default_value_t = 300)]
    pub max_cell_chars: usize,
}

fn to_strings(argv: impl IntoIterator<Item = impl Into<OsString>>) -> Result<Vec<String>, String> {
    argv.into_iter()
        .map(|a| {
            a.into()
                .into_string()
                .map_err(|a| format!("argument is not valid UTF-8: {}", a.to_string_lossy()))
        })
        .collect()
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let args = match to_strings(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(e @ config::ConfigError::Read(..)) => {
            eprintln!("error: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
