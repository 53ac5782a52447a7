//! The `hdt` command-line tool.
//!
//! Every run writes its outputs plus a `manifest.json` into `--out`. The
//! manifest holds the resolved configuration (without the output directory)
//! and the SHA-256 of every input file; `hdt replay <manifest>` re-executes it.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod bench;
mod listops_cmds;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use bench::BENCH_HEADER;
pub use manifest::{Manifest, MANIFEST_FILE};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Fp {
    #[value(name = "32")]
    #[serde(rename = "32")]
    F32,
    #[value(name = "64")]
    #[serde(rename = "64")]
    F64,
}

/// Options shared by every subcommand except the output directory.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Global {
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point width.
    #[arg(long, global = true, value_enum, default_value = "64")]
    pub fp: Fp,
    /// Output format; bench-attention defaults to csv, everything else to json.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

impl Global {
    pub fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hdt", version, about = "Hierarchical document attention: data, masks, kernels and training")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Generate train/val/test ListOps splits.
    GenListops(listops_cmds::GenArgs),
    /// Per-document mask statistics of a document file.
    MaskStats(bench::MaskStatsArgs),
    /// Tile occupancy of the block-sparse kernel across sequence lengths.
    BenchAttention(bench::BenchArgs),
    /// Train one model on a ListOps dataset directory.
    Train(listops_cmds::TrainArgs),
    /// Evaluate a checkpoint on a ListOps file.
    Eval(listops_cmds::EvalArgs),
    /// Train every attention variant with one budget and compare.
    Ablation(listops_cmds::AblationArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// An argument combination clap cannot reject on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A run that finished but with numerically failed parts.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Runs one resolved command, writing outputs and the manifest into `out`.
pub fn execute(global: &Global, command: &Command, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| crate::Error::io(out, e))?;
    let mut m = Manifest::new(global, command);
    match command {
        Command::GenListops(a) => listops_cmds::gen_listops(global, a, out, &mut m)?,
        Command::MaskStats(a) => bench::mask_stats(global, a, out, &mut m)?,
        Command::BenchAttention(a) => bench::bench_attention(global, a, out, &mut m)?,
        Command::Train(a) => listops_cmds::train(global, a, out, &mut m)?,
        Command::Eval(a) => listops_cmds::eval(global, a, out, &mut m)?,
        Command::Ablation(a) => listops_cmds::ablation(global, a, out, &mut m)?,
        Command::Replay(_) => return Err(usage("replay cannot be nested")),
    }
    m.write(out)
}

fn replay(path: &Path, out: &Path) -> anyhow::Result<()> {
    let m = Manifest::read(path)?;
    m.verify_inputs()?;
    execute(&m.global, &m.command, out)
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() {
        return EXIT_USAGE;
    }
    if err.is::<NumericFailure>() {
        return EXIT_NUMERIC;
    }
    match err.downcast_ref::<crate::Error>() {
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Replay(r) => replay(&r.manifest, &cli.out),
        cmd => execute(&cli.global, cmd, &cli.out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
