//! `wcgen`: generate, inspect and validate world-consistent view datasets.
//!
//! Machine-readable results go to stdout as JSON; logs go to stderr.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 partial generation,
//! 3 backend unreachable, 4 validation threshold exceeded.

mod backends;
mod generate;
mod tools;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_UNREACHABLE: u8 = 3;
pub const EXIT_THRESHOLD: u8 = 4;

/// A command outcome other than success.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<wcgen_core::Error> for Failure {
    fn from(e: wcgen_core::Error) -> Self {
        let code = if e.root().is_transport() { EXIT_UNREACHABLE } else { EXIT_USAGE };
        Self::new(code, e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Prints one JSON value on its own stdout line. A closed pipe is not an error.
pub fn emit(value: &impl serde::Serialize) {
    use std::io::Write;
    let line = serde_json::to_string(value).expect("serializable output");
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

#[derive(Parser, Debug)]
#[command(name = "wcgen", version, about = "World-consistent view synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the two-stage generation for every trajectory of a manifest.
    Generate(GenerateArgs),
    /// Forward-warp (with depth) or rotation-warp (without) one image.
    Warp(tools::WarpArgs),
    /// Report seam and trajectory consistency; exit 4 above thresholds.
    Validate(validate::ValidateArgs),
    /// Render a synthetic room scene plus a trajectory through it.
    Synth(tools::SynthArgs),
    /// Write an equirectangular panorama per viewpoint.
    Assemble(tools::AssembleArgs),
    /// Host a mock backend over the wire protocol.
    ServeMock(tools::ServeArgs),
}

/// Generation options that can also come from a TOML config file.
#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    /// `mock:<name>`, `remote:<url>` or a bare http(s) URL; defaults to `remote:$WCGEN_BACKEND_URL`
    /// when set, else `mock:fill-nearest`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with pipeline settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_overlap: Option<f64>,
    #[arg(long)]
    pub strength_forward: Option<f64>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Warp(a) => tools::warp(a),
        Command::Validate(a) => validate::run(a),
        Command::Synth(a) => tools::synth(a),
        Command::Assemble(a) => tools::assemble(a),
        Command::ServeMock(a) => tools::serve_mock(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
