//! `coral`: one command to bring a composed instance up, tear it down,
//! pre-flight its config surface, or read captured component logs.
//!
//! Exit codes: 0 ok, 2 config, 3 readiness, 4 runtime.

mod handle;
mod run;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "coral", version, about = "compose-driven robot software orchestration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start an instance from a compose file.
    Up(UpArgs),
    /// Stop a running instance.
    Down(InstanceRef),
    /// Parse and statically check config files without starting anything.
    Validate(ValidateArgs),
    /// Print a component's captured log.
    Logs(LogsArgs),
    /// Internal: the process behind `up --detach`.
    #[command(hide = true, name = "__supervise")]
    Supervise(UpArgs),
}

#[derive(Args)]
struct UpArgs {
    /// Compose file.
    #[arg(short = 'f', long = "file")]
    file: PathBuf,
    /// Params file; overrides the compose file's x-coral.params_file.
    #[arg(short = 'p', long = "params")]
    params: Option<PathBuf>,
    /// Return once the instance is ready, leaving a supervisor behind.
    #[arg(long)]
    detach: bool,
    /// Where component logs go (default <compose dir>/.coral/logs/<instance>).
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

/// Either the compose file or an explicit instance id names the instance.
#[derive(Args)]
struct InstanceRef {
    /// Compose file whose instance to address.
    #[arg(short = 'f', long = "file")]
    file: Option<PathBuf>,
    /// Instance id; its handle is searched under --dir/.coral/.
    #[arg(long, conflicts_with = "file")]
    instance: Option<String>,
    /// Directory holding .coral/ (default: current directory).
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct LogsArgs {
    #[command(flatten)]
    at: InstanceRef,
    /// Component whose log to print.
    component: String,
}

#[derive(Args)]
struct ValidateArgs {
    /// Compose files (repeatable).
    #[arg(short = 'f', long = "file", required = true)]
    files: Vec<PathBuf>,
    /// Extra params files beyond those the compose files name (repeatable).
    #[arg(short = 'p', long = "params")]
    params: Vec<PathBuf>,
    /// Machine-readable summary on stdout.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Up(args) => run::cmd_up(args),
        Cmd::Supervise(args) => run::cmd_supervise(args),
        Cmd::Down(at) => run::cmd_down(at),
        Cmd::Validate(args) => validate::cmd_validate(args),
        Cmd::Logs(args) => run::cmd_logs(args),
    };
    ExitCode::from(code as u8)
}
