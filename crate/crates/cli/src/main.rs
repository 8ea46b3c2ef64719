use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use web3auth_cli::{
    cmd_fixtures, cmd_guard, cmd_scan, cmd_sim, default_store_path, read_message_source,
    GuardAction, OutputFormat, ScanOptions, EXIT_ERROR,
};

/// Security toolkit for Web3 challenge-response authentication: scan
/// deployments for blind-message-attack exposure, serve a configurable
/// vulnerable-server fleet, and run the wallet-side guard engine.
#[derive(Parser)]
#[command(name = "web3auth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a target collection and report per-target findings.
    Scan(ScanArgs),
    /// Serve a simulator fleet from a profile file.
    Sim(SimArgs),
    /// Record logins into, or check requests against, the guard store.
    Guard(GuardArgs),
    /// Emit canned fixture files (simulator fleet, guard corpus).
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct ScanArgs {
    /// Target collection file (JSON).
    #[arg(long)]
    targets: PathBuf,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, default_value = "markdown", value_parser = ["json", "markdown"])]
    format: String,
    /// Minimum milliseconds between requests to one remote host
    /// (loopback is never throttled).
    #[arg(long, default_value_t = 60_000)]
    interval: u64,
    /// Per-request timeout in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout: u64,
    /// Seed for the deterministic key pool and probe payloads.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent targets.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SimArgs {
    /// Profile file (JSON list).
    #[arg(long)]
    profiles: PathBuf,
    /// Port to serve on; 0 picks a free port.
    #[arg(long, default_value_t = 8787)]
    port: u16,
}

#[derive(Args)]
struct GuardArgs {
    /// record | check
    #[arg(value_parser = ["record", "check"])]
    action: String,
    /// Origin domain the login or signature request came from.
    #[arg(long)]
    origin: String,
    /// Message text inline.
    #[arg(long)]
    message: Option<String>,
    /// Message from a file, or `-` for stdin.
    #[arg(long)]
    message_file: Option<PathBuf>,
    /// Template store file.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct FixturesArgs {
    /// fleet | guard-corpus
    #[arg(long)]
    kind: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Base URL baked into generated target configs.
    #[arg(long, default_value = "http://127.0.0.1:8787")]
    base_url: String,
    /// Seed for deterministic corpus generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Scan(args) => {
            let format = if args.format == "json" {
                OutputFormat::Json
            } else {
                OutputFormat::Markdown
            };
            let options = ScanOptions {
                interval_ms: args.interval,
                timeout_ms: args.timeout,
                seed: args.seed,
                jobs: args.jobs,
            };
            cmd_scan(&args.targets, args.out.as_deref(), format, &options)
        }
        Command::Sim(args) => cmd_sim(&args.profiles, args.port),
        Command::Guard(args) => {
            let action = if args.action == "record" {
                GuardAction::Record
            } else {
                GuardAction::Check
            };
            match read_message_source(args.message.as_deref(), args.message_file.as_deref()) {
                Ok(message) => {
                    let store = args.store.unwrap_or_else(default_store_path);
                    cmd_guard(action, &args.origin, &message, &store)
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    EXIT_ERROR
                }
            }
        }
        Command::Fixtures(args) => cmd_fixtures(&args.kind, &args.out, &args.base_url, args.seed),
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
