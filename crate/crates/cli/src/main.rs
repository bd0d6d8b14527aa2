mod commands;
mod config;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use config::GlobalArgs;

/// Label-based data-flow tracking and enforcement for object storage.
#[derive(Debug, Parser)]
#[command(name = "labelmesh", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one component until SIGINT or SIGTERM.
    Serve {
        #[arg(value_enum)]
        component: ServeTarget,
        /// Store only: omit creation dates from listings, like S3.
        #[arg(long)]
        hide_created_at: bool,
        /// Proxy only: forward without asking the decision point.
        #[arg(long)]
        no_auth: bool,
    },
    /// Audit the store against the tracking policy.
    /// Exits 0 when clean, 2 with findings, 1 on error.
    Audit,
    /// Label the objects of a bucket by schema keywords.
    Label {
        #[arg(long)]
        bucket: String,
        /// Labels for objects without a keyword match (comma-separated).
        /// Without it, unmatched objects are prompted for on a terminal and skipped otherwise.
        #[arg(long)]
        assign: Option<String>,
    },
    /// Measure fetch latency for the three wirings.
    Bench(commands::BenchArgs),
    /// Seed an empty store with the CloudFlow demo data.
    DemoSeed,
    /// Policy file utilities.
    Policy {
        #[command(subcommand)]
        action: PolicyAction,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ServeTarget {
    Store,
    Pdp,
    Pep,
}

#[derive(Debug, Subcommand)]
enum PolicyAction {
    /// Validate a policy file and print its canonical form and digest.
    Check {
        /// Defaults to the configured policy.
        file: Option<PathBuf>,
    },
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("LABELMESH_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let g = &cli.global;
    let result = match cli.command {
        Command::Serve { component, hide_created_at, no_auth } => {
            serve::run(g, component, serve::Options { hide_created_at, no_auth }).await
        }
        Command::Audit => commands::audit(g).await,
        Command::Label { bucket, assign } => commands::label(g, &bucket, assign.as_deref()).await,
        Command::Bench(args) => commands::bench(g, &args).await,
        Command::DemoSeed => commands::demo_seed(g).await,
        Command::Policy { action: PolicyAction::Check { file } } => commands::policy_check(g, file.as_deref()),
        Command::Config => commands::show_config(g),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
