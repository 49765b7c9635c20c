use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use suba::service::{SystemClock, TrialService};
use suba_server::{router, AppState};

/// Runs live adaptive trials behind an HTTP+JSON API.
#[derive(Debug, Parser)]
#[command(name = "suba-server", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory holding one JSONL journal per trial. Without it trials live
    /// in memory only.
    #[arg(long, env = "SUBA_JOURNAL_DIR")]
    journal_dir: Option<PathBuf>,
    /// Require `Authorization: Bearer <token>` on the trial endpoints.
    #[arg(long, env = "SUBA_API_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Built operator console to serve at `/`.
    #[arg(long)]
    console_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let clock = Arc::new(SystemClock);
    let service = match &args.journal_dir {
        Some(dir) => TrialService::open(dir, clock).with_context(|| format!("restoring journals from {}", dir.display()))?,
        None => TrialService::in_memory(clock),
    };
    eprintln!("restored {} trial(s)", service.trial_ids().len());
    let app = AppState {
        service: Arc::new(service),
        token: args.token.map(Into::into),
    };
    let listener = tokio::net::TcpListener::bind(args.bind)
        .await
        .with_context(|| format!("binding {}", args.bind))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app, args.console_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
