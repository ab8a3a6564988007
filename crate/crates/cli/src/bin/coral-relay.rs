//! Bridges coordination channels between two instances' brokers. Each named
//! channel is forwarded in one direction only, so loops cannot form. Runs as
//! a driver component inside the instance whose bus is `--bus`.

use std::time::Duration;

use anyhow::Context;
use clap::Parser;

use coral::bus::{BusClient, BusError, DEFAULT_BUS_ADDR};
use coral::coordination::{coord_channel, relay_coord_channels, RelayDirection, RelayRoute};

const RETRY: Duration = Duration::from_millis(250);

#[derive(Parser)]
#[command(name = "coral-relay", about = "forward coordination signals between two instances")]
struct Args {
    /// Local bus address.
    #[arg(long, env = "CORAL_BUS_ADDR", default_value = DEFAULT_BUS_ADDR)]
    bus: String,
    /// Remote bus address.
    #[arg(long)]
    remote: String,
    /// Signal name to forward local -> remote (repeatable).
    #[arg(long = "to-remote")]
    to_remote: Vec<String>,
    /// Signal name to forward remote -> local (repeatable).
    #[arg(long = "to-local")]
    to_local: Vec<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let args = Args::parse();
    anyhow::ensure!(
        !(args.to_remote.is_empty() && args.to_local.is_empty()),
        "nothing to forward; pass --to-remote and/or --to-local"
    );
    let routes: Vec<RelayRoute> = args
        .to_remote
        .iter()
        .map(|name| (name, RelayDirection::ToRemote))
        .chain(args.to_local.iter().map(|name| (name, RelayDirection::ToLocal)))
        .map(|(name, direction)| RelayRoute { channel: coord_channel(name), direction })
        .collect();

    let mut sigterm = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        .context("signal handler")?;

    // The remote instance may come up after this one; keep retrying both
    // connections, and rebuild them if either side drops.
    loop {
        let bridge = async {
            let local = connect_forever(&args.bus, "relay_local").await;
            let remote = connect_forever(&args.remote, "relay_remote").await;
            tracing::info!("relaying {} routes between {} and {}", routes.len(), args.bus, args.remote);
            let tasks = match relay_coord_channels(&local, &remote, &routes).await {
                Ok(tasks) => tasks,
                Err(e) => {
                    tracing::warn!("relay setup failed, retrying: {e}");
                    tokio::time::sleep(RETRY).await;
                    return;
                }
            };
            loop {
                tokio::time::sleep(RETRY).await;
                if local.is_closed() || remote.is_closed() {
                    tracing::warn!("relay connection lost, reconnecting");
                    for t in &tasks {
                        t.abort();
                    }
                    return;
                }
            }
        };
        tokio::select! {
            _ = bridge => {}
            _ = sigterm.recv() => return Ok(()),
            _ = tokio::signal::ctrl_c() => return Ok(()),
        }
    }
}

async fn connect_forever(addr: &str, id: &str) -> BusClient {
    loop {
        match BusClient::connect(addr, Some(id)).await {
            Ok(c) => return c,
            Err(e @ BusError::Io { .. }) => {
                tracing::debug!("bus {addr} not up yet: {e}");
                tokio::time::sleep(RETRY).await;
            }
            Err(e) => {
                tracing::warn!("bus {addr}: {e}");
                tokio::time::sleep(RETRY).await;
            }
        }
    }
}
