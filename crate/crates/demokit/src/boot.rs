//! Env-contract bootstrap shared by every demokit binary: bus address,
//! component name, and the params namespace all come from the supervisor.

use std::time::Duration;

use anyhow::Context;
use serde_json::{Map, Value};
use tokio::time::Instant;

use coral::bus::{BusClient, DEFAULT_BUS_ADDR};
use coral::composer::env_keys;

const CONNECT_BUDGET: Duration = Duration::from_secs(30);
const CONNECT_RETRY: Duration = Duration::from_millis(100);

pub struct Boot {
    pub client: BusClient,
    pub name: String,
    pub params: Map<String, Value>,
}

pub fn init_logging() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
}

pub async fn boot(default_name: &str) -> anyhow::Result<Boot> {
    let addr =
        std::env::var(env_keys::BUS_ADDR).unwrap_or_else(|_| DEFAULT_BUS_ADDR.to_string());
    let name =
        std::env::var(env_keys::COMPONENT_NAME).unwrap_or_else(|_| default_name.to_string());
    let params = match std::env::var(env_keys::PARAMS) {
        Ok(text) => serde_json::from_str::<Value>(&text)
            .context("CORAL_PARAMS is not JSON")?
            .as_object()
            .cloned()
            .context("CORAL_PARAMS must be a JSON object")?,
        Err(_) => Map::new(),
    };
    let client = connect_with_retry(&addr, &name).await?;
    Ok(Boot { client, name, params })
}

impl Boot {
    pub fn str_param(&self, key: &str) -> Option<String> {
        self.params.get(key).and_then(Value::as_str).map(str::to_string)
    }

    pub fn f64_param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).and_then(Value::as_f64).unwrap_or(default)
    }

    pub fn u64_param(&self, key: &str, default: u64) -> u64 {
        self.params.get(key).and_then(Value::as_u64).unwrap_or(default)
    }
}

/// The supervisor starts the broker before any component, but standalone
/// runs may race it.
async fn connect_with_retry(addr: &str, name: &str) -> anyhow::Result<BusClient> {
    let give_up = Instant::now() + CONNECT_BUDGET;
    loop {
        match BusClient::connect(addr, Some(name)).await {
            Ok(client) => return Ok(client),
            Err(e) if Instant::now() + CONNECT_RETRY < give_up => {
                tracing::debug!("bus connect failed, retrying: {e}");
                tokio::time::sleep(CONNECT_RETRY).await;
            }
            Err(e) => return Err(e).with_context(|| format!("bus {addr}")),
        }
    }
}

/// Parks a driver or skillset until the supervisor stops it.
pub async fn idle_until_stopped() {
    let mut sigterm = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        .expect("signal handler installs");
    tokio::select! {
        _ = sigterm.recv() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
}
