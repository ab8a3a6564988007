//! Generic behavior-tree executor. Reads a tree, discovers the expected
//! skillset manifests on the bus, binds every leaf to a discovered
//! capability (plus the builtin coordination leaves), then ticks the tree
//! until the root finishes or a stop signal arrives.
//!
//! Exit codes: 0 root success or clean stop, 2 config error, 3 readiness
//! failure, 4 root failure or lost bus.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};
use tokio::signal::unix::{signal, SignalKind};
use tokio::time::{Instant, MissedTickBehavior};

use coral::btxml::{expand_subtrees, parse_tree_xml};
use coral::bus::{BusClient, DEFAULT_BUS_ADDR};
use coral::composer::{env_keys, EXIT_CONFIG, EXIT_OK, EXIT_READINESS, EXIT_RUNTIME};
use coral::coordination;
use coral::engine::{create_runtime, TickStatus};
use coral::registry::{bind_leaves, fetch_manifests, RegistryError};

const DEFAULT_TICK_MS: u64 = 50;
const CONNECT_RETRY: Duration = Duration::from_millis(100);
const FLUSH_DEADLINE: Duration = Duration::from_secs(2);

#[derive(Parser)]
#[command(name = "coral-executor", version, about)]
struct Args {
    /// Broker address.
    #[arg(long, env = env_keys::BUS_ADDR, default_value = DEFAULT_BUS_ADDR)]
    bus: String,
    /// Behavior-tree XML file.
    #[arg(long, env = env_keys::TREE_PATH)]
    tree: PathBuf,
    /// Component name on the bus.
    #[arg(long, env = env_keys::COMPONENT_NAME, default_value = "executor")]
    name: String,
    /// Comma-separated skillsets whose manifests gate the first tick.
    #[arg(long, env = env_keys::EXPECTED_SKILLSETS, default_value = "")]
    expect: String,
    /// JSON object seeding the root blackboard; `tick_period_ms` is read
    /// from here as well.
    #[arg(long, env = env_keys::PARAMS, default_value = "{}")]
    params: String,
    #[arg(long, env = env_keys::READINESS_DEADLINE_MS, default_value_t = 30_000)]
    readiness_deadline_ms: u64,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    ExitCode::from(run(args).await as u8)
}

async fn run(args: Args) -> i32 {
    let params: Value = match serde_json::from_str(&args.params) {
        Ok(v) => v,
        Err(e) => return config_error(format!("params are not JSON: {e}")),
    };
    let Some(params) = params.as_object().cloned() else {
        return config_error("params must be a JSON object".to_string());
    };
    let tick_period = match params.get("tick_period_ms") {
        None => Duration::from_millis(DEFAULT_TICK_MS),
        Some(v) => match v.as_u64() {
            Some(ms) if ms > 0 => Duration::from_millis(ms),
            _ => return config_error(format!("tick_period_ms must be a positive integer, got {v}")),
        },
    };

    let xml = match std::fs::read_to_string(&args.tree) {
        Ok(xml) => xml,
        Err(e) => return config_error(format!("tree {}: {e}", args.tree.display())),
    };
    let spec = parse_tree_xml(&xml, Some(&args.tree)).and_then(|s| expand_subtrees(&s));
    let spec = match spec {
        Ok(spec) => spec,
        Err(e) => return config_error(format!("tree {}: {e}", args.tree.display())),
    };

    let deadline = Duration::from_millis(args.readiness_deadline_ms);
    let client = match connect_with_retry(&args.bus, &args.name, deadline).await {
        Ok(client) => client,
        Err(e) => {
            eprintln!("coral-executor: bus {}: {e}", args.bus);
            return EXIT_READINESS;
        }
    };

    let expected: BTreeSet<String> = args
        .expect
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let manifests = if expected.is_empty() {
        Default::default()
    } else {
        match fetch_manifests(&client, &expected, deadline).await {
            Ok(m) => m,
            Err(RegistryError::Readiness { missing }) => {
                eprintln!("coral-executor: readiness deadline passed, missing skillsets: {missing:?}");
                return EXIT_READINESS;
            }
            Err(RegistryError::Bus(e)) => {
                eprintln!("coral-executor: bus failed during discovery: {e}");
                return EXIT_READINESS;
            }
            Err(e) => return config_error(format!("manifest: {e}")),
        }
    };

    let mut bindings = match bind_leaves(&manifests, &client).await {
        Ok(b) => b,
        Err(e) => return config_error(format!("binding: {e}")),
    };
    for name in coordination::LEAF_NAMES {
        if bindings.contains(name) {
            return config_error(format!(
                "behavior {name:?} from a manifest collides with a builtin coordination leaf"
            ));
        }
    }
    coordination::install_leaves(&mut bindings, &client, &args.name);

    let mut runtime = match create_runtime(&spec, &bindings, tick_period) {
        Ok(rt) => rt,
        Err(e) => return config_error(format!("tree {}: {e}", args.tree.display())),
    };
    for (key, value) in &params {
        runtime.set_root(key, value.clone());
    }

    let status_ch = format!("coral/status/{}", args.name);
    let publish_status = |root: &str, ticks: u64| {
        tracing::info!("root status {root} at tick {ticks}");
        let _ = client.publish(
            &status_ch,
            json!({"component": args.name, "root": root, "ticks": ticks}),
        );
    };

    let mut sigterm = match signal(SignalKind::terminate()) {
        Ok(s) => s,
        Err(e) => return config_error(format!("signal handler: {e}")),
    };
    let mut interval = tokio::time::interval(tick_period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut last = TickStatus::Idle;
    publish_status("starting", 0);

    loop {
        tokio::select! {
            _ = interval.tick() => {
                if client.is_closed() {
                    eprintln!("coral-executor: bus session lost");
                    return EXIT_RUNTIME;
                }
                let status = runtime.tick_root();
                for event in runtime.take_events() {
                    tracing::warn!("{event}");
                }
                if status != last {
                    publish_status(&status.to_string(), runtime.ticks());
                    last = status;
                }
                match status {
                    TickStatus::Success => {
                        drain(&client).await;
                        return EXIT_OK;
                    }
                    TickStatus::Failure => {
                        eprintln!("coral-executor: tree finished with failure");
                        drain(&client).await;
                        return EXIT_RUNTIME;
                    }
                    _ => {}
                }
            }
            _ = sigterm.recv() => {
                runtime.halt_tree();
                publish_status("halted", runtime.ticks());
                drain(&client).await;
                return EXIT_OK;
            }
            _ = tokio::signal::ctrl_c() => {
                runtime.halt_tree();
                publish_status("halted", runtime.ticks());
                drain(&client).await;
                return EXIT_OK;
            }
        }
    }
}

fn config_error(msg: String) -> i32 {
    eprintln!("coral-executor: {msg}");
    EXIT_CONFIG
}

/// Final publishes (status transitions, coordination triggers) sit in the
/// writer queue; confirm the broker processed them before the process exits.
async fn drain(client: &BusClient) {
    let _ = tokio::time::timeout(FLUSH_DEADLINE, client.flush()).await;
}

/// The supervisor starts the broker before any component, but a standalone
/// run may race it; retry within the readiness budget.
async fn connect_with_retry(
    bus: &str,
    name: &str,
    deadline: Duration,
) -> Result<BusClient, coral::bus::BusError> {
    let give_up = Instant::now() + deadline;
    loop {
        match BusClient::connect(bus, Some(name)).await {
            Ok(client) => return Ok(client),
            Err(e) if Instant::now() + CONNECT_RETRY < give_up => {
                tracing::debug!("bus connect failed, retrying: {e}");
                tokio::time::sleep(CONNECT_RETRY).await;
            }
            Err(e) => return Err(e),
        }
    }
}
