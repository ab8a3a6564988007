//! The coordination leaves compiled into every executor. RemoteWait
//! subscribes lazily on the first tick of each activation, so signals
//! published earlier are never observed; mistiming recovery belongs to the
//! tree, not the transport.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::store::SHARED_CALL_TIMEOUT;
use super::{coord_channel, CoordSignal, Coordinator, SHARED_CHANNEL};
use crate::bus::{BusClient, BusError};
use crate::engine::{BehaviorLeaf, LeafBindings, LeafCtx, TickStatus};

/// Binds RemoteTrigger, RemoteWait, SharedSet and SharedGet over the
/// executor's session. `sender` is the executor's component name, stamped
/// into every signal. Must run inside a tokio runtime; the waiting and
/// store leaves spawn onto it.
pub fn install_leaves(bindings: &mut LeafBindings, client: &BusClient, sender: &str) {
    let handle = tokio::runtime::Handle::current();
    let coordinator = Arc::new(Coordinator::new(client.clone(), sender));

    let c = coordinator.clone();
    bindings.bind("RemoteTrigger", move |_| Box::new(RemoteTriggerLeaf { coordinator: c.clone() }));

    let wait_client = client.clone();
    let wait_handle = handle.clone();
    bindings.bind("RemoteWait", move |_| {
        Box::new(RemoteWaitLeaf {
            client: wait_client.clone(),
            handle: wait_handle.clone(),
            wait: None,
        })
    });

    for (name, op) in [("SharedSet", StoreOp::Set), ("SharedGet", StoreOp::Get)] {
        let client = client.clone();
        let handle = handle.clone();
        bindings.bind(name, move |_| {
            Box::new(SharedCallLeaf {
                client: client.clone(),
                handle: handle.clone(),
                op,
                inflight: None,
            })
        });
    }
}

fn input_str(ctx: &LeafCtx<'_>, port: &str) -> Option<String> {
    match ctx.input(port) {
        Some(Value::String(s)) => Some(s),
        _ => None,
    }
}

fn as_millis(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Ports: `signal` (name), `payload` (optional JSON). Success on queueing
/// the publication; no acknowledgment is waited for.
struct RemoteTriggerLeaf {
    coordinator: Arc<Coordinator>,
}

impl BehaviorLeaf for RemoteTriggerLeaf {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        let Some(name) = input_str(ctx, "signal") else {
            ctx.record_error("RemoteTrigger needs a signal name");
            return TickStatus::Failure;
        };
        let payload = ctx.input("payload").unwrap_or(Value::Null);
        match self.coordinator.trigger(&name, payload) {
            Ok(_) => TickStatus::Success,
            Err(e) => {
                ctx.record_error(format!("trigger {name:?} failed: {e}"));
                TickStatus::Failure
            }
        }
    }
}

/// Ports: `signal`, `timeout_ms`, out `payload`. Running until a signal
/// lands (Success, payload written) or the deadline passes (Failure).
struct RemoteWaitLeaf {
    client: BusClient,
    handle: tokio::runtime::Handle,
    wait: Option<Wait>,
}

struct Wait {
    rx: oneshot::Receiver<Result<CoordSignal, BusError>>,
    task: JoinHandle<()>,
    deadline: Instant,
}

impl BehaviorLeaf for RemoteWaitLeaf {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        let Some(wait) = self.wait.as_mut() else {
            let Some(name) = input_str(ctx, "signal") else {
                ctx.record_error("RemoteWait needs a signal name");
                return TickStatus::Failure;
            };
            let Some(timeout_ms) = ctx.input("timeout_ms").as_ref().and_then(as_millis) else {
                ctx.record_error("RemoteWait needs timeout_ms");
                return TickStatus::Failure;
            };
            let (tx, rx) = oneshot::channel();
            let client = self.client.clone();
            let ch = coord_channel(&name);
            let task = self.handle.spawn(async move {
                let outcome = async {
                    let mut sub = client.subscribe(&ch).await?;
                    loop {
                        let env = sub.recv().await?;
                        // Junk on the channel is skipped, not fatal.
                        if let Ok(sig) = serde_json::from_value::<CoordSignal>(env.data) {
                            return Ok(sig);
                        }
                    }
                }
                .await;
                let _ = tx.send(outcome);
            });
            self.wait =
                Some(Wait { rx, task, deadline: Instant::now() + Duration::from_millis(timeout_ms) });
            return TickStatus::Running;
        };
        match wait.rx.try_recv() {
            Ok(Ok(sig)) => {
                self.wait = None;
                ctx.set_output("payload", sig.payload);
                TickStatus::Success
            }
            Ok(Err(e)) => {
                self.wait = None;
                ctx.record_error(format!("wait failed: {e}"));
                TickStatus::Failure
            }
            Err(oneshot::error::TryRecvError::Empty) => {
                if Instant::now() >= wait.deadline {
                    self.halt();
                    TickStatus::Failure
                } else {
                    TickStatus::Running
                }
            }
            Err(oneshot::error::TryRecvError::Closed) => {
                self.wait = None;
                ctx.record_error("wait task vanished");
                TickStatus::Failure
            }
        }
    }

    fn halt(&mut self) {
        if let Some(wait) = self.wait.take() {
            // Dropping the task drops the subscription; nothing queued
            // survives into the next activation.
            wait.task.abort();
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum StoreOp {
    Set,
    Get,
}

/// SharedSet ports: `key`, `value`. SharedGet ports: `key`, out `value`.
/// One store call per activation, polled like any service call.
struct SharedCallLeaf {
    client: BusClient,
    handle: tokio::runtime::Handle,
    op: StoreOp,
    inflight: Option<(oneshot::Receiver<Result<Value, BusError>>, JoinHandle<()>)>,
}

impl BehaviorLeaf for SharedCallLeaf {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        let Some((rx, _)) = self.inflight.as_mut() else {
            let Some(key) = input_str(ctx, "key") else {
                ctx.record_error("shared-store leaf needs a key");
                return TickStatus::Failure;
            };
            let request = match self.op {
                StoreOp::Get => json!({"op": "get", "key": key}),
                StoreOp::Set => {
                    let Some(value) = ctx.input("value") else {
                        ctx.record_error("SharedSet needs a value");
                        return TickStatus::Failure;
                    };
                    json!({"op": "set", "key": key, "value": value})
                }
            };
            let (tx, rx) = oneshot::channel();
            let client = self.client.clone();
            let task = self.handle.spawn(async move {
                let _ = tx.send(client.call(SHARED_CHANNEL, request, SHARED_CALL_TIMEOUT).await);
            });
            self.inflight = Some((rx, task));
            return TickStatus::Running;
        };
        match rx.try_recv() {
            Err(oneshot::error::TryRecvError::Empty) => TickStatus::Running,
            Err(oneshot::error::TryRecvError::Closed) => {
                self.inflight = None;
                ctx.record_error("store call task vanished");
                TickStatus::Failure
            }
            Ok(Err(e)) => {
                self.inflight = None;
                ctx.record_error(format!("store call failed: {e}"));
                TickStatus::Failure
            }
            Ok(Ok(reply)) => {
                self.inflight = None;
                let ok = reply.get("status").and_then(Value::as_str) == Some("success");
                match self.op {
                    StoreOp::Set if ok => TickStatus::Success,
                    StoreOp::Get if ok => {
                        let value = reply.get("value").cloned().unwrap_or(Value::Null);
                        ctx.set_output("value", value);
                        TickStatus::Success
                    }
                    // Unset key reads fail without noise; that is the
                    // documented miss path, not an error.
                    StoreOp::Get => TickStatus::Failure,
                    StoreOp::Set => {
                        ctx.record_error(format!("store rejected set: {reply}"));
                        TickStatus::Failure
                    }
                }
            }
        }
    }

    fn halt(&mut self) {
        if let Some((_, task)) = self.inflight.take() {
            task.abort();
        }
    }
}
