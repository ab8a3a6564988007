//! Executable leaves built from manifest bindings. The leaves run inside the
//! executor process and reach their skillset over the bus, so binding them
//! needs nothing compiled in: a service call per action, a publish, or a poll
//! of the latest message on a topic.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::manifest::{
    BehaviorManifest, Binding, PollTopicBinding, PublishBinding, ServiceBinding,
};
use super::RegistryError;
use crate::btxml::blackboard_ref;
use crate::bus::{BusClient, BusError};
use crate::engine::{BehaviorLeaf, LeafBindings, LeafCtx, TickStatus};

/// Turns fetched manifests into engine bindings over one shared session.
/// Behavior names must be globally unique: a name exported by two skillsets
/// is an error naming both, never a silent pick.
///
/// Must run inside a tokio runtime; poll conditions take out standing
/// subscriptions here and call leaves spawn onto the ambient runtime.
pub async fn bind_leaves(
    manifests: &BTreeMap<String, BehaviorManifest>,
    client: &BusClient,
) -> Result<LeafBindings, RegistryError> {
    let handle = tokio::runtime::Handle::current();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for (skillset, manifest) in manifests {
        for decl in &manifest.behaviors {
            if let Some(first) = owner.insert(&decl.name, skillset) {
                return Err(RegistryError::Conflict {
                    name: decl.name.clone(),
                    first: first.to_string(),
                    second: skillset.clone(),
                });
            }
        }
    }

    // Poll conditions read the session's latest-message cache; a standing
    // subscription per polled channel keeps that cache fed.
    let mut polled = BTreeSet::new();
    for manifest in manifests.values() {
        for decl in &manifest.behaviors {
            if let Binding::PollTopic(poll) = &decl.binding {
                if polled.insert(poll.channel.clone()) {
                    let mut sub = client.subscribe(&poll.channel).await?;
                    tokio::spawn(async move { while sub.recv().await.is_ok() {} });
                }
            }
        }
    }

    let mut bindings = LeafBindings::new();
    for manifest in manifests.values() {
        for decl in &manifest.behaviors {
            match &decl.binding {
                Binding::Service(svc) => {
                    let client = client.clone();
                    let handle = handle.clone();
                    let cfg = Arc::new(svc.clone());
                    bindings.bind(&decl.name, move |_| {
                        Box::new(ServiceLeaf {
                            client: client.clone(),
                            handle: handle.clone(),
                            cfg: cfg.clone(),
                            inflight: None,
                        })
                    });
                }
                Binding::Publish(publish) => {
                    let client = client.clone();
                    let cfg = Arc::new(publish.clone());
                    bindings.bind(&decl.name, move |_| {
                        Box::new(PublishLeaf { client: client.clone(), cfg: cfg.clone() })
                    });
                }
                Binding::PollTopic(poll) => {
                    let client = client.clone();
                    let cfg = Arc::new(poll.clone());
                    bindings.bind(&decl.name, move |_| {
                        Box::new(PollTopicLeaf { client: client.clone(), cfg: cfg.clone() })
                    });
                }
            }
        }
    }
    Ok(bindings)
}

/// Replaces whole-string `"{port}"` template values with that input port's
/// resolved value. Err carries the first port with no value.
fn fill_template(template: &Value, ctx: &LeafCtx<'_>) -> Result<Value, String> {
    match template {
        Value::String(s) => match blackboard_ref(s) {
            Some(port) => ctx.input(port).ok_or_else(|| port.to_string()),
            None => Ok(template.clone()),
        },
        Value::Array(items) => items
            .iter()
            .map(|v| fill_template(v, ctx))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        Value::Object(map) => {
            let mut out = serde_json::Map::with_capacity(map.len());
            for (k, v) in map {
                out.insert(k.clone(), fill_template(v, ctx)?);
            }
            Ok(Value::Object(out))
        }
        _ => Ok(template.clone()),
    }
}

/// One asynchronous call per activation: issue on the first tick and report
/// Running, then poll the reply slot on later ticks. Halting aborts the call
/// task, which drops the session's pending-reply slot, so a late reply never
/// reaches the tree.
struct ServiceLeaf {
    client: BusClient,
    handle: tokio::runtime::Handle,
    cfg: Arc<ServiceBinding>,
    inflight: Option<InFlight>,
}

struct InFlight {
    rx: oneshot::Receiver<Result<Value, BusError>>,
    task: JoinHandle<()>,
}

impl BehaviorLeaf for ServiceLeaf {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        let Some(inflight) = self.inflight.as_mut() else {
            let request = match fill_template(&self.cfg.request, ctx) {
                Ok(v) => v,
                Err(port) => {
                    ctx.record_error(format!("input port {port:?} has no value; call not issued"));
                    return TickStatus::Failure;
                }
            };
            let (tx, rx) = oneshot::channel();
            let client = self.client.clone();
            let channel = self.cfg.channel.clone();
            let timeout = Duration::from_millis(self.cfg.timeout_ms);
            let task = self.handle.spawn(async move {
                let _ = tx.send(client.call(&channel, request, timeout).await);
            });
            self.inflight = Some(InFlight { rx, task });
            return TickStatus::Running;
        };
        match inflight.rx.try_recv() {
            Err(oneshot::error::TryRecvError::Empty) => TickStatus::Running,
            Err(oneshot::error::TryRecvError::Closed) => {
                self.inflight = None;
                ctx.record_error("call task vanished before replying");
                TickStatus::Failure
            }
            Ok(Err(e)) => {
                self.inflight = None;
                ctx.record_error(format!("call on {:?} failed: {e}", self.cfg.channel));
                TickStatus::Failure
            }
            Ok(Ok(reply)) => {
                self.inflight = None;
                // Failed calls carry no outputs, so resolve status first.
                let status = match &self.cfg.status_field {
                    None => TickStatus::Success,
                    Some(field) => match reply.get(field) {
                        None => TickStatus::Success,
                        Some(v) if v.as_str() == Some("success") => TickStatus::Success,
                        Some(v) if v.as_str() == Some("failure") => TickStatus::Failure,
                        Some(v) => {
                            ctx.record_error(format!(
                                "status field {field:?} has unexpected value {v}"
                            ));
                            TickStatus::Failure
                        }
                    },
                };
                if status != TickStatus::Success {
                    return status;
                }
                for (field, port) in &self.cfg.response {
                    match reply.get(field) {
                        Some(v) => ctx.set_output(port, v.clone()),
                        None => ctx.record_error(format!(
                            "reply lacks field {field:?}; output {port:?} not set"
                        )),
                    }
                }
                status
            }
        }
    }

    fn halt(&mut self) {
        if let Some(inflight) = self.inflight.take() {
            inflight.task.abort();
        }
    }
}

/// Fire-and-forget: build the payload, queue it, done.
struct PublishLeaf {
    client: BusClient,
    cfg: Arc<PublishBinding>,
}

impl BehaviorLeaf for PublishLeaf {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        let payload = match fill_template(&self.cfg.payload, ctx) {
            Ok(v) => v,
            Err(port) => {
                ctx.record_error(format!("input port {port:?} has no value; nothing published"));
                return TickStatus::Failure;
            }
        };
        match self.client.publish(&self.cfg.channel, payload) {
            Ok(()) => TickStatus::Success,
            Err(e) => {
                ctx.record_error(format!("publish on {:?} failed: {e}", self.cfg.channel));
                TickStatus::Failure
            }
        }
    }
}

/// Condition over the latest message on a channel. No message yet, or an
/// absent or falsy predicate field, is Failure; never Running.
struct PollTopicLeaf {
    client: BusClient,
    cfg: Arc<PollTopicBinding>,
}

impl BehaviorLeaf for PollTopicLeaf {
    fn tick(&mut self, _ctx: &mut LeafCtx<'_>) -> TickStatus {
        match self.client.latest(&self.cfg.channel) {
            Some(msg) if truthy(msg.get(&self.cfg.field)) => TickStatus::Success,
            _ => TickStatus::Failure,
        }
    }
}

fn truthy(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_f64().map(|f| f != 0.0).unwrap_or(true),
        Some(Value::String(s)) => !s.is_empty(),
        Some(Value::Array(a)) => !a.is_empty(),
        Some(Value::Object(o)) => !o.is_empty(),
    }
}
