//! Raw data server: caches the latest `points` message and serves it as a
//! snapshot on request. The cache is latest-only by design; consumers that
//! need every snapshot must poll faster than the stream publishes.

use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use tokio::task::JoinHandle;

use coral::bus::{BusClient, ServiceHandle};
use coral::registry::{
    export_manifest, BehaviorDecl, BehaviorKind, BehaviorManifest, Binding, PortDecl,
    PortDirection, RegistryError, ServiceBinding, DEFAULT_SERVICE_TIMEOUT_MS, MANIFEST_VERSION,
};

pub const POINTS_TOPIC: &str = "points";
pub const SNAPSHOT_SERVICE: &str = "raw/get_snapshot";

pub fn manifest(skillset: &str) -> BehaviorManifest {
    BehaviorManifest {
        manifest_version: MANIFEST_VERSION,
        skillset: skillset.to_string(),
        behaviors: vec![BehaviorDecl {
            name: "GetSnapshot".to_string(),
            kind: BehaviorKind::Action,
            ports: vec![
                out_port("t", "timestamp of the cached snapshot"),
                out_port("points", "point list of the cached snapshot"),
                out_port("pose", "sensor pose [x, y, z, yaw]"),
            ],
            binding: Binding::Service(ServiceBinding {
                channel: SNAPSHOT_SERVICE.to_string(),
                timeout_ms: DEFAULT_SERVICE_TIMEOUT_MS,
                request: Value::Null,
                response: [("t", "t"), ("points", "points"), ("pose", "pose")]
                    .into_iter()
                    .map(|(f, p)| (f.to_string(), p.to_string()))
                    .collect(),
                status_field: Some("status".to_string()),
            }),
        }],
    }
}

pub(crate) fn out_port(name: &str, doc: &str) -> PortDecl {
    PortDecl {
        name: name.to_string(),
        direction: PortDirection::Out,
        doc: doc.to_string(),
    }
}

pub(crate) fn in_port(name: &str, doc: &str) -> PortDecl {
    PortDecl {
        name: name.to_string(),
        direction: PortDirection::In,
        doc: doc.to_string(),
    }
}

pub struct RawServer {
    _snapshot: ServiceHandle,
    _manifest: ServiceHandle,
    _feed: JoinHandle<()>,
}

pub async fn serve(client: &BusClient, skillset: &str) -> Result<RawServer, RegistryError> {
    let mut sub = client.subscribe(POINTS_TOPIC).await?;
    let cache: Arc<Mutex<Option<Value>>> = Arc::default();
    let feed = tokio::spawn({
        let cache = cache.clone();
        async move {
            while let Ok(env) = sub.recv().await {
                *cache.lock().unwrap() = Some(env.data);
            }
        }
    });
    let snapshot = client
        .serve(SNAPSHOT_SERVICE, move |_req| {
            let cached = cache.lock().unwrap().clone();
            async move {
                match cached {
                    Some(Value::Object(mut snap)) => {
                        snap.insert("status".to_string(), json!("success"));
                        Value::Object(snap)
                    }
                    Some(_) => json!({"status": "failure", "reason": "malformed snapshot"}),
                    None => json!({"status": "failure", "reason": "no snapshot cached"}),
                }
            }
        })
        .await?;
    let manifest = export_manifest(client, &manifest(skillset)).await?;
    Ok(RawServer { _snapshot: snapshot, _manifest: manifest, _feed: feed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use coral::registry::validate_manifest;

    #[test]
    fn manifest_is_valid() {
        validate_manifest(&manifest("raw_server")).unwrap();
    }
}
