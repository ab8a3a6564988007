//! Mock mapper: accumulates snapshots into a point map, persists it to disk
//! and exposes the whole lifecycle (load, integrate, save) as services.
//! Duplicate-timestamp integration is rejected so a slow caller that retries
//! the same snapshot cannot inflate the map.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use coral::bus::{BusClient, ServiceHandle};
use coral::registry::{
    export_manifest, BehaviorDecl, BehaviorKind, BehaviorManifest, Binding, PollTopicBinding,
    RegistryError, ServiceBinding, DEFAULT_SERVICE_TIMEOUT_MS, MANIFEST_VERSION,
};

use crate::map::MapState;
use crate::raw::{in_port, out_port};

pub const LOAD_SERVICE: &str = "slam/load";
pub const INTEGRATE_SERVICE: &str = "slam/integrate";
pub const SAVE_SERVICE: &str = "slam/save";
pub const RECORD_LABELS_SERVICE: &str = "slam/record_labels";
pub const STOP_TOPIC: &str = "ui/stop";

#[derive(Debug, Clone)]
pub struct SlamParams {
    pub map_in: PathBuf,
    pub map_out: PathBuf,
}

#[derive(Debug, Default)]
struct SlamState {
    map: MapState,
    last_t: Option<f64>,
}

pub fn manifest(skillset: &str) -> BehaviorManifest {
    let service = |channel: &str, request: Value, response: &[(&str, &str)]| {
        Binding::Service(ServiceBinding {
            channel: channel.to_string(),
            timeout_ms: DEFAULT_SERVICE_TIMEOUT_MS,
            request,
            response: response
                .iter()
                .map(|(f, p)| (f.to_string(), p.to_string()))
                .collect(),
            status_field: Some("status".to_string()),
        })
    };
    BehaviorManifest {
        manifest_version: MANIFEST_VERSION,
        skillset: skillset.to_string(),
        behaviors: vec![
            BehaviorDecl {
                name: "LoadMap".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![out_port("loaded", "points present after loading")],
                binding: service(LOAD_SERVICE, Value::Null, &[("count", "loaded")]),
            },
            BehaviorDecl {
                name: "IntegrateSnapshot".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![
                    in_port("t", "snapshot timestamp"),
                    in_port("points", "points in sensor frame"),
                    in_port("pose", "sensor pose [x, y, z, yaw]"),
                    out_port("count", "map size after integration"),
                ],
                binding: service(
                    INTEGRATE_SERVICE,
                    json!({"t": "{t}", "points": "{points}", "pose": "{pose}"}),
                    &[("count", "count")],
                ),
            },
            BehaviorDecl {
                name: "SaveMap".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![out_port("saved_to", "path the map was written to")],
                binding: service(SAVE_SERVICE, Value::Null, &[("path", "saved_to")]),
            },
            BehaviorDecl {
                name: "RecordLabels".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![in_port("labels", "label histogram to merge")],
                binding: service(
                    RECORD_LABELS_SERVICE,
                    json!({"labels": "{labels}"}),
                    &[],
                ),
            },
            BehaviorDecl {
                name: "CheckStop".to_string(),
                kind: BehaviorKind::Condition,
                ports: vec![],
                binding: Binding::PollTopic(PollTopicBinding {
                    channel: STOP_TOPIC.to_string(),
                    field: "stop".to_string(),
                }),
            },
        ],
    }
}

pub struct SlamServer {
    state: Arc<Mutex<SlamState>>,
    _services: Vec<ServiceHandle>,
}

impl SlamServer {
    pub fn map_snapshot(&self) -> MapState {
        self.state.lock().unwrap().map.clone()
    }
}

pub async fn serve(
    client: &BusClient,
    skillset: &str,
    params: &SlamParams,
) -> Result<SlamServer, RegistryError> {
    let state: Arc<Mutex<SlamState>> = Arc::default();
    let mut services = Vec::new();

    let load = {
        let state = state.clone();
        let map_in = params.map_in.clone();
        client
            .serve(LOAD_SERVICE, move |_req| {
                let state = state.clone();
                let map_in = map_in.clone();
                async move {
                    let loaded = if map_in.exists() {
                        match MapState::load(&map_in) {
                            Ok(m) => m,
                            Err(e) => {
                                return json!({"status": "failure", "reason": e.to_string()})
                            }
                        }
                    } else {
                        MapState::default()
                    };
                    let count = loaded.points.len();
                    let mut st = state.lock().unwrap();
                    st.map = loaded;
                    st.last_t = None;
                    json!({"status": "success", "count": count})
                }
            })
            .await?
    };
    services.push(load);

    let integrate = {
        let state = state.clone();
        client
            .serve(INTEGRATE_SERVICE, move |req| {
                let state = state.clone();
                async move {
                    let parsed = (|| {
                        let t = req.get("t")?.as_f64()?;
                        let points: Vec<[f64; 3]> =
                            serde_json::from_value(req.get("points")?.clone()).ok()?;
                        let pose: [f64; 4] =
                            serde_json::from_value(req.get("pose")?.clone()).ok()?;
                        Some((t, points, pose))
                    })();
                    let Some((t, points, pose)) = parsed else {
                        return json!({"status": "failure", "reason": "bad request"});
                    };
                    let mut st = state.lock().unwrap();
                    if st.last_t == Some(t) {
                        return json!({"status": "failure", "reason": "duplicate snapshot"});
                    }
                    st.map.integrate(&points, pose);
                    st.last_t = Some(t);
                    json!({"status": "success", "count": st.map.points.len()})
                }
            })
            .await?
    };
    services.push(integrate);

    let save = {
        let state = state.clone();
        let map_out = params.map_out.clone();
        client
            .serve(SAVE_SERVICE, move |_req| {
                let state = state.clone();
                let map_out = map_out.clone();
                async move {
                    let map = state.lock().unwrap().map.clone();
                    match map.save(&map_out) {
                        Ok(()) => {
                            json!({"status": "success", "path": map_out.display().to_string()})
                        }
                        Err(e) => json!({"status": "failure", "reason": e.to_string()}),
                    }
                }
            })
            .await?
    };
    services.push(save);

    let record = {
        let state = state.clone();
        client
            .serve(RECORD_LABELS_SERVICE, move |req| {
                let state = state.clone();
                async move {
                    let Some(labels) = req
                        .get("labels")
                        .and_then(|v| v.as_object())
                        .map(|m| {
                            m.iter()
                                .map(|(k, v)| (k.clone(), v.as_u64().unwrap_or(0)))
                                .collect::<std::collections::BTreeMap<_, _>>()
                        })
                    else {
                        return json!({"status": "failure", "reason": "bad request"});
                    };
                    let mut st = state.lock().unwrap();
                    st.map.add_labels(&labels);
                    json!({"status": "success"})
                }
            })
            .await?
    };
    services.push(record);

    services.push(export_manifest(client, &manifest(skillset)).await?);
    Ok(SlamServer { state, _services: services })
}
