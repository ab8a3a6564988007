//! Mock coverage planner: consumes a saved map and writes a coverage report,
//! plus a parking behavior that announces the platform went idle.

use std::path::PathBuf;

use serde_json::{json, Value};

use coral::bus::{BusClient, ServiceHandle};
use coral::registry::{
    export_manifest, BehaviorDecl, BehaviorKind, BehaviorManifest, Binding, PublishBinding,
    RegistryError, ServiceBinding, DEFAULT_SERVICE_TIMEOUT_MS, MANIFEST_VERSION,
};

use crate::map::MapState;
use crate::raw::{in_port, out_port};

pub const COVERAGE_SERVICE: &str = "coverage/run";
pub const IDLE_TOPIC: &str = "coverage/idle";

#[derive(Debug, Clone)]
pub struct CoverageParams {
    pub report_out: PathBuf,
}

pub fn manifest(skillset: &str) -> BehaviorManifest {
    BehaviorManifest {
        manifest_version: MANIFEST_VERSION,
        skillset: skillset.to_string(),
        behaviors: vec![
            BehaviorDecl {
                name: "MockCoverage".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![
                    in_port("map_path", "saved map to plan coverage over"),
                    out_port("report", "path the coverage report was written to"),
                ],
                binding: Binding::Service(ServiceBinding {
                    channel: COVERAGE_SERVICE.to_string(),
                    timeout_ms: DEFAULT_SERVICE_TIMEOUT_MS,
                    request: json!({"map_path": "{map_path}"}),
                    response: [("report".to_string(), "report".to_string())]
                        .into_iter()
                        .collect(),
                    status_field: Some("status".to_string()),
                }),
            },
            BehaviorDecl {
                name: "SafeIdle".to_string(),
                kind: BehaviorKind::Action,
                ports: vec![],
                binding: Binding::Publish(PublishBinding {
                    channel: IDLE_TOPIC.to_string(),
                    payload: json!({"parked": true}),
                }),
            },
        ],
    }
}

pub struct CoverageServer {
    _service: ServiceHandle,
    _manifest: ServiceHandle,
}

pub async fn serve(
    client: &BusClient,
    skillset: &str,
    params: &CoverageParams,
) -> Result<CoverageServer, RegistryError> {
    let report_out = params.report_out.clone();
    let service = client
        .serve(COVERAGE_SERVICE, move |req| {
            let report_out = report_out.clone();
            async move {
                let Some(map_path) = req.get("map_path").and_then(Value::as_str) else {
                    return json!({"status": "failure", "reason": "bad request"});
                };
                let map = match MapState::load(map_path.as_ref()) {
                    Ok(m) => m,
                    Err(e) => return json!({"status": "failure", "reason": e.to_string()}),
                };
                let report = json!({
                    "source_map": map_path,
                    "clusters_visited": map.labels.len(),
                    "points": map.points.len(),
                });
                if let Some(parent) = report_out.parent() {
                    if let Err(e) = std::fs::create_dir_all(parent) {
                        return json!({"status": "failure", "reason": e.to_string()});
                    }
                }
                let body = format!("{}\n", serde_json::to_string_pretty(&report).unwrap());
                match std::fs::write(&report_out, body) {
                    Ok(()) => {
                        json!({"status": "success", "report": report_out.display().to_string()})
                    }
                    Err(e) => json!({"status": "failure", "reason": e.to_string()}),
                }
            }
        })
        .await?;
    let manifest = export_manifest(client, &manifest(skillset)).await?;
    Ok(CoverageServer { _service: service, _manifest: manifest })
}
