//! Mock semantic labeler: assigns each point a deterministic label from its
//! coordinates and returns a label histogram. Deterministic so repeated runs
//! over the same bag agree exactly.

use serde_json::{json, Map};

use coral::bus::{BusClient, ServiceHandle};
use coral::registry::{
    export_manifest, BehaviorDecl, BehaviorKind, BehaviorManifest, Binding, RegistryError,
    ServiceBinding, DEFAULT_SERVICE_TIMEOUT_MS, MANIFEST_VERSION,
};

use crate::map::label_for;
use crate::raw::{in_port, out_port};

pub const LABEL_SERVICE: &str = "label/snapshot";

pub fn manifest(skillset: &str) -> BehaviorManifest {
    BehaviorManifest {
        manifest_version: MANIFEST_VERSION,
        skillset: skillset.to_string(),
        behaviors: vec![BehaviorDecl {
            name: "LabelSnapshot".to_string(),
            kind: BehaviorKind::Action,
            ports: vec![
                in_port("points", "points to classify"),
                out_port("labels", "histogram of label to point count"),
            ],
            binding: Binding::Service(ServiceBinding {
                channel: LABEL_SERVICE.to_string(),
                timeout_ms: DEFAULT_SERVICE_TIMEOUT_MS,
                request: json!({"points": "{points}"}),
                response: [("labels".to_string(), "labels".to_string())].into_iter().collect(),
                status_field: Some("status".to_string()),
            }),
        }],
    }
}

pub struct LabelerServer {
    _service: ServiceHandle,
    _manifest: ServiceHandle,
}

pub async fn serve(client: &BusClient, skillset: &str) -> Result<LabelerServer, RegistryError> {
    let service = client
        .serve(LABEL_SERVICE, |req| async move {
            let points: Option<Vec<[f64; 3]>> = req
                .get("points")
                .and_then(|v| serde_json::from_value(v.clone()).ok());
            let Some(points) = points else {
                return json!({"status": "failure", "reason": "bad request"});
            };
            let mut hist = Map::new();
            for p in points {
                let slot = hist.entry(label_for(p)).or_insert(json!(0u64));
                *slot = json!(slot.as_u64().unwrap_or(0) + 1);
            }
            json!({"status": "success", "labels": hist})
        })
        .await?;
    let manifest = export_manifest(client, &manifest(skillset)).await?;
    Ok(LabelerServer { _service: service, _manifest: manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use coral::registry::validate_manifest;

    #[test]
    fn manifest_is_valid() {
        validate_manifest(&manifest("labeler")).unwrap();
    }
}
