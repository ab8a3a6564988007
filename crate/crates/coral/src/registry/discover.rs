//! Manifest publication and discovery. Skillsets register a getter service
//! and announce once on a shared topic; executors poll the getters with
//! backoff and listen on the topic so a late-starting skillset is picked up
//! without waiting out the next poll round. Pull plus push covers both start
//! orders with no coordinator.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde_json::Value;
use tracing::{debug, warn};

use super::manifest::{manifest_from_value, validate_manifest, BehaviorManifest};
use super::RegistryError;
use crate::bus::{BusClient, BusError, ServiceHandle};

/// Topic every manifest is announced on at export time.
pub const MANIFEST_TOPIC: &str = "coral/manifest";

/// Getter service holding one skillset's manifest.
pub fn manifest_channel(skillset: &str) -> String {
    format!("coral/manifest/get/{skillset}")
}

/// Default discovery budget.
pub const FETCH_DEADLINE: Duration = Duration::from_secs(30);

const BACKOFF_INITIAL: Duration = Duration::from_millis(100);
const BACKOFF_CAP: Duration = Duration::from_secs(2);
/// Per-attempt call budget; one dead-air getter must not eat the deadline.
const CALL_TIMEOUT: Duration = Duration::from_secs(2);

/// Makes `m` discoverable: getter service plus one announcement. The service
/// lives as long as the session; hold the handle for the component's life.
/// A taken getter channel means another component already exported this
/// skillset name, which is fatal for the caller.
pub async fn export_manifest(
    client: &BusClient,
    m: &BehaviorManifest,
) -> Result<ServiceHandle, RegistryError> {
    validate_manifest(m)?;
    let value = serde_json::to_value(m).expect("manifest types serialize");
    let reply = value.clone();
    let handle = client
        .serve(&manifest_channel(&m.skillset), move |_| {
            let reply = reply.clone();
            async move { reply }
        })
        .await?;
    client.publish(MANIFEST_TOPIC, value)?;
    debug!(skillset = %m.skillset, behaviors = m.behaviors.len(), "manifest exported");
    Ok(handle)
}

/// Collects one manifest per expected skillset, retrying getters with backoff
/// (100 ms doubling to 2 s) until all are present or `deadline` passes, at
/// which point the error names every skillset still missing.
pub async fn fetch_manifests(
    client: &BusClient,
    expected: &BTreeSet<String>,
    deadline: Duration,
) -> Result<BTreeMap<String, BehaviorManifest>, RegistryError> {
    let start = Instant::now();
    let mut found: BTreeMap<String, BehaviorManifest> = BTreeMap::new();
    let mut announcements = client.subscribe(MANIFEST_TOPIC).await?;
    let mut backoff = BACKOFF_INITIAL;
    loop {
        for name in expected {
            if found.contains_key(name) {
                continue;
            }
            let remaining = deadline.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                break;
            }
            let getter = manifest_channel(name);
            match client.call(&getter, Value::Null, CALL_TIMEOUT.min(remaining)).await {
                Ok(value) => {
                    let m = manifest_from_value(value)?;
                    if m.skillset != *name {
                        return Err(RegistryError::WrongSkillset {
                            skillset: name.clone(),
                            found: m.skillset,
                        });
                    }
                    debug!(skillset = %name, "manifest fetched");
                    found.insert(name.clone(), m);
                }
                // Not exported yet, or mid-restart; both are what the retry
                // loop is for.
                Err(
                    BusError::NoSuchService { .. }
                    | BusError::Timeout { .. }
                    | BusError::ServiceLost { .. },
                ) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if found.len() == expected.len() {
            return Ok(found);
        }
        let elapsed = start.elapsed();
        if elapsed >= deadline {
            let missing =
                expected.iter().filter(|n| !found.contains_key(*n)).cloned().collect();
            return Err(RegistryError::Readiness { missing });
        }
        // Sleep out the backoff, but accept announcements as they land.
        let nap_end = Instant::now() + backoff.min(deadline - elapsed);
        loop {
            let nap = nap_end.saturating_duration_since(Instant::now());
            if nap.is_zero() || found.len() == expected.len() {
                break;
            }
            match announcements.next(nap).await {
                Ok(env) => match manifest_from_value(env.data) {
                    Ok(m) if expected.contains(&m.skillset) => {
                        debug!(skillset = %m.skillset, "manifest announced");
                        found.insert(m.skillset.clone(), m);
                    }
                    Ok(_) => {}
                    // Unparseable announcements are not fatal here; if the
                    // sender is one we expect, its getter will surface the
                    // authoritative error.
                    Err(e) => warn!(error = %e, "ignoring bad manifest announcement"),
                },
                Err(BusError::Timeout { .. }) => break,
                Err(e) => return Err(e.into()),
            }
        }
        backoff = (backoff * 2).min(BACKOFF_CAP);
    }
}
