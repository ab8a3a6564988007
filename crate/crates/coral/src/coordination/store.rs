//! The instance-wide shared key/value store: one service on `coral/shared`,
//! registered by the supervisor beside the broker so last-writer-wins has a
//! single authority per instance.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::SHARED_CHANNEL;
use crate::bus::{BusClient, BusError, ServiceHandle};

/// Client-side call budget for store operations.
pub(crate) const SHARED_CALL_TIMEOUT: Duration = Duration::from_secs(2);

/// Retained key/value map behind the `coral/shared` service. Request JSON:
/// `{"op": "set", "key": k, "value": v}` or `{"op": "get", "key": k}`.
#[derive(Debug, Default)]
pub struct SharedStore {
    values: Arc<Mutex<BTreeMap<String, Value>>>,
}

impl SharedStore {
    pub fn new() -> SharedStore {
        SharedStore::default()
    }

    /// Registers the store service on `client`'s session. The handle keeps
    /// the registration alive; mutations serialize on the store's lock.
    pub async fn serve(&self, client: &BusClient) -> Result<ServiceHandle, BusError> {
        let values = self.values.clone();
        client
            .serve(SHARED_CHANNEL, move |req| {
                let values = values.clone();
                async move { handle_request(&values, req) }
            })
            .await
    }

    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.values.lock().unwrap().clone()
    }
}

fn handle_request(values: &Mutex<BTreeMap<String, Value>>, req: Value) -> Value {
    let key = req.get("key").and_then(Value::as_str);
    match (req.get("op").and_then(Value::as_str), key) {
        (Some("set"), Some(key)) => {
            let value = req.get("value").cloned().unwrap_or(Value::Null);
            values.lock().unwrap().insert(key.to_string(), value);
            json!({"status": "success"})
        }
        (Some("get"), Some(key)) => match values.lock().unwrap().get(key) {
            Some(value) => json!({"status": "success", "value": value}),
            None => json!({"status": "failure", "reason": "unset"}),
        },
        _ => json!({"status": "failure", "reason": "bad_request"}),
    }
}

/// Writes `key` in the instance's shared store.
pub async fn shared_set(client: &BusClient, key: &str, value: Value) -> Result<(), BusError> {
    let req = json!({"op": "set", "key": key, "value": value});
    let reply = client.call(SHARED_CHANNEL, req, SHARED_CALL_TIMEOUT).await?;
    match reply.get("status").and_then(Value::as_str) {
        Some("success") => Ok(()),
        other => Err(BusError::Remote { reason: format!("shared set rejected: {other:?}") }),
    }
}

/// Reads `key`; `Ok(None)` when the key was never set.
pub async fn shared_get(client: &BusClient, key: &str) -> Result<Option<Value>, BusError> {
    let req = json!({"op": "get", "key": key});
    let reply = client.call(SHARED_CHANNEL, req, SHARED_CALL_TIMEOUT).await?;
    match reply.get("status").and_then(Value::as_str) {
        Some("success") => Ok(Some(reply.get("value").cloned().unwrap_or(Value::Null))),
        Some("failure") => Ok(None),
        other => Err(BusError::Remote { reason: format!("shared get rejected: {other:?}") }),
    }
}
