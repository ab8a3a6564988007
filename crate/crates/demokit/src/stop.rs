//! Stand-in for an operator pressing stop: watches the points stream and
//! publishes a stop once it goes quiet. The quiet timer arms only after the
//! first message, so a slow-starting source cannot trip it.

use std::time::Duration;

use serde_json::json;

use coral::bus::{BusClient, BusError};

use crate::raw::POINTS_TOPIC;
use crate::slam::STOP_TOPIC;

pub async fn stop_after_quiet(client: &BusClient, quiet: Duration) -> Result<(), BusError> {
    let mut sub = client.subscribe(POINTS_TOPIC).await?;
    sub.recv().await?;
    loop {
        match sub.next(quiet).await {
            Ok(_) => continue,
            Err(BusError::Timeout { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    client.publish(STOP_TOPIC, json!({"stop": true}))
}
