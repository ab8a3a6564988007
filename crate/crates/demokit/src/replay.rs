//! Publishes recorded sensor lines onto the bus at a fixed rate.

use std::time::Duration;

use tokio::time::MissedTickBehavior;

use coral::bus::{BusClient, BusError};

use crate::bag::BagLine;
use crate::raw::POINTS_TOPIC;

/// Publishes every line on the points topic. First line goes out after
/// `start_delay`, then one line per 1/rate_hz. Returns the publish count.
pub async fn replay(
    client: &BusClient,
    lines: &[BagLine],
    rate_hz: f64,
    start_delay: Duration,
) -> Result<usize, BusError> {
    assert!(rate_hz > 0.0, "replay rate must be positive");
    tokio::time::sleep(start_delay).await;
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / rate_hz));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut published = 0;
    for line in lines {
        ticker.tick().await;
        client.publish(POINTS_TOPIC, serde_json::to_value(line).expect("bag line serializes"))?;
        published += 1;
    }
    Ok(published)
}
