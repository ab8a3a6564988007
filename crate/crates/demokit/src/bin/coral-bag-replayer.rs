//! Sensor driver stand-in: replays a recorded bag onto the points topic.
//!
//! Params: bag (path, required), rate_hz (default 5), start_delay_ms
//! (default 1500).

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;

use coral_demokit::bag::read_bag;
use coral_demokit::boot::{boot, idle_until_stopped, init_logging};
use coral_demokit::replay::replay;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("bag_replayer").await?;
    let bag: PathBuf = b.str_param("bag").context("param 'bag' is required")?.into();
    let rate_hz = b.f64_param("rate_hz", 5.0);
    let start_delay = Duration::from_millis(b.u64_param("start_delay_ms", 1500));

    let (lines, skipped) = read_bag(&bag).with_context(|| format!("bag {}", bag.display()))?;
    if skipped > 0 {
        tracing::warn!("skipped {skipped} unparseable bag lines");
    }
    tracing::info!("replaying {} lines at {rate_hz} Hz", lines.len());
    let published = replay(&b.client, &lines, rate_hz, start_delay).await?;
    tracing::info!("replay done, {published} lines published");
    idle_until_stopped().await;
    Ok(())
}
