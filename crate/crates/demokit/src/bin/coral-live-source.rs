//! Sensor driver stand-in: synthesizes a seeded scan stream instead of
//! replaying a file. Same params namespace as the bag replayer so the two
//! are swappable without touching anything but the compose file; a 'bag'
//! param, if present, is ignored.
//!
//! Params: rate_hz (default 5), start_delay_ms (default 1500), lines
//! (default 50), seed (default 7).

use std::time::Duration;

use coral_demokit::bag::gen_bag;
use coral_demokit::boot::{boot, idle_until_stopped, init_logging};
use coral_demokit::replay::replay;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("live_source").await?;
    let rate_hz = b.f64_param("rate_hz", 5.0);
    let start_delay = Duration::from_millis(b.u64_param("start_delay_ms", 1500));
    let lines = b.u64_param("lines", 50) as usize;
    let seed = b.u64_param("seed", 7);

    let scans = gen_bag(seed, lines);
    tracing::info!("streaming {lines} synthetic scans at {rate_hz} Hz (seed {seed})");
    let published = replay(&b.client, &scans, rate_hz, start_delay).await?;
    tracing::info!("stream done, {published} scans published");
    idle_until_stopped().await;
    Ok(())
}
