//! Operator stand-in: publishes ui/stop after the points stream goes quiet.
//!
//! Params: quiet_ms (default 1500).

use std::time::Duration;

use coral_demokit::boot::{boot, idle_until_stopped, init_logging};
use coral_demokit::stop::stop_after_quiet;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("stop_ui").await?;
    let quiet = Duration::from_millis(b.u64_param("quiet_ms", 1500));
    stop_after_quiet(&b.client, quiet).await?;
    tracing::info!("stream quiet for {quiet:?}, stop published");
    idle_until_stopped().await;
    Ok(())
}
