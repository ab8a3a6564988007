//! Skillset serving GetSnapshot over the latest cached points message.

use coral_demokit::boot::{boot, idle_until_stopped, init_logging};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("raw_server").await?;
    let _server = coral_demokit::raw::serve(&b.client, &b.name).await?;
    tracing::info!("raw server up as {}", b.name);
    idle_until_stopped().await;
    Ok(())
}
