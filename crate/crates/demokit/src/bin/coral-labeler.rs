//! Skillset serving LabelSnapshot: deterministic mock point classification.

use coral_demokit::boot::{boot, idle_until_stopped, init_logging};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("labeler").await?;
    let _server = coral_demokit::labeler::serve(&b.client, &b.name).await?;
    tracing::info!("labeler up as {}", b.name);
    idle_until_stopped().await;
    Ok(())
}
