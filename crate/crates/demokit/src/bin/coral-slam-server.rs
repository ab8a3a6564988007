//! Skillset serving the map lifecycle: LoadMap, IntegrateSnapshot, SaveMap,
//! RecordLabels, CheckStop.
//!
//! Params: map_in (path, required), map_out (path, required), voxel_size
//! (accepted for config compatibility, unused by the mock).

use anyhow::Context;

use coral_demokit::boot::{boot, idle_until_stopped, init_logging};
use coral_demokit::slam::SlamParams;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("slam_server").await?;
    let params = SlamParams {
        map_in: b.str_param("map_in").context("param 'map_in' is required")?.into(),
        map_out: b.str_param("map_out").context("param 'map_out' is required")?.into(),
    };
    let _voxel_size = b.f64_param("voxel_size", 0.05);
    let _server = coral_demokit::slam::serve(&b.client, &b.name, &params).await?;
    tracing::info!("slam server up as {}", b.name);
    idle_until_stopped().await;
    Ok(())
}
