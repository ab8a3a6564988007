//! Skillset serving MockCoverage and SafeIdle.
//!
//! Params: report_out (path, required).

use anyhow::Context;

use coral_demokit::boot::{boot, idle_until_stopped, init_logging};
use coral_demokit::coverage::CoverageParams;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let b = boot("coverage_server").await?;
    let params = CoverageParams {
        report_out: b.str_param("report_out").context("param 'report_out' is required")?.into(),
    };
    let _server = coral_demokit::coverage::serve(&b.client, &b.name, &params).await?;
    tracing::info!("coverage server up as {}", b.name);
    idle_until_stopped().await;
    Ok(())
}
