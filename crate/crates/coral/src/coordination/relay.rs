//! Cross-instance signal bridging. Each instance has its own broker; a relay
//! connects two of them and forwards `coral/coord/*` publications. Every
//! channel is forwarded in exactly one direction, which rules out echo loops
//! by construction.

use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::COORD_PREFIX;
use crate::bus::{BusClient, BusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayDirection {
    ToRemote,
    ToLocal,
}

#[derive(Debug, Clone)]
pub struct RelayRoute {
    /// Full channel name; must live under `coral/coord/`.
    pub channel: String,
    pub direction: RelayDirection,
}

/// Starts one forwarding task per route and returns their handles; dropping
/// or aborting them stops the relay. Payloads cross unchanged, so sender
/// identity and sequence numbers survive the hop.
pub async fn relay_coord_channels(
    local: &BusClient,
    remote: &BusClient,
    routes: &[RelayRoute],
) -> Result<Vec<JoinHandle<()>>, BusError> {
    let prefix = format!("{COORD_PREFIX}/");
    let mut tasks = Vec::with_capacity(routes.len());
    for route in routes {
        if !route.channel.starts_with(&prefix) {
            return Err(BusError::InvalidChannel { ch: route.channel.clone() });
        }
        let (src, dst) = match route.direction {
            RelayDirection::ToRemote => (local, remote),
            RelayDirection::ToLocal => (remote, local),
        };
        let mut sub = src.subscribe(&route.channel).await?;
        let dst = dst.clone();
        let ch = route.channel.clone();
        tasks.push(tokio::spawn(async move {
            while let Ok(env) = sub.recv().await {
                if let Err(e) = dst.publish(&ch, env.data) {
                    warn!(channel = %ch, error = %e, "relay publish failed; stopping route");
                    break;
                }
                // Coordination signals are sparse and load-bearing; confirm
                // each one so a relay shutdown cannot strand a queued frame.
                if let Err(e) = dst.flush().await {
                    warn!(channel = %ch, error = %e, "relay flush failed; stopping route");
                    break;
                }
                debug!(channel = %ch, "relayed");
            }
        }));
    }
    Ok(tasks)
}
