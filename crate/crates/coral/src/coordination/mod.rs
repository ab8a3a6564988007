//! Executor-to-executor coordination: fire-and-forget trigger signals, a
//! waiting leaf with a timeout, and a shared key/value store served beside
//! the broker. Triggers are not acknowledged and waits keep no history;
//! recovery from mistiming belongs in the tree, behind a Fallback.

mod leaves;
mod relay;
mod store;

pub use leaves::install_leaves;
pub use relay::{relay_coord_channels, RelayDirection, RelayRoute};
pub use store::{shared_get, shared_set, SharedStore};

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bus::{BusClient, BusError};

/// Leaf behavior names compiled into every executor.
pub const LEAF_NAMES: [&str; 4] = ["RemoteTrigger", "RemoteWait", "SharedSet", "SharedGet"];

/// Channel prefix for coordination signals.
pub const COORD_PREFIX: &str = "coral/coord";

/// Service channel of the instance-wide shared store.
pub const SHARED_CHANNEL: &str = "coral/shared";

pub fn coord_channel(name: &str) -> String {
    format!("{COORD_PREFIX}/{name}")
}

/// One signal on a `coral/coord/<name>` channel. `seq` increases strictly
/// per sender per channel, so a receiver can spot reordering or loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordSignal {
    pub payload: Value,
    pub sender: String,
    pub seq: u64,
}

/// Trigger side of coordination. One per executor; hands out the per-channel
/// sequence numbers.
#[derive(Debug)]
pub struct Coordinator {
    client: BusClient,
    sender: String,
    seqs: Mutex<BTreeMap<String, u64>>,
}

impl Coordinator {
    pub fn new(client: BusClient, sender: impl Into<String>) -> Coordinator {
        Coordinator { client, sender: sender.into(), seqs: Mutex::new(BTreeMap::new()) }
    }

    /// Publishes `payload` on `coral/coord/<name>`; returns the sequence
    /// number used. Fire and forget: delivery guarantees are bus-level only.
    pub fn trigger(&self, name: &str, payload: Value) -> Result<u64, BusError> {
        let ch = coord_channel(name);
        let seq = {
            let mut seqs = self.seqs.lock().unwrap();
            let slot = seqs.entry(ch.clone()).or_insert(0);
            *slot += 1;
            *slot
        };
        let signal = CoordSignal { payload, sender: self.sender.clone(), seq };
        self.client.publish(&ch, serde_json::to_value(&signal).expect("signal serializes"))?;
        Ok(seq)
    }
}
