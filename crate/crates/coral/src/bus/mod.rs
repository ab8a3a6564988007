//! Broker-based message bus: one TCP broker per system instance, any number
//! of client sessions speaking length-prefixed JSON envelopes.
//!
//! Messaging patterns: fire-and-forget publish/subscribe on exact-match
//! channels, and correlated call/response against registered services. The
//! broker keeps per-publisher FIFO order per subscriber and never merges or
//! reorders a session's frames.

mod broker;
mod client;
mod envelope;

pub use broker::{BrokerHandle, DEFAULT_BUS_ADDR};
pub use client::{BusClient, ServiceHandle, Subscription};
pub use envelope::{
    decode_frame, encode_frame, valid_channel, Decoded, Envelope, Op, MAX_FRAME_LEN,
    PROTOCOL_VERSION,
};

use thiserror::Error;

/// Errors shared by the codec, broker, and client sessions.
#[derive(Debug, Error)]
pub enum BusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {len} bytes exceeds the 16 MiB limit")]
    FrameTooLarge { len: usize },
    #[error("bad frame json: {0}")]
    Json(String),
    #[error("unsupported protocol version {v}")]
    BadVersion { v: u8 },
    #[error("invalid channel name {ch:?}")]
    InvalidChannel { ch: String },
    #[error("client id {id:?} already connected")]
    IdTaken { id: String },
    #[error("no service registered on {ch:?}")]
    NoSuchService { ch: String },
    #[error("service on {ch:?} already registered by another session")]
    ServiceTaken { ch: String },
    #[error("service on {ch:?} disconnected before replying")]
    ServiceLost { ch: String },
    #[error("call on {ch:?} timed out")]
    Timeout { ch: String },
    #[error("peer error: {reason}")]
    Remote { reason: String },
    #[error("session closed")]
    Closed,
}

/// Reason strings carried in broker ERR envelopes.
pub(crate) mod reason {
    pub const NO_SUCH_SERVICE: &str = "no_such_service";
    pub const SERVICE_TAKEN: &str = "service_taken";
    pub const SERVICE_LOST: &str = "service_lost";
    pub const ID_TAKEN: &str = "id_taken";
    pub const INVALID_CHANNEL: &str = "invalid_channel";
    pub const PROTOCOL: &str = "protocol";
}

impl BusError {
    /// Maps a broker ERR reason back to a typed error.
    pub(crate) fn from_reason(reason: &str, ch: &str) -> BusError {
        match reason {
            reason::NO_SUCH_SERVICE => BusError::NoSuchService { ch: ch.to_string() },
            reason::SERVICE_TAKEN => BusError::ServiceTaken { ch: ch.to_string() },
            reason::SERVICE_LOST => BusError::ServiceLost { ch: ch.to_string() },
            reason::ID_TAKEN => BusError::IdTaken { id: ch.to_string() },
            reason::INVALID_CHANNEL => BusError::InvalidChannel { ch: ch.to_string() },
            other => BusError::Remote { reason: other.to_string() },
        }
    }
}
