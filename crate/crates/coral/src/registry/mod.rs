//! Runtime capability discovery. A skillset describes its behaviors in a
//! manifest and exports it over the bus; an executor fetches the manifests
//! named by its compose file and binds tree leaves from them. The two sides
//! meet only at runtime: the executor carries no compiled-in knowledge of any
//! behavior it ends up running.

mod discover;
mod leaves;
mod manifest;

pub use discover::{
    export_manifest, fetch_manifests, manifest_channel, FETCH_DEADLINE, MANIFEST_TOPIC,
};
pub use leaves::bind_leaves;
pub use manifest::{
    manifest_from_value, manifest_parse, manifest_serialize, valid_component_name,
    validate_manifest, BehaviorDecl, BehaviorKind, BehaviorManifest, Binding, PollTopicBinding,
    PortDecl, PortDirection, PublishBinding, ServiceBinding, DEFAULT_SERVICE_TIMEOUT_MS,
    MANIFEST_VERSION,
};

use thiserror::Error;

use crate::bus::BusError;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("manifest schema violation at {path}: {detail}")]
    Schema { path: String, detail: String },
    #[error("unsupported manifest_version {found} (this build understands {MANIFEST_VERSION})")]
    Version { found: u64 },
    #[error("skillset name {name:?} is not a valid component name")]
    SkillsetName { name: String },
    #[error("skillset {skillset}: behavior {name:?} declared twice")]
    DuplicateBehavior { skillset: String, name: String },
    #[error("skillset {skillset}, behavior {behavior}: invalid bus channel {channel:?}")]
    BadChannel { skillset: String, behavior: String, channel: String },
    #[error(
        "skillset {skillset}, behavior {behavior}: a condition binds poll_topic or service, not publish"
    )]
    ConditionBinding { skillset: String, behavior: String },
    #[error(
        "skillset {skillset}, behavior {behavior}: template references undeclared input port {port:?}"
    )]
    TemplateRef { skillset: String, behavior: String, port: String },
    #[error(
        "skillset {skillset}, behavior {behavior}: response maps to undeclared output port {port:?}"
    )]
    ResponsePort { skillset: String, behavior: String, port: String },
    #[error("skillset {skillset}, behavior {behavior}: poll_topic names no predicate field")]
    EmptyField { skillset: String, behavior: String },
    #[error("behavior {name:?} exported by both {first:?} and {second:?}; no silent shadowing")]
    Conflict { name: String, first: String, second: String },
    #[error("manifest discovery deadline passed; missing skillsets: {}", .missing.join(", "))]
    Readiness { missing: Vec<String> },
    #[error("getter for {skillset:?} returned a manifest naming itself {found:?}")]
    WrongSkillset { skillset: String, found: String },
    #[error(transparent)]
    Bus(#[from] BusError),
}
