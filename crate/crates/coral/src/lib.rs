//! Coral is a toolkit for composing robotic software out of independently
//! developed processes. Components discover each other's capabilities over a
//! lightweight message bus at runtime, an executor drives a behavior tree
//! whose leaves bind to those capabilities, and a supervisor brings whole
//! systems up and down from declarative config files.
//!
//! The crate is organized around six concerns:
//!
//! - [`bus`]: length-prefixed JSON framing, a TCP broker, and client sessions
//!   with publish/subscribe and call/response.
//! - [`btxml`]: parsing, validation, subtree expansion, and serialization of
//!   the behavior-tree XML dialect.
//! - [`engine`]: the tick engine itself, with blackboard scoping and halt
//!   propagation.
//! - [`registry`]: behavior manifests, runtime capability discovery, and the
//!   binding of manifest entries to executable tree leaves.
//! - [`coordination`]: decentralized executor-to-executor signaling and the
//!   shared key/value store.
//! - [`composer`]: compose/params file parsing and instance supervision.

pub mod btxml;
pub mod bus;
pub mod composer;
pub mod coordination;
pub mod engine;
pub mod registry;
