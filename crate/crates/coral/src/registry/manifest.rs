//! The manifest document itself: JSON schema, round-trip codecs, and
//! validation of the intra-manifest invariants.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RegistryError;
use crate::btxml::blackboard_ref;
use crate::bus::valid_channel;

/// The only manifest schema this build understands.
pub const MANIFEST_VERSION: u64 = 1;

pub const DEFAULT_SERVICE_TIMEOUT_MS: u64 = 5_000;

/// Everything an executor needs to invoke one skillset's behaviors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorManifest {
    pub manifest_version: u64,
    /// Component name of the exporting skillset.
    pub skillset: String,
    pub behaviors: Vec<BehaviorDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorDecl {
    /// Leaf name as written in tree XML.
    pub name: String,
    pub kind: BehaviorKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ports: Vec<PortDecl>,
    pub binding: Binding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Action,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDecl {
    pub name: String,
    pub direction: PortDirection,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub doc: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    In,
    Out,
}

/// How a behavior reaches its skillset over the bus. Externally tagged so
/// each variant polices its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Service(ServiceBinding),
    Publish(PublishBinding),
    PollTopic(PollTopicBinding),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceBinding {
    pub channel: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Request body. String values of the form `"{port}"` are replaced by
    /// that input port's resolved value at tick time.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub request: Value,
    /// Reply field -> output port.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub response: BTreeMap<String, String>,
    /// Reply field deciding tick status: "success" or "failure". Unset, or
    /// absent from a reply, means any reply counts as success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_field: Option<String>,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_SERVICE_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishBinding {
    pub channel: String,
    /// Payload template, substituted like a service request.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollTopicBinding {
    pub channel: String,
    /// Condition holds iff this field is truthy in the latest message.
    pub field: String,
}

impl Binding {
    pub fn channel(&self) -> &str {
        match self {
            Binding::Service(b) => &b.channel,
            Binding::Publish(b) => &b.channel,
            Binding::PollTopic(b) => &b.channel,
        }
    }
}

pub fn manifest_serialize(m: &BehaviorManifest) -> String {
    let mut text = serde_json::to_string_pretty(m).expect("manifest types serialize");
    text.push('\n');
    text
}

/// Parses and validates. Schema violations carry the offending field path.
pub fn manifest_parse(text: &str) -> Result<BehaviorManifest, RegistryError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let m: BehaviorManifest = serde_path_to_error::deserialize(de).map_err(schema_err)?;
    validate_manifest(&m)?;
    Ok(m)
}

/// Same as [`manifest_parse`] but from an already-decoded bus payload.
pub fn manifest_from_value(value: Value) -> Result<BehaviorManifest, RegistryError> {
    let m: BehaviorManifest = serde_path_to_error::deserialize(value).map_err(schema_err)?;
    validate_manifest(&m)?;
    Ok(m)
}

fn schema_err<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> RegistryError {
    RegistryError::Schema { path: e.path().to_string(), detail: e.inner().to_string() }
}

/// Component names double as channel segments, so the channel charset applies.
pub fn valid_component_name(name: &str) -> bool {
    !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

pub fn validate_manifest(m: &BehaviorManifest) -> Result<(), RegistryError> {
    if m.manifest_version != MANIFEST_VERSION {
        return Err(RegistryError::Version { found: m.manifest_version });
    }
    if !valid_component_name(&m.skillset) {
        return Err(RegistryError::SkillsetName { name: m.skillset.clone() });
    }
    let mut seen = BTreeSet::new();
    for decl in &m.behaviors {
        if !seen.insert(decl.name.as_str()) {
            return Err(RegistryError::DuplicateBehavior {
                skillset: m.skillset.clone(),
                name: decl.name.clone(),
            });
        }
        validate_decl(&m.skillset, decl)?;
    }
    Ok(())
}

fn validate_decl(skillset: &str, decl: &BehaviorDecl) -> Result<(), RegistryError> {
    let at = |channel: &str| RegistryError::BadChannel {
        skillset: skillset.to_string(),
        behavior: decl.name.clone(),
        channel: channel.to_string(),
    };
    if !valid_channel(decl.binding.channel()) {
        return Err(at(decl.binding.channel()));
    }
    let ins: BTreeSet<&str> = decl
        .ports
        .iter()
        .filter(|p| p.direction == PortDirection::In)
        .map(|p| p.name.as_str())
        .collect();
    let outs: BTreeSet<&str> = decl
        .ports
        .iter()
        .filter(|p| p.direction == PortDirection::Out)
        .map(|p| p.name.as_str())
        .collect();
    match &decl.binding {
        Binding::Service(svc) => {
            check_template_refs(skillset, decl, &svc.request, &ins)?;
            for port in svc.response.values() {
                if !outs.contains(port.as_str()) {
                    return Err(RegistryError::ResponsePort {
                        skillset: skillset.to_string(),
                        behavior: decl.name.clone(),
                        port: port.clone(),
                    });
                }
            }
        }
        Binding::Publish(publish) => {
            if decl.kind == BehaviorKind::Condition {
                return Err(RegistryError::ConditionBinding {
                    skillset: skillset.to_string(),
                    behavior: decl.name.clone(),
                });
            }
            check_template_refs(skillset, decl, &publish.payload, &ins)?;
        }
        Binding::PollTopic(poll) => {
            if poll.field.is_empty() {
                return Err(RegistryError::EmptyField {
                    skillset: skillset.to_string(),
                    behavior: decl.name.clone(),
                });
            }
        }
    }
    Ok(())
}

fn check_template_refs(
    skillset: &str,
    decl: &BehaviorDecl,
    template: &Value,
    ins: &BTreeSet<&str>,
) -> Result<(), RegistryError> {
    let mut refs = BTreeSet::new();
    collect_refs(template, &mut refs);
    for port in refs {
        if !ins.contains(port) {
            return Err(RegistryError::TemplateRef {
                skillset: skillset.to_string(),
                behavior: decl.name.clone(),
                port: port.to_string(),
            });
        }
    }
    Ok(())
}

fn collect_refs<'v>(value: &'v Value, out: &mut BTreeSet<&'v str>) {
    match value {
        Value::String(s) => {
            if let Some(port) = blackboard_ref(s) {
                out.insert(port);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| collect_refs(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_refs(v, out)),
        _ => {}
    }
}
