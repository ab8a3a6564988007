//! Instance composition: the compose-style file naming every component, the
//! params file carrying their runtime parameters, and the supervisor that
//! brings the whole set up and down as one unit.

mod compose;
mod params;
mod supervisor;

pub use compose::{
    parse_compose, resolve_path, ComponentSpec, InstanceConfig, RestartPolicy, Role, RunSpec,
    DEFAULT_READINESS_DEADLINE,
};
pub use params::{parse_params, ParamSet};
pub use supervisor::{
    down_instance, up_instance, ComponentState, ExitCause, ExitReport, InstanceHandle,
    InstanceOutcome, LogLine, UpError, UpOptions, MAX_RESTARTS,
};

use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes shared by the CLI, the supervisor, and executors.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_READINESS: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Environment contract between the supervisor and its children.
pub mod env_keys {
    pub const BUS_ADDR: &str = "CORAL_BUS_ADDR";
    pub const COMPONENT_NAME: &str = "CORAL_COMPONENT_NAME";
    pub const PARAMS: &str = "CORAL_PARAMS";
    pub const TREE_PATH: &str = "CORAL_TREE_PATH";
    pub const INSTANCE_ID: &str = "CORAL_INSTANCE_ID";
    /// Comma-separated skillset names the executor must wait for.
    pub const EXPECTED_SKILLSETS: &str = "CORAL_EXPECTED_SKILLSETS";
    pub const READINESS_DEADLINE_MS: &str = "CORAL_READINESS_DEADLINE_MS";
}

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("yaml: {0}")]
    Yaml(String),
    #[error("compose document must be a mapping")]
    NotAMapping,
    #[error("service {service}: missing x-coral.role")]
    MissingRole { service: String },
    #[error("service {service}: unknown role {role:?} (executor, skillset or driver)")]
    UnknownRole { service: String, role: String },
    #[error("service {service}: name must match [a-z0-9_]+")]
    BadServiceName { service: String },
    #[error("service {service}: executors need x-coral.tree")]
    ExecutorWithoutTree { service: String },
    #[error("service {service}: only executors take x-coral.tree")]
    TreeOnNonExecutor { service: String },
    #[error("service {service}: exactly one of command or image")]
    AmbiguousRun { service: String },
    #[error("service {service}: unknown restart policy {policy:?} (never or on-failure)")]
    UnknownRestart { service: String, policy: String },
    #[error("service {service}: depends_on names unknown service {dep:?}")]
    UnknownDependency { service: String, dep: String },
    #[error("dependency cycle through {service}")]
    DependencyCycle { service: String },
    #[error("no executor declared and x-coral.headless is not set")]
    NoExecutor,
    #[error("bus address {addr:?} is not host:port")]
    BadBusAddr { addr: String },
    #[error("bad duration {text:?} (number of seconds, or \"500ms\"/\"30s\")")]
    BadDuration { text: String },
    #[error("environment entry {entry:?} is not KEY=VALUE")]
    BadEnvEntry { entry: String },
    #[error("params document must be a mapping of component names")]
    ParamsNotAMapping,
    #[error("params for {component}: expected a `parameters` or `ros__parameters` mapping")]
    ParamsMissingWrapper { component: String },
    #[error("params for {component}: both parameter spellings present")]
    ParamsDoubleWrapper { component: String },
    #[error("params for {component}: key {key:?} must match [A-Za-z0-9_.]+")]
    BadParamKey { component: String, key: String },
    #[error("params for {component}: unsupported value under {key:?}")]
    BadParamValue { component: String, key: String },
    #[error("file {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}
