//! Compose-file parsing. The file is standard compose YAML (`services`, per
//! service `command`/`image`/`environment`/`depends_on`); everything Coral
//! adds lives under `x-coral` keys so the file stays loadable by stock
//! compose tooling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::ComposeError;
use crate::bus::DEFAULT_BUS_ADDR;
use crate::registry::valid_component_name;

pub const DEFAULT_READINESS_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Executor,
    Skillset,
    Driver,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Executor => "executor",
            Role::Skillset => "skillset",
            Role::Driver => "driver",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunSpec {
    /// argv for a local process.
    Command(Vec<String>),
    /// Container image; shelled out to an external runtime.
    Image(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestartPolicy {
    #[default]
    Never,
    OnFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub name: String,
    pub role: Role,
    pub run: RunSpec,
    /// BT XML path, relative to the compose file. Executors only.
    pub tree: Option<PathBuf>,
    /// Params-file namespace; defaults to the component name.
    pub params_ns: String,
    pub env: BTreeMap<String, String>,
    pub depends_on: Vec<String>,
    pub restart: RestartPolicy,
    /// Optional pre-declared behavior names, for static tree checks.
    pub exports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub instance_id: String,
    /// Broker listen address.
    pub bus: String,
    /// Declaration order; the supervisor derives start order from
    /// depends_on.
    pub components: Vec<ComponentSpec>,
    pub params_file: Option<PathBuf>,
    pub readiness_deadline: Duration,
    pub headless: bool,
}

impl InstanceConfig {
    pub fn component(&self, name: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn skillset_names(&self) -> BTreeSet<String> {
        self.components
            .iter()
            .filter(|c| c.role == Role::Skillset)
            .map(|c| c.name.clone())
            .collect()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompose {
    /// Tolerated standard keys.
    #[serde(default)]
    version: Option<serde_yaml::Value>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default, rename = "x-coral")]
    x_coral: RawTopExt,
    #[serde(default)]
    services: BTreeMap<String, RawService>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopExt {
    instance_id: Option<String>,
    bus: Option<String>,
    readiness_deadline: Option<serde_yaml::Value>,
    #[serde(default)]
    headless: bool,
    params_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    #[serde(default)]
    command: Option<RawCommand>,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    environment: Option<RawEnv>,
    #[serde(default)]
    depends_on: Vec<String>,
    #[serde(rename = "x-coral")]
    x_coral: Option<RawServiceExt>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCommand {
    Line(String),
    Argv(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawEnv {
    Map(BTreeMap<String, serde_yaml::Value>),
    List(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawServiceExt {
    role: String,
    #[serde(default)]
    tree: Option<PathBuf>,
    #[serde(default)]
    params_ns: Option<String>,
    #[serde(default)]
    restart: Option<String>,
    #[serde(default)]
    exports: Vec<String>,
}

pub fn parse_compose(text: &str) -> Result<InstanceConfig, ComposeError> {
    let raw: RawCompose =
        serde_yaml::from_str(text).map_err(|e| ComposeError::Yaml(e.to_string()))?;
    let _ = (&raw.version, &raw.name);

    let bus = raw.x_coral.bus.unwrap_or_else(|| DEFAULT_BUS_ADDR.to_string());
    if !valid_bus_addr(&bus) {
        return Err(ComposeError::BadBusAddr { addr: bus });
    }
    let readiness_deadline = match raw.x_coral.readiness_deadline {
        Some(v) => parse_duration(&v)?,
        None => DEFAULT_READINESS_DEADLINE,
    };

    let mut components = Vec::with_capacity(raw.services.len());
    for (name, service) in raw.services {
        components.push(build_component(name, service)?);
    }

    let names: BTreeSet<&str> = components.iter().map(|c| c.name.as_str()).collect();
    for c in &components {
        for dep in &c.depends_on {
            if !names.contains(dep.as_str()) {
                return Err(ComposeError::UnknownDependency {
                    service: c.name.clone(),
                    dep: dep.clone(),
                });
            }
        }
    }
    check_acyclic(&components)?;

    let headless = raw.x_coral.headless;
    if !headless && !components.iter().any(|c| c.role == Role::Executor) {
        return Err(ComposeError::NoExecutor);
    }

    Ok(InstanceConfig {
        instance_id: raw.x_coral.instance_id.unwrap_or_else(|| "coral".to_string()),
        bus,
        components,
        params_file: raw.x_coral.params_file,
        readiness_deadline,
        headless,
    })
}

fn build_component(name: String, raw: RawService) -> Result<ComponentSpec, ComposeError> {
    if !valid_component_name(&name) {
        return Err(ComposeError::BadServiceName { service: name });
    }
    let ext = raw.x_coral.ok_or_else(|| ComposeError::MissingRole { service: name.clone() })?;
    let role = match ext.role.as_str() {
        "executor" => Role::Executor,
        "skillset" => Role::Skillset,
        "driver" => Role::Driver,
        other => {
            return Err(ComposeError::UnknownRole {
                service: name,
                role: other.to_string(),
            })
        }
    };
    let run = match (raw.command, raw.image) {
        (Some(cmd), None) => RunSpec::Command(match cmd {
            RawCommand::Argv(argv) if !argv.is_empty() => argv,
            RawCommand::Line(line) if !line.trim().is_empty() => {
                line.split_whitespace().map(str::to_string).collect()
            }
            _ => return Err(ComposeError::AmbiguousRun { service: name }),
        }),
        (None, Some(image)) => RunSpec::Image(image),
        _ => return Err(ComposeError::AmbiguousRun { service: name }),
    };
    match (role, &ext.tree) {
        (Role::Executor, None) => return Err(ComposeError::ExecutorWithoutTree { service: name }),
        (Role::Skillset | Role::Driver, Some(_)) => {
            return Err(ComposeError::TreeOnNonExecutor { service: name })
        }
        _ => {}
    }
    let restart = match ext.restart.as_deref() {
        None | Some("never") => RestartPolicy::Never,
        Some("on-failure") => RestartPolicy::OnFailure,
        Some(other) => {
            return Err(ComposeError::UnknownRestart {
                service: name,
                policy: other.to_string(),
            })
        }
    };
    let env = match raw.environment {
        None => BTreeMap::new(),
        Some(RawEnv::Map(map)) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                out.insert(k, scalar_to_string(&v)?);
            }
            out
        }
        Some(RawEnv::List(entries)) => {
            let mut out = BTreeMap::new();
            for entry in entries {
                let (k, v) = entry
                    .split_once('=')
                    .ok_or_else(|| ComposeError::BadEnvEntry { entry: entry.clone() })?;
                out.insert(k.to_string(), v.to_string());
            }
            out
        }
    };
    Ok(ComponentSpec {
        params_ns: ext.params_ns.unwrap_or_else(|| name.clone()),
        name,
        role,
        run,
        tree: ext.tree,
        env,
        depends_on: raw.depends_on,
        restart,
        exports: ext.exports,
    })
}

fn scalar_to_string(v: &serde_yaml::Value) -> Result<String, ComposeError> {
    match v {
        serde_yaml::Value::String(s) => Ok(s.clone()),
        serde_yaml::Value::Number(n) => Ok(n.to_string()),
        serde_yaml::Value::Bool(b) => Ok(b.to_string()),
        other => Err(ComposeError::BadEnvEntry { entry: format!("{other:?}") }),
    }
}

fn check_acyclic(components: &[ComponentSpec]) -> Result<(), ComposeError> {
    let index: BTreeMap<&str, usize> =
        components.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    // 0 unvisited, 1 on stack, 2 done.
    let mut state = vec![0u8; components.len()];
    fn visit(
        i: usize,
        components: &[ComponentSpec],
        index: &BTreeMap<&str, usize>,
        state: &mut [u8],
    ) -> Result<(), ComposeError> {
        match state[i] {
            1 => return Err(ComposeError::DependencyCycle { service: components[i].name.clone() }),
            2 => return Ok(()),
            _ => {}
        }
        state[i] = 1;
        for dep in &components[i].depends_on {
            visit(index[dep.as_str()], components, index, state)?;
        }
        state[i] = 2;
        Ok(())
    }
    for i in 0..components.len() {
        visit(i, components, &index, &mut state)?;
    }
    Ok(())
}

/// Start order: dependencies first, declaration order among peers.
pub(crate) fn start_order(components: &[ComponentSpec]) -> Vec<usize> {
    let index: BTreeMap<&str, usize> =
        components.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    let mut order = Vec::with_capacity(components.len());
    let mut done = vec![false; components.len()];
    fn visit(
        i: usize,
        components: &[ComponentSpec],
        index: &BTreeMap<&str, usize>,
        done: &mut [bool],
        order: &mut Vec<usize>,
    ) {
        if done[i] {
            return;
        }
        done[i] = true;
        for dep in &components[i].depends_on {
            visit(index[dep.as_str()], components, index, done, order);
        }
        order.push(i);
    }
    for i in 0..components.len() {
        visit(i, components, &index, &mut done, &mut order);
    }
    order
}

fn valid_bus_addr(addr: &str) -> bool {
    match addr.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && port.parse::<u16>().is_ok(),
        None => false,
    }
}

fn parse_duration(v: &serde_yaml::Value) -> Result<Duration, ComposeError> {
    let bad = || ComposeError::BadDuration { text: format!("{v:?}") };
    match v {
        serde_yaml::Value::Number(n) => {
            let secs = n.as_f64().ok_or_else(bad)?;
            if secs < 0.0 {
                return Err(bad());
            }
            Ok(Duration::from_secs_f64(secs))
        }
        serde_yaml::Value::String(s) => {
            let s = s.trim();
            if let Some(ms) = s.strip_suffix("ms") {
                let n: u64 = ms.trim().parse().map_err(|_| bad())?;
                Ok(Duration::from_millis(n))
            } else if let Some(secs) = s.strip_suffix('s') {
                let n: f64 = secs.trim().parse().map_err(|_| bad())?;
                if n < 0.0 {
                    return Err(bad());
                }
                Ok(Duration::from_secs_f64(n))
            } else {
                let n: f64 = s.parse().map_err(|_| bad())?;
                if n < 0.0 {
                    return Err(bad());
                }
                Ok(Duration::from_secs_f64(n))
            }
        }
        _ => Err(bad()),
    }
}

/// Resolves a path from the compose file against the compose file's
/// directory.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
