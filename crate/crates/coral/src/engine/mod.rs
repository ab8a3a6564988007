//! Tick-based execution of an expanded tree. The engine is synchronous: one
//! logical ticking task drives a [`TreeRuntime`], leaves may run work on
//! other tasks but report status only at tick boundaries. Leaf
//! implementations are supplied through [`LeafBindings`]; the four builtin
//! node kinds (AlwaysSuccess, AlwaysFailure, Sleep, SetBlackboard) need none.

mod blackboard;
mod runtime;

pub use runtime::{create_runtime, TreeRuntime};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::btxml::Diagnostic;

/// Default Executor tick period; configurable per instance.
pub const DEFAULT_TICK_PERIOD: Duration = Duration::from_millis(50);

/// Node status after a tick. Idle means never ticked or halted; a leaf tick
/// must return one of the other three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TickStatus {
    #[default]
    Idle,
    Running,
    Success,
    Failure,
}

impl TickStatus {
    pub fn is_done(self) -> bool {
        matches!(self, TickStatus::Success | TickStatus::Failure)
    }
}

impl std::fmt::Display for TickStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TickStatus::Idle => "idle",
            TickStatus::Running => "running",
            TickStatus::Success => "success",
            TickStatus::Failure => "failure",
        })
    }
}

/// What a leaf sees while being ticked: its port attributes resolved against
/// the blackboard scope it lives in, plus a diagnostics sink.
pub struct LeafCtx<'a> {
    pub(crate) attrs: &'a BTreeMap<String, String>,
    pub(crate) scope: usize,
    pub(crate) bb: &'a mut blackboard::Blackboard,
    pub(crate) path: &'a str,
    pub(crate) tick: u64,
    pub(crate) events: &'a mut EventLog,
}

impl LeafCtx<'_> {
    /// Resolved value of an input port. A `{key}` attribute reads the
    /// blackboard; a literal parses as JSON, falling back to a plain string.
    /// Absent port and absent blackboard key both yield None.
    pub fn input(&self, port: &str) -> Option<Value> {
        let raw = self.attrs.get(port)?;
        match crate::btxml::blackboard_ref(raw) {
            Some(key) => self.bb.read(self.scope, key).cloned(),
            None => Some(literal_value(raw)),
        }
    }

    /// Raw attribute text, unresolved.
    pub fn attr(&self, port: &str) -> Option<&str> {
        self.attrs.get(port).map(String::as_str)
    }

    /// Writes through an output port. The port must be wired to a `{key}`;
    /// an unwired or literal-wired port drops the value with a diagnostic.
    pub fn set_output(&mut self, port: &str, value: Value) {
        match self.attrs.get(port) {
            Some(raw) => match crate::btxml::blackboard_ref(raw) {
                Some(key) => self.bb.write(self.scope, key, value),
                None => self.record_error(format!(
                    "output port {port:?} is wired to literal {raw:?}; value dropped"
                )),
            },
            None => {}
        }
    }

    /// Records a transport-level or behavior-level error without failing the
    /// tick; the leaf still decides its own status.
    pub fn record_error(&mut self, message: impl Into<String>) {
        self.events.push(self.tick, self.path, message.into());
    }

    pub fn node_path(&self) -> &str {
        self.path
    }
}

/// A bound behavior ticked by the engine. `halt` is delivered only while the
/// leaf is Running and must cancel any in-flight work.
pub trait BehaviorLeaf: Send {
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus;
    fn halt(&mut self) {}
}

/// Construction-time view of a leaf node handed to its factory.
pub struct LeafInfo<'a> {
    pub name: &'a str,
    pub path: &'a str,
    pub attrs: &'a BTreeMap<String, String>,
    pub is_condition: bool,
}

type Factory = Box<dyn Fn(LeafInfo<'_>) -> Box<dyn BehaviorLeaf> + Send + Sync>;

/// Map from behavior name to leaf factory. Each tree position gets its own
/// leaf instance so per-position state (in-flight calls) stays isolated.
#[derive(Default)]
pub struct LeafBindings {
    factories: BTreeMap<String, Factory>,
}

impl LeafBindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a factory; rebinding a name replaces the previous factory.
    /// Callers that need conflict detection check [`contains`] first.
    ///
    /// [`contains`]: LeafBindings::contains
    pub fn bind<F>(&mut self, name: impl Into<String>, factory: F) -> &mut Self
    where
        F: Fn(LeafInfo<'_>) -> Box<dyn BehaviorLeaf> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
        self
    }

    /// Stateless leaf from a plain tick function.
    pub fn bind_fn<F>(&mut self, name: impl Into<String>, tick: F) -> &mut Self
    where
        F: Fn(&mut LeafCtx<'_>) -> TickStatus + Send + Sync + 'static,
    {
        let tick = Arc::new(tick);
        self.bind(name, move |_| Box::new(FnLeaf(tick.clone())))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.factories.keys().cloned().collect()
    }

    pub(crate) fn instantiate(&self, info: LeafInfo<'_>) -> Option<Box<dyn BehaviorLeaf>> {
        self.factories.get(info.name).map(|f| f(info))
    }
}

impl std::fmt::Debug for LeafBindings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LeafBindings").field("names", &self.names()).finish()
    }
}

struct FnLeaf<F>(Arc<F>);

impl<F> BehaviorLeaf for FnLeaf<F>
where
    F: Fn(&mut LeafCtx<'_>) -> TickStatus + Send + Sync,
{
    fn tick(&mut self, ctx: &mut LeafCtx<'_>) -> TickStatus {
        (self.0)(ctx)
    }
}

/// Runtime diagnostic. Ticking never throws; leaf errors and engine
/// oddities land here instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineEvent {
    pub tick: u64,
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for EngineEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tick {} {}: {}", self.tick, self.path, self.message)
    }
}

/// Capped event buffer; the ticking loop is expected to drain it.
#[derive(Debug, Default)]
pub(crate) struct EventLog {
    events: Vec<EngineEvent>,
    dropped: u64,
}

const EVENT_CAP: usize = 1024;

impl EventLog {
    pub(crate) fn push(&mut self, tick: u64, path: &str, message: String) {
        if self.events.len() >= EVENT_CAP {
            self.dropped += 1;
            return;
        }
        self.events.push(EngineEvent { tick, path: path.to_string(), message });
    }

    pub(crate) fn take(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("tree has unexpanded subtree references; expand before running")]
    NotExpanded,
    #[error("tree failed validation: {}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("no binding for leaves: {}", .names.join(", "))]
    UnboundLeaves { names: Vec<String> },
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Literal attribute text as a JSON value: numbers, booleans and structured
/// literals parse, everything else is a string.
pub(crate) fn literal_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
