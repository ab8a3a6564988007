use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::blackboard::Blackboard;
use super::{
    literal_value, BehaviorLeaf, EngineError, EngineEvent, EventLog, LeafBindings, LeafCtx,
    LeafInfo, TickStatus,
};
use crate::btxml::{blackboard_ref, validate_tree, NodeKind, NodeSpec, TreeSpec};

/// Per-node execution strategy, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exec {
    MemorySequence,
    MemoryFallback,
    ReactiveSequence,
    ReactiveFallback,
    Parallel,
    Inverter,
    Retry,
    Repeat,
    Timeout,
    KeepRunning,
    /// Expanded subtree boundary: one child, own blackboard scope.
    Scope,
    Leaf,
    AlwaysSuccess,
    AlwaysFailure,
    Sleep,
    SetBlackboard,
}

fn exec_of(kind: &NodeKind) -> Exec {
    match kind {
        NodeKind::Sequence => Exec::MemorySequence,
        NodeKind::Fallback => Exec::MemoryFallback,
        NodeKind::ReactiveSequence => Exec::ReactiveSequence,
        NodeKind::ReactiveFallback => Exec::ReactiveFallback,
        NodeKind::Parallel => Exec::Parallel,
        NodeKind::Inverter => Exec::Inverter,
        NodeKind::Retry => Exec::Retry,
        NodeKind::Repeat => Exec::Repeat,
        NodeKind::Timeout => Exec::Timeout,
        NodeKind::KeepRunningUntilFailure => Exec::KeepRunning,
        NodeKind::SubTree { .. } => Exec::Scope,
        NodeKind::Action { .. } | NodeKind::Condition { .. } => Exec::Leaf,
        NodeKind::AlwaysSuccess => Exec::AlwaysSuccess,
        NodeKind::AlwaysFailure => Exec::AlwaysFailure,
        NodeKind::Sleep => Exec::Sleep,
        NodeKind::SetBlackboard => Exec::SetBlackboard,
    }
}

struct RtNode {
    exec: Exec,
    attrs: BTreeMap<String, String>,
    children: Vec<usize>,
    scope: usize,
    path: String,
    status: TickStatus,
    /// Memory composite resume position.
    cursor: usize,
    /// Retry attempts or Repeat cycles within the current activation.
    attempts: u64,
    /// Timeout and Sleep deadline for the current activation.
    deadline: Option<Instant>,
    leaf: Option<Box<dyn BehaviorLeaf>>,
}

/// An executable tree instance. One logical task ticks it; leaves may run
/// asynchronous work elsewhere but report status only from `tick`.
pub struct TreeRuntime {
    nodes: Vec<RtNode>,
    bb: Blackboard,
    tick_period: Duration,
    ticks: u64,
    events: EventLog,
}

/// Builds a runtime with every node Idle. The spec must be expanded, pass
/// validation against the bound behavior names, and every leaf (including
/// the builtin coordination names) must have a factory.
pub fn create_runtime(
    spec: &TreeSpec,
    bindings: &LeafBindings,
    tick_period: Duration,
) -> Result<TreeRuntime, EngineError> {
    if !spec.is_expanded() {
        return Err(EngineError::NotExpanded);
    }
    let diags = validate_tree(spec, Some(&bindings.names()));
    if !diags.is_empty() {
        return Err(EngineError::Invalid(diags));
    }
    let mut unbound: Vec<String> = spec
        .main_tree()
        .leaf_names()
        .into_iter()
        .filter(|name| !bindings.contains(name))
        .collect();
    unbound.sort();
    unbound.dedup();
    if !unbound.is_empty() {
        return Err(EngineError::UnboundLeaves { names: unbound });
    }

    let mut rt = TreeRuntime {
        nodes: Vec::new(),
        bb: Blackboard::new(),
        tick_period,
        ticks: 0,
        events: EventLog::default(),
    };
    rt.build(spec.main_tree(), spec.main_tree_id.clone(), 0, bindings);
    Ok(rt)
}

impl TreeRuntime {
    fn build(&mut self, node: &NodeSpec, path: String, scope: usize, bindings: &LeafBindings) {
        let idx = self.nodes.len();
        self.nodes.push(RtNode {
            exec: exec_of(&node.kind),
            attrs: node.attrs.clone(),
            children: Vec::new(),
            scope,
            path,
            status: TickStatus::Idle,
            cursor: 0,
            attempts: 0,
            deadline: None,
            leaf: None,
        });

        let child_scope = match node.kind {
            NodeKind::SubTree { .. } => self.bb.push_scope(scope, &node.attrs),
            _ => scope,
        };

        let mut children = Vec::with_capacity(node.children.len());
        for (i, child) in node.children.iter().enumerate() {
            let child_path = format!("{}/{}[{i}]", self.nodes[idx].path, child.kind.tag());
            children.push(self.nodes.len());
            self.build(child, child_path, child_scope, bindings);
        }
        self.nodes[idx].children = children;

        if let NodeKind::Action { name } | NodeKind::Condition { name } = &node.kind {
            let info = LeafInfo {
                name,
                path: &self.nodes[idx].path,
                attrs: &node.attrs,
                is_condition: matches!(node.kind, NodeKind::Condition { .. }),
            };
            let leaf = bindings.instantiate(info);
            debug_assert!(leaf.is_some(), "unbound leaves rejected above");
            self.nodes[idx].leaf = leaf;
        }
    }

    /// Propagates one tick from the root.
    pub fn tick_root(&mut self) -> TickStatus {
        self.ticks += 1;
        self.tick_node(0)
    }

    /// Halts in-flight leaves and resets every node to Idle.
    pub fn halt_tree(&mut self) {
        self.halt_node(0);
    }

    pub fn root_status(&self) -> TickStatus {
        self.nodes[0].status
    }

    pub fn tick_period(&self) -> Duration {
        self.tick_period
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Drains the diagnostic log.
    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        self.events.take()
    }

    pub fn set_root(&mut self, key: &str, value: Value) {
        self.bb.write(0, key, value);
    }

    pub fn get_root(&self, key: &str) -> Option<Value> {
        self.bb.read(0, key).cloned()
    }

    /// Node paths with their current statuses, in construction order.
    pub fn node_statuses(&self) -> Vec<(String, TickStatus)> {
        self.nodes.iter().map(|n| (n.path.clone(), n.status)).collect()
    }

    fn tick_node(&mut self, i: usize) -> TickStatus {
        let fresh = self.nodes[i].status != TickStatus::Running;
        if fresh {
            self.begin_activation(i);
        }
        let status = self.dispatch(i, fresh);
        let status = match status {
            TickStatus::Idle => {
                self.event(i, "tick produced Idle; coerced to Failure".to_string());
                TickStatus::Failure
            }
            other => other,
        };
        self.nodes[i].status = status;
        status
    }

    /// A node whose last status was not Running starts a new activation:
    /// transient state clears and stale child statuses reset to Idle.
    fn begin_activation(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        node.cursor = 0;
        node.attempts = 0;
        node.deadline = None;
        for j in 0..self.nodes[i].children.len() {
            let c = self.nodes[i].children[j];
            self.halt_node(c);
        }
    }

    fn dispatch(&mut self, i: usize, fresh: bool) -> TickStatus {
        match self.nodes[i].exec {
            Exec::MemorySequence => self.tick_memory(i, false),
            Exec::MemoryFallback => self.tick_memory(i, true),
            Exec::ReactiveSequence => self.tick_reactive(i, false),
            Exec::ReactiveFallback => self.tick_reactive(i, true),
            Exec::Parallel => self.tick_parallel(i),
            Exec::Inverter => match self.tick_node(self.nodes[i].children[0]) {
                TickStatus::Success => TickStatus::Failure,
                TickStatus::Failure => TickStatus::Success,
                other => other,
            },
            Exec::Retry => self.tick_retry(i),
            Exec::Repeat => self.tick_repeat(i),
            Exec::Timeout => self.tick_timeout(i, fresh),
            Exec::KeepRunning => match self.tick_node(self.nodes[i].children[0]) {
                TickStatus::Failure => TickStatus::Failure,
                _ => TickStatus::Running,
            },
            Exec::Scope => self.tick_node(self.nodes[i].children[0]),
            Exec::Leaf => self.tick_leaf(i),
            Exec::AlwaysSuccess => TickStatus::Success,
            Exec::AlwaysFailure => TickStatus::Failure,
            Exec::Sleep => self.tick_sleep(i, fresh),
            Exec::SetBlackboard => self.tick_set_blackboard(i),
        }
    }

    /// Memory composite: resumes at the cursor, never re-ticks settled
    /// earlier children within one activation.
    fn tick_memory(&mut self, i: usize, fallback: bool) -> TickStatus {
        let advance = if fallback { TickStatus::Failure } else { TickStatus::Success };
        let n = self.nodes[i].children.len();
        let mut j = self.nodes[i].cursor;
        while j < n {
            let c = self.nodes[i].children[j];
            let st = self.tick_node(c);
            if st == advance {
                j += 1;
                continue;
            }
            if st == TickStatus::Running {
                self.nodes[i].cursor = j;
                return TickStatus::Running;
            }
            self.nodes[i].cursor = 0;
            return st;
        }
        self.nodes[i].cursor = 0;
        advance
    }

    /// Reactive composite: restarts at child 0 every tick. When a child
    /// short-circuits, any later child still Running from the previous tick
    /// receives exactly one halt before this tick returns.
    fn tick_reactive(&mut self, i: usize, fallback: bool) -> TickStatus {
        let advance = if fallback { TickStatus::Failure } else { TickStatus::Success };
        let n = self.nodes[i].children.len();
        for j in 0..n {
            let c = self.nodes[i].children[j];
            let st = self.tick_node(c);
            if st == advance {
                continue;
            }
            for jj in j + 1..n {
                let later = self.nodes[i].children[jj];
                self.halt_node(later);
            }
            return st;
        }
        advance
    }

    /// Children completed in this activation keep their status and are not
    /// re-ticked; accounting reads it back each tick.
    fn tick_parallel(&mut self, i: usize) -> TickStatus {
        let n = self.nodes[i].children.len();
        let k = match self.attr_u64(i, "success_count") {
            Some(k) if (1..=n as u64).contains(&k) => k as usize,
            Some(k) => {
                self.event(i, format!("success_count {k} out of range 1..={n}; using {n}"));
                n
            }
            None => n,
        };
        let (mut succeeded, mut failed) = (0usize, 0usize);
        for j in 0..n {
            let c = self.nodes[i].children[j];
            let st = match self.nodes[c].status {
                TickStatus::Success => TickStatus::Success,
                TickStatus::Failure => TickStatus::Failure,
                _ => self.tick_node(c),
            };
            match st {
                TickStatus::Success => succeeded += 1,
                TickStatus::Failure => failed += 1,
                _ => {}
            }
        }
        if succeeded >= k || failed > n - k {
            for j in 0..n {
                let c = self.nodes[i].children[j];
                if self.nodes[c].status == TickStatus::Running {
                    self.halt_node(c);
                }
            }
            if succeeded >= k {
                TickStatus::Success
            } else {
                TickStatus::Failure
            }
        } else {
            TickStatus::Running
        }
    }

    /// `num_attempts` bounds total child activations, counted across ticks.
    fn tick_retry(&mut self, i: usize) -> TickStatus {
        let max = self.attr_u64(i, "num_attempts").unwrap_or(1).max(1);
        match self.tick_node(self.nodes[i].children[0]) {
            TickStatus::Failure => {
                self.nodes[i].attempts += 1;
                if self.nodes[i].attempts >= max {
                    TickStatus::Failure
                } else {
                    TickStatus::Running
                }
            }
            other => other,
        }
    }

    fn tick_repeat(&mut self, i: usize) -> TickStatus {
        let cycles = self.attr_u64(i, "num_cycles").unwrap_or(1);
        if self.nodes[i].attempts >= cycles {
            return TickStatus::Success;
        }
        match self.tick_node(self.nodes[i].children[0]) {
            TickStatus::Success => {
                self.nodes[i].attempts += 1;
                if self.nodes[i].attempts >= cycles {
                    TickStatus::Success
                } else {
                    TickStatus::Running
                }
            }
            other => other,
        }
    }

    fn tick_timeout(&mut self, i: usize, fresh: bool) -> TickStatus {
        if fresh {
            self.nodes[i].deadline = self
                .attr_u64(i, "msec")
                .and_then(|ms| Instant::now().checked_add(Duration::from_millis(ms)));
        }
        let c = self.nodes[i].children[0];
        let st = self.tick_node(c);
        if st == TickStatus::Running {
            if let Some(deadline) = self.nodes[i].deadline {
                if Instant::now() >= deadline {
                    self.halt_node(c);
                    self.event(i, "deadline exceeded; child halted".to_string());
                    return TickStatus::Failure;
                }
            }
        }
        st
    }

    fn tick_sleep(&mut self, i: usize, fresh: bool) -> TickStatus {
        if fresh {
            let ms = self.attr_u64(i, "msec").unwrap_or(0);
            self.nodes[i].deadline = Instant::now().checked_add(Duration::from_millis(ms));
        }
        match self.nodes[i].deadline {
            Some(deadline) if Instant::now() >= deadline => TickStatus::Success,
            _ => TickStatus::Running,
        }
    }

    fn tick_set_blackboard(&mut self, i: usize) -> TickStatus {
        // output_key names the key either bare or in braces
        let (key_raw, value_raw) = {
            let node = &self.nodes[i];
            match (node.attrs.get("output_key"), node.attrs.get("value")) {
                (Some(k), Some(v)) => (k.clone(), v.clone()),
                _ => {
                    self.event(i, "missing output_key or value".to_string());
                    return TickStatus::Failure;
                }
            }
        };
        let key = blackboard_ref(&key_raw).unwrap_or(&key_raw).to_string();
        let scope = self.nodes[i].scope;
        let value = match blackboard_ref(&value_raw) {
            Some(src) => match self.bb.read(scope, src) {
                Some(v) => v.clone(),
                None => {
                    self.event(i, format!("value reads absent key {src:?}"));
                    return TickStatus::Failure;
                }
            },
            None => literal_value(&value_raw),
        };
        self.bb.write(scope, &key, value);
        TickStatus::Success
    }

    fn tick_leaf(&mut self, i: usize) -> TickStatus {
        let mut leaf = match self.nodes[i].leaf.take() {
            Some(leaf) => leaf,
            None => {
                self.event(i, "leaf has no bound behavior".to_string());
                return TickStatus::Failure;
            }
        };
        let outcome = {
            let node = &self.nodes[i];
            let mut ctx = LeafCtx {
                attrs: &node.attrs,
                scope: node.scope,
                bb: &mut self.bb,
                path: &node.path,
                tick: self.ticks,
                events: &mut self.events,
            };
            std::panic::catch_unwind(AssertUnwindSafe(|| leaf.tick(&mut ctx)))
        };
        self.nodes[i].leaf = Some(leaf);
        match outcome {
            Ok(TickStatus::Idle) => {
                self.event(i, "leaf returned Idle; coerced to Failure".to_string());
                TickStatus::Failure
            }
            Ok(status) => status,
            Err(_) => {
                self.event(i, "leaf panicked during tick".to_string());
                TickStatus::Failure
            }
        }
    }

    /// Children first, then self. The leaf callback fires only while the
    /// node is Running; state always resets to Idle.
    fn halt_node(&mut self, i: usize) {
        for j in 0..self.nodes[i].children.len() {
            let c = self.nodes[i].children[j];
            self.halt_node(c);
        }
        if self.nodes[i].status == TickStatus::Running {
            if let Some(mut leaf) = self.nodes[i].leaf.take() {
                if std::panic::catch_unwind(AssertUnwindSafe(|| leaf.halt())).is_err() {
                    self.event(i, "leaf panicked during halt".to_string());
                }
                self.nodes[i].leaf = Some(leaf);
            }
        }
        let node = &mut self.nodes[i];
        node.status = TickStatus::Idle;
        node.cursor = 0;
        node.attempts = 0;
        node.deadline = None;
    }

    /// Numeric attribute, resolving `{key}` references. Unresolvable values
    /// record an event and yield None.
    fn attr_u64(&mut self, i: usize, name: &str) -> Option<u64> {
        let raw = self.nodes[i].attrs.get(name)?.clone();
        match blackboard_ref(&raw) {
            Some(key) => {
                let value = self.bb.read(self.nodes[i].scope, key).cloned();
                let parsed = match &value {
                    Some(Value::Number(n)) => n.as_u64(),
                    Some(Value::String(s)) => s.parse::<u64>().ok(),
                    _ => None,
                };
                if parsed.is_none() {
                    let what = match value {
                        Some(v) => format!("non-integer {v}"),
                        None => "absent".to_string(),
                    };
                    self.event(i, format!("{name} reads {key:?} which is {what}"));
                }
                parsed
            }
            None => match raw.parse::<u64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    self.event(i, format!("{name} {raw:?} is not a non-negative integer"));
                    None
                }
            },
        }
    }

    fn event(&mut self, i: usize, message: String) {
        self.events.push(self.ticks, &self.nodes[i].path, message);
    }
}

impl std::fmt::Debug for TreeRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TreeRuntime")
            .field("nodes", &self.nodes.len())
            .field("ticks", &self.ticks)
            .field("root_status", &self.nodes[0].status)
            .finish()
    }
}
