//! The behavior-tree XML dialect: a compatible subset of the BT.CPP v4
//! format. A document holds one or more named `BehaviorTree` elements under a
//! `root` element; element tags name node kinds, unknown tags become action
//! leaves, and `{key}` attribute values reference blackboard entries.

mod expand;
mod parse;
mod write;

pub use expand::expand_subtrees;
pub use parse::parse_tree_xml;
pub use write::tree_to_xml;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

/// Node kinds understood by the engine. Everything else parses as an
/// [`NodeKind::Action`] leaf named after its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Sequence,
    ReactiveSequence,
    Fallback,
    ReactiveFallback,
    /// Threshold lives in the `success_count` attribute.
    Parallel,
    Inverter,
    /// Re-ticks a failing child; `num_attempts` bounds total attempts.
    Retry,
    /// Re-ticks a succeeding child `num_cycles` times.
    Repeat,
    /// Fails a child still running after `msec`.
    Timeout,
    KeepRunningUntilFailure,
    /// Before expansion: a reference with zero children. After expansion: a
    /// scope boundary wrapping the inlined target as its only child.
    SubTree { target: String },
    Action { name: String },
    Condition { name: String },
    AlwaysSuccess,
    AlwaysFailure,
    /// Succeeds after `msec` of wall time.
    Sleep,
    /// Writes `value` to `output_key` in the local scope.
    SetBlackboard,
}

impl NodeKind {
    pub fn is_composite(&self) -> bool {
        matches!(
            self,
            NodeKind::Sequence
                | NodeKind::ReactiveSequence
                | NodeKind::Fallback
                | NodeKind::ReactiveFallback
                | NodeKind::Parallel
        )
    }

    pub fn is_decorator(&self) -> bool {
        matches!(
            self,
            NodeKind::Inverter
                | NodeKind::Retry
                | NodeKind::Repeat
                | NodeKind::Timeout
                | NodeKind::KeepRunningUntilFailure
        )
    }

    pub fn is_leaf(&self) -> bool {
        !self.is_composite() && !self.is_decorator() && !matches!(self, NodeKind::SubTree { .. })
    }

    /// Canonical element tag for serialization and diagnostics.
    pub fn tag(&self) -> &str {
        match self {
            NodeKind::Sequence => "Sequence",
            NodeKind::ReactiveSequence => "ReactiveSequence",
            NodeKind::Fallback => "Fallback",
            NodeKind::ReactiveFallback => "ReactiveFallback",
            NodeKind::Parallel => "Parallel",
            NodeKind::Inverter => "Inverter",
            NodeKind::Retry => "Retry",
            NodeKind::Repeat => "Repeat",
            NodeKind::Timeout => "Timeout",
            NodeKind::KeepRunningUntilFailure => "KeepRunningUntilFailure",
            NodeKind::SubTree { .. } => "SubTree",
            NodeKind::Action { .. } => "Action",
            NodeKind::Condition { .. } => "Condition",
            NodeKind::AlwaysSuccess => "AlwaysSuccess",
            NodeKind::AlwaysFailure => "AlwaysFailure",
            NodeKind::Sleep => "Sleep",
            NodeKind::SetBlackboard => "SetBlackboard",
        }
    }

    /// Behavior name for action/condition leaves.
    pub fn leaf_name(&self) -> Option<&str> {
        match self {
            NodeKind::Action { name } | NodeKind::Condition { name } => Some(name),
            _ => None,
        }
    }
}

/// One tree node: kind, port assignments, children.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub kind: NodeKind,
    /// Port values: either literals or `{key}` blackboard references.
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn new(kind: NodeKind) -> Self {
        NodeSpec { kind, attrs: BTreeMap::new(), children: Vec::new() }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    /// Leaves of this subtree in document order (multiset, with duplicates).
    pub fn leaf_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<String>) {
        if let Some(name) = self.kind.leaf_name() {
            out.push(name.to_string());
        }
        for child in &self.children {
            child.collect_leaves(out);
        }
    }
}

/// A parsed tree document. `trees` maps tree id to its root node.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    pub main_tree_id: String,
    pub trees: BTreeMap<String, NodeSpec>,
    pub source: Option<PathBuf>,
    pub warnings: Vec<String>,
}

impl TreeSpec {
    pub fn main_tree(&self) -> &NodeSpec {
        &self.trees[&self.main_tree_id]
    }

    /// True once every SubTree node wraps its inlined target.
    pub fn is_expanded(&self) -> bool {
        fn check(node: &NodeSpec) -> bool {
            let own = !matches!(node.kind, NodeKind::SubTree { .. }) || node.children.len() == 1;
            own && node.children.iter().all(check)
        }
        check(self.main_tree())
    }
}

#[derive(Debug, Error)]
pub enum TreeXmlError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("document root element must be <root>, found <{found}>")]
    RootTag { found: String },
    #[error("no BehaviorTree elements in document")]
    NoTrees,
    #[error("BehaviorTree element without an ID attribute")]
    MissingTreeId,
    #[error("duplicate tree id {id:?}")]
    DuplicateTreeId { id: String },
    #[error("tree {id:?} must have exactly one root node, found {n}")]
    TreeArity { id: String, n: usize },
    #[error("{tag} at {path} needs at least one child")]
    CompositeArity { tag: String, path: String },
    #[error("{tag} at {path} needs exactly one child")]
    DecoratorArity { tag: String, path: String },
    #[error("leaf {tag} at {path} cannot have children")]
    LeafArity { tag: String, path: String },
    #[error("SubTree at {path} is missing its ID attribute")]
    MissingSubTreeTarget { path: String },
    #[error("{tag} at {path} is missing its ID attribute")]
    MissingLeafName { tag: String, path: String },
    #[error("main_tree_to_execute is required when a document has {count} trees")]
    AmbiguousMain { count: usize },
    #[error("main_tree_to_execute {id:?} does not match any BehaviorTree")]
    UnknownMainTree { id: String },
    #[error("SubTree at {path} references unknown tree {target:?}")]
    UnknownSubTree { target: String, path: String },
    #[error("subtree cycle: {chain}")]
    SubTreeCycle { chain: String },
}

/// Returns the key name when an attribute value is a `{key}` blackboard
/// reference. Anything else, including brace-wrapped text with non-key
/// characters such as JSON literals, is a plain value.
pub fn blackboard_ref(raw: &str) -> Option<&str> {
    let inner = raw.strip_prefix('{')?.strip_suffix('}')?;
    let key_char = |c: char| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/');
    if !inner.is_empty() && inner.chars().all(key_char) {
        Some(inner)
    } else {
        None
    }
}

/// One validation finding, anchored to a node path like
/// `DemoA/Sequence[0]/Action[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Static checks against a known behavior set. `known_behaviors` of `None`
/// skips leaf-name resolution (used when no capability declarations are
/// available); the coordination leaf names are always considered known
/// because every executor compiles them in.
pub fn validate_tree(
    spec: &TreeSpec,
    known_behaviors: Option<&std::collections::BTreeSet<String>>,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (id, root) in &spec.trees {
        validate_node(spec, root, id, known_behaviors, &mut out);
    }
    out
}

fn validate_node(
    spec: &TreeSpec,
    node: &NodeSpec,
    path: &str,
    known: Option<&std::collections::BTreeSet<String>>,
    out: &mut Vec<Diagnostic>,
) {
    let diag = |out: &mut Vec<Diagnostic>, msg: String| {
        out.push(Diagnostic { path: path.to_string(), message: msg });
    };

    match &node.kind {
        NodeKind::Action { name } | NodeKind::Condition { name } => {
            if let Some(known) = known {
                let compiled_in = crate::coordination::LEAF_NAMES.contains(&name.as_str());
                if !compiled_in && !known.contains(name) {
                    diag(out, format!("unknown behavior {name:?}"));
                }
            }
        }
        NodeKind::Parallel => {
            let n = node.children.len() as i64;
            match node.attr("success_count") {
                Some(raw) if blackboard_ref(raw).is_some() => {}
                Some(raw) => match raw.parse::<i64>() {
                    Ok(k) if (1..=n).contains(&k) => {}
                    Ok(k) => diag(out, format!("success_count {k} out of range 1..={n}")),
                    Err(_) => diag(out, "success_count is not an integer".into()),
                },
                None => diag(out, "Parallel is missing success_count".into()),
            }
        }
        NodeKind::Retry => check_u64_attr(node, "num_attempts", true, path, out),
        NodeKind::Repeat => check_u64_attr(node, "num_cycles", true, path, out),
        NodeKind::Timeout => check_u64_attr(node, "msec", true, path, out),
        NodeKind::Sleep => check_u64_attr(node, "msec", false, path, out),
        NodeKind::SetBlackboard => {
            for required in ["output_key", "value"] {
                if node.attr(required).is_none() {
                    diag(out, format!("SetBlackboard is missing {required:?}"));
                }
            }
        }
        NodeKind::SubTree { target } => {
            if node.children.is_empty() && !spec.trees.contains_key(target) {
                diag(out, format!("SubTree references unknown tree {target:?}"));
            }
        }
        _ => {}
    }

    for (i, child) in node.children.iter().enumerate() {
        let child_path = format!("{path}/{}[{i}]", child.kind.tag());
        validate_node(spec, child, &child_path, known, out);
    }
}

fn check_u64_attr(
    node: &NodeSpec,
    attr: &str,
    required: bool,
    path: &str,
    out: &mut Vec<Diagnostic>,
) {
    match node.attr(attr) {
        // `{key}` values resolve at runtime; only literals are checked here.
        Some(raw) if blackboard_ref(raw).is_none() && raw.parse::<u64>().is_err() => {
            out.push(Diagnostic {
                path: path.to_string(),
                message: format!("{attr} {raw:?} is not a non-negative integer"),
            })
        }
        None if required => out.push(Diagnostic {
            path: path.to_string(),
            message: format!("{} is missing {attr:?}", node.kind.tag()),
        }),
        _ => {}
    }
}
