use std::collections::BTreeMap;
use std::path::Path;

use super::{NodeKind, NodeSpec, TreeSpec, TreeXmlError};

/// Parses one XML document into a [`TreeSpec`]. Structural problems (bad
/// arity, missing ids, duplicate trees) are errors; tolerated oddities such
/// as a missing `BTCPP_format` attribute are collected as warnings.
pub fn parse_tree_xml(xml: &str, source: Option<&Path>) -> Result<TreeSpec, TreeXmlError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| TreeXmlError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "root" {
        return Err(TreeXmlError::RootTag { found: root.tag_name().name().to_string() });
    }

    let mut warnings = Vec::new();
    match root.attribute("BTCPP_format") {
        Some("4") => {}
        Some(other) => warnings.push(format!("BTCPP_format is {other:?}, expected \"4\"")),
        None => warnings.push("missing BTCPP_format attribute, assuming \"4\"".to_string()),
    }

    let mut trees = BTreeMap::new();
    let mut order = Vec::new();
    for element in root.children().filter(|n| n.is_element()) {
        let tag = element.tag_name().name();
        if tag != "BehaviorTree" {
            // TreeNodesModel is editor metadata; anything else is suspect.
            if tag != "TreeNodesModel" {
                warnings.push(format!("ignoring unexpected element <{tag}>"));
            }
            continue;
        }
        let id = element
            .attribute("ID")
            .map(str::to_string)
            .ok_or(TreeXmlError::MissingTreeId)?;
        let roots: Vec<_> = element.children().filter(|n| n.is_element()).collect();
        if roots.len() != 1 {
            return Err(TreeXmlError::TreeArity { id, n: roots.len() });
        }
        let node = parse_node(roots[0], &id, &mut warnings)?;
        if trees.insert(id.clone(), node).is_some() {
            return Err(TreeXmlError::DuplicateTreeId { id });
        }
        order.push(id);
    }

    if trees.is_empty() {
        return Err(TreeXmlError::NoTrees);
    }
    let main_tree_id = match root.attribute("main_tree_to_execute") {
        Some(id) if trees.contains_key(id) => id.to_string(),
        Some(id) => return Err(TreeXmlError::UnknownMainTree { id: id.to_string() }),
        None if order.len() == 1 => order[0].clone(),
        None => return Err(TreeXmlError::AmbiguousMain { count: order.len() }),
    };

    Ok(TreeSpec {
        main_tree_id,
        trees,
        source: source.map(Path::to_path_buf),
        warnings,
    })
}

fn parse_node(
    element: roxmltree::Node,
    path: &str,
    warnings: &mut Vec<String>,
) -> Result<NodeSpec, TreeXmlError> {
    let tag = element.tag_name().name().to_string();
    let path = format!("{path}/{tag}");
    let mut attrs: BTreeMap<String, String> = element
        .attributes()
        .map(|a| (a.name().to_string(), a.value().to_string()))
        .collect();

    let kind = match tag.as_str() {
        "Sequence" => NodeKind::Sequence,
        "ReactiveSequence" => NodeKind::ReactiveSequence,
        "Fallback" => NodeKind::Fallback,
        "ReactiveFallback" => NodeKind::ReactiveFallback,
        "Parallel" => NodeKind::Parallel,
        "Inverter" => NodeKind::Inverter,
        "Retry" | "RetryUntilSuccessful" => NodeKind::Retry,
        "Repeat" => NodeKind::Repeat,
        "Timeout" => NodeKind::Timeout,
        "KeepRunningUntilFailure" => NodeKind::KeepRunningUntilFailure,
        "AlwaysSuccess" => NodeKind::AlwaysSuccess,
        "AlwaysFailure" => NodeKind::AlwaysFailure,
        "Sleep" => NodeKind::Sleep,
        "SetBlackboard" => NodeKind::SetBlackboard,
        "SubTree" => {
            let target = attrs
                .remove("ID")
                .ok_or_else(|| TreeXmlError::MissingSubTreeTarget { path: path.clone() })?;
            for key in attrs.keys().filter(|k| k.starts_with('_')) {
                warnings.push(format!("{path}: unsupported attribute {key:?} ignored"));
            }
            NodeKind::SubTree { target }
        }
        "Action" | "Condition" => {
            let name = attrs
                .remove("ID")
                .ok_or_else(|| TreeXmlError::MissingLeafName { tag: tag.clone(), path: path.clone() })?;
            named_leaf(&tag, name)
        }
        // Unknown tags are action leaves named after the tag.
        other => NodeKind::Action { name: other.to_string() },
    };

    let mut children = Vec::new();
    for child in element.children().filter(|n| n.is_element()) {
        children.push(parse_node(child, &path, warnings)?);
    }

    let n = children.len();
    if kind.is_composite() && n == 0 {
        return Err(TreeXmlError::CompositeArity { tag, path });
    }
    if kind.is_decorator() && n != 1 {
        return Err(TreeXmlError::DecoratorArity { tag, path });
    }
    if (kind.is_leaf() || matches!(kind, NodeKind::SubTree { .. })) && n != 0 {
        return Err(TreeXmlError::LeafArity { tag, path });
    }

    // The threshold defaults to "all children" so every parsed Parallel
    // carries an explicit success_count.
    if kind == NodeKind::Parallel && !attrs.contains_key("success_count") {
        attrs.insert("success_count".to_string(), n.to_string());
    }

    Ok(NodeSpec { kind, attrs, children })
}

/// `<Action ID="Sleep">` and friends mean the builtin, not a bound behavior.
fn named_leaf(tag: &str, name: String) -> NodeKind {
    match name.as_str() {
        "AlwaysSuccess" => NodeKind::AlwaysSuccess,
        "AlwaysFailure" => NodeKind::AlwaysFailure,
        "Sleep" => NodeKind::Sleep,
        "SetBlackboard" => NodeKind::SetBlackboard,
        _ if tag == "Condition" => NodeKind::Condition { name },
        _ => NodeKind::Action { name },
    }
}
