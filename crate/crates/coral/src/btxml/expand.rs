use std::collections::BTreeMap;

use super::{NodeKind, NodeSpec, TreeSpec, TreeXmlError};

/// Inlines every SubTree reference reachable from the main tree. Each
/// SubTree node survives as a scope boundary whose single child is a fresh
/// copy of its target; its remaining attributes are the port remaps
/// (`{outer}` values) and scope seeds (literal values) applied at runtime.
pub fn expand_subtrees(spec: &TreeSpec) -> Result<TreeSpec, TreeXmlError> {
    let mut stack = Vec::new();
    let root = expand_node(spec.main_tree(), spec, &spec.main_tree_id, &mut stack)?;

    let mut trees = BTreeMap::new();
    trees.insert(spec.main_tree_id.clone(), root);
    Ok(TreeSpec {
        main_tree_id: spec.main_tree_id.clone(),
        trees,
        source: spec.source.clone(),
        warnings: spec.warnings.clone(),
    })
}

fn expand_node(
    node: &NodeSpec,
    spec: &TreeSpec,
    path: &str,
    stack: &mut Vec<String>,
) -> Result<NodeSpec, TreeXmlError> {
    if let NodeKind::SubTree { target } = &node.kind {
        if stack.iter().any(|t| t == target) {
            let mut chain = stack.clone();
            chain.push(target.clone());
            return Err(TreeXmlError::SubTreeCycle { chain: chain.join(" -> ") });
        }
        let tree = spec.trees.get(target).ok_or_else(|| TreeXmlError::UnknownSubTree {
            target: target.clone(),
            path: path.to_string(),
        })?;
        stack.push(target.clone());
        let inlined = expand_node(tree, spec, &format!("{path}/{target}"), stack)?;
        stack.pop();
        return Ok(NodeSpec {
            kind: node.kind.clone(),
            attrs: node.attrs.clone(),
            children: vec![inlined],
        });
    }

    let mut children = Vec::with_capacity(node.children.len());
    for child in &node.children {
        children.push(expand_node(child, spec, path, stack)?);
    }
    Ok(NodeSpec { kind: node.kind.clone(), attrs: node.attrs.clone(), children })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btxml::parse_tree_xml;

    #[test]
    fn nested_expansion_preserves_leaf_multiset() {
        let spec = parse_tree_xml(
            r#"<root BTCPP_format="4" main_tree_to_execute="Main">
                 <BehaviorTree ID="Main">
                   <Sequence>
                     <SubTree ID="Move" goal="{target}"/>
                     <SubTree ID="Move" goal="{home}"/>
                     <Grasp width="0.2"/>
                   </Sequence>
                 </BehaviorTree>
                 <BehaviorTree ID="Move">
                   <Sequence><Plan goal="{goal}"/><Drive goal="{goal}"/></Sequence>
                 </BehaviorTree>
               </root>"#,
            None,
        )
        .unwrap();
        let expanded = expand_subtrees(&spec).unwrap();
        assert!(expanded.is_expanded());
        assert_eq!(
            expanded.main_tree().leaf_names(),
            ["Plan", "Drive", "Plan", "Drive", "Grasp"]
        );
        // The scope node keeps its remap attribute for the runtime.
        let first = &expanded.main_tree().children[0];
        assert_eq!(first.attr("goal"), Some("{target}"));
        assert_eq!(first.children.len(), 1);
    }

    #[test]
    fn cycle_is_detected() {
        let spec = parse_tree_xml(
            r#"<root BTCPP_format="4" main_tree_to_execute="A">
                 <BehaviorTree ID="A"><SubTree ID="B"/></BehaviorTree>
                 <BehaviorTree ID="B"><SubTree ID="A"/></BehaviorTree>
               </root>"#,
            None,
        )
        .unwrap();
        let err = expand_subtrees(&spec).unwrap_err();
        assert!(matches!(err, TreeXmlError::SubTreeCycle { .. }), "{err}");
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let spec = parse_tree_xml(
            r#"<root BTCPP_format="4">
                 <BehaviorTree ID="A"><Fallback><SubTree ID="A"/><AlwaysSuccess/></Fallback></BehaviorTree>
               </root>"#,
            None,
        )
        .unwrap();
        assert!(matches!(expand_subtrees(&spec), Err(TreeXmlError::SubTreeCycle { .. })));
    }

    #[test]
    fn unknown_target_errors() {
        let spec = parse_tree_xml(
            r#"<root BTCPP_format="4">
                 <BehaviorTree ID="A"><SubTree ID="Ghost"/></BehaviorTree>
               </root>"#,
            None,
        )
        .unwrap();
        assert!(matches!(expand_subtrees(&spec), Err(TreeXmlError::UnknownSubTree { .. })));
    }
}
