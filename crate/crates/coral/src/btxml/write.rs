use std::fmt::Write;

use super::{NodeKind, NodeSpec, TreeSpec};

/// Serializes a spec back to the XML dialect. Output parses to a spec with
/// the same trees and main id, which makes round-trip testing cheap; it is
/// also handy for dumping expanded trees.
pub fn tree_to_xml(spec: &TreeSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<root BTCPP_format="4" main_tree_to_execute="{}">"#,
        escape(&spec.main_tree_id)
    );
    for (id, node) in &spec.trees {
        let _ = writeln!(out, r#"  <BehaviorTree ID="{}">"#, escape(id));
        write_node(&mut out, node, 2);
        let _ = writeln!(out, "  </BehaviorTree>");
    }
    out.push_str("</root>\n");
    out
}

fn write_node(out: &mut String, node: &NodeSpec, depth: usize) {
    let pad = "  ".repeat(depth + 1);
    let tag = node.kind.tag();
    out.push_str(&pad);
    out.push('<');
    out.push_str(tag);

    // ID carries the identity attribute for reference-style nodes.
    match &node.kind {
        NodeKind::SubTree { target } => {
            let _ = write!(out, r#" ID="{}""#, escape(target));
        }
        NodeKind::Action { name } | NodeKind::Condition { name } => {
            let _ = write!(out, r#" ID="{}""#, escape(name));
        }
        _ => {}
    }
    for (key, value) in &node.attrs {
        let _ = write!(out, r#" {key}="{}""#, escape(value));
    }

    if node.children.is_empty() {
        out.push_str("/>\n");
        return;
    }
    out.push_str(">\n");
    for child in &node.children {
        write_node(out, child, depth + 1);
    }
    out.push_str(&pad);
    let _ = writeln!(out, "</{tag}>");
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btxml::parse_tree_xml;

    #[test]
    fn writer_output_reparses_identically() {
        let xml = r#"<root BTCPP_format="4" main_tree_to_execute="Main">
            <BehaviorTree ID="Main">
              <Fallback>
                <Sequence>
                  <Condition ID="CheckStop"/>
                  <SaveMap saved_path="{out}"/>
                </Sequence>
                <SubTree ID="Recover" reason="{why}" level="3"/>
              </Fallback>
            </BehaviorTree>
            <BehaviorTree ID="Recover"><AlwaysSuccess/></BehaviorTree>
          </root>"#;
        let spec = parse_tree_xml(xml, None).unwrap();
        let rendered = tree_to_xml(&spec);
        let back = parse_tree_xml(&rendered, None).unwrap();
        assert_eq!(back.main_tree_id, spec.main_tree_id);
        assert_eq!(back.trees, spec.trees);
    }

    #[test]
    fn escaping_survives_round_trip() {
        let mut node = NodeSpec::new(NodeKind::Action { name: "Say".into() });
        node.attrs.insert("text".into(), r#"a<b>&"c'"#.into());
        let spec = TreeSpec {
            main_tree_id: "T".into(),
            trees: [("T".to_string(), node)].into(),
            source: None,
            warnings: vec![],
        };
        let back = parse_tree_xml(&tree_to_xml(&spec), None).unwrap();
        assert_eq!(back.trees, spec.trees);
    }
}
