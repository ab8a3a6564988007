use std::collections::BTreeMap;

use serde_json::Value;

use crate::btxml::blackboard_ref;

/// Scope chain for tree data. Scope 0 is the root; every subtree boundary
/// pushes a child scope whose remap table comes from the SubTree node's
/// attributes: a `{key}` value remaps the inner name to an outer key, a
/// literal seeds the inner name directly.
///
/// Reads resolve through the chain: remap first, then local value, then the
/// parent under the same name. Writes land in the scope a remap points to,
/// otherwise the local scope.
#[derive(Debug, Default)]
pub(crate) struct Blackboard {
    scopes: Vec<Scope>,
}

#[derive(Debug, Default)]
struct Scope {
    parent: Option<usize>,
    values: BTreeMap<String, Value>,
    remaps: BTreeMap<String, String>,
}

impl Blackboard {
    pub(crate) fn new() -> Self {
        Blackboard { scopes: vec![Scope::default()] }
    }

    pub(crate) fn push_scope(&mut self, parent: usize, attrs: &BTreeMap<String, String>) -> usize {
        debug_assert!(parent < self.scopes.len());
        let mut scope = Scope { parent: Some(parent), ..Scope::default() };
        for (key, raw) in attrs {
            match blackboard_ref(raw) {
                Some(outer) => {
                    scope.remaps.insert(key.clone(), outer.to_string());
                }
                None => {
                    scope.values.insert(key.clone(), super::literal_value(raw));
                }
            }
        }
        self.scopes.push(scope);
        self.scopes.len() - 1
    }

    pub(crate) fn read(&self, scope: usize, key: &str) -> Option<&Value> {
        let mut s = scope;
        let mut k = key;
        loop {
            let sc = &self.scopes[s];
            if let Some(outer) = sc.remaps.get(k) {
                s = sc.parent.expect("remaps exist only below the root scope");
                k = outer;
                continue;
            }
            if let Some(v) = sc.values.get(k) {
                return Some(v);
            }
            s = sc.parent?;
        }
    }

    pub(crate) fn write(&mut self, scope: usize, key: &str, value: Value) {
        let mut s = scope;
        let mut k = key.to_string();
        loop {
            match self.scopes[s].remaps.get(&k) {
                Some(outer) => {
                    k = outer.clone();
                    s = self.scopes[s].parent.expect("remaps exist only below the root scope");
                }
                None => {
                    self.scopes[s].values.insert(k, value);
                    return;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn unremapped_read_falls_through_to_root() {
        let mut bb = Blackboard::new();
        bb.write(0, "map_path", json!("/data/m.bin"));
        let inner = bb.push_scope(0, &attrs(&[]));
        assert_eq!(bb.read(inner, "map_path"), Some(&json!("/data/m.bin")));
    }

    #[test]
    fn remap_routes_reads_and_writes_to_outer_key() {
        let mut bb = Blackboard::new();
        let inner = bb.push_scope(0, &attrs(&[("goal", "{target}")]));
        bb.write(0, "target", json!([1, 2]));
        assert_eq!(bb.read(inner, "goal"), Some(&json!([1, 2])));

        bb.write(inner, "goal", json!([3, 4]));
        assert_eq!(bb.read(0, "target"), Some(&json!([3, 4])));
    }

    #[test]
    fn never_written_key_is_absent() {
        let bb = Blackboard::new();
        assert_eq!(bb.read(0, "nothing"), None);
    }

    #[test]
    fn unremapped_write_is_local_and_shadows() {
        let mut bb = Blackboard::new();
        bb.write(0, "k", json!(1));
        let inner = bb.push_scope(0, &attrs(&[]));
        bb.write(inner, "k", json!(2));
        assert_eq!(bb.read(inner, "k"), Some(&json!(2)));
        assert_eq!(bb.read(0, "k"), Some(&json!(1)));
    }

    #[test]
    fn literal_subtree_attr_seeds_typed_value() {
        let mut bb = Blackboard::new();
        let inner = bb.push_scope(0, &attrs(&[("speed", "2.5"), ("name", "fast")]));
        assert_eq!(bb.read(inner, "speed"), Some(&json!(2.5)));
        assert_eq!(bb.read(inner, "name"), Some(&json!("fast")));
    }

    #[test]
    fn remap_chains_across_nested_scopes() {
        let mut bb = Blackboard::new();
        let mid = bb.push_scope(0, &attrs(&[("b", "{a}")]));
        let leafs = bb.push_scope(mid, &attrs(&[("c", "{b}")]));
        bb.write(leafs, "c", json!("deep"));
        assert_eq!(bb.read(0, "a"), Some(&json!("deep")));
    }
}
