//! Params-file parsing. The file maps component namespaces to key/value
//! parameter maps; both the `parameters:` wrapper and the ROS-style
//! `ros__parameters:` wrapper are accepted, nested maps flatten to
//! dot-joined keys.

use std::collections::BTreeMap;

use serde_json::Value;

use super::ComposeError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub namespaces: BTreeMap<String, BTreeMap<String, Value>>,
}

impl ParamSet {
    pub fn namespace(&self, ns: &str) -> Option<&BTreeMap<String, Value>> {
        self.namespaces.get(ns)
    }

    /// JSON object text for one namespace, `{}` when absent. This is what
    /// lands in CORAL_PARAMS.
    pub fn namespace_json(&self, ns: &str) -> String {
        match self.namespaces.get(ns) {
            Some(map) => {
                let obj: serde_json::Map<String, Value> =
                    map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                Value::Object(obj).to_string()
            }
            None => "{}".to_string(),
        }
    }
}

pub fn parse_params(text: &str) -> Result<ParamSet, ComposeError> {
    let doc: serde_yaml::Value =
        serde_yaml::from_str(text).map_err(|e| ComposeError::Yaml(e.to_string()))?;
    if doc.is_null() {
        return Ok(ParamSet::default());
    }
    let serde_yaml::Value::Mapping(top) = doc else {
        return Err(ComposeError::ParamsNotAMapping);
    };
    let mut namespaces = BTreeMap::new();
    for (k, v) in top {
        let component = string_key(&k, "<top>")?;
        let serde_yaml::Value::Mapping(body) = v else {
            return Err(ComposeError::ParamsMissingWrapper { component });
        };
        let plain = body.get("parameters");
        let ros = body.get("ros__parameters");
        let inner = match (plain, ros) {
            (Some(p), None) => p,
            (None, Some(r)) => r,
            (Some(_), Some(_)) => {
                return Err(ComposeError::ParamsDoubleWrapper { component })
            }
            (None, None) => return Err(ComposeError::ParamsMissingWrapper { component }),
        };
        let mut flat = BTreeMap::new();
        match inner {
            serde_yaml::Value::Null => {}
            serde_yaml::Value::Mapping(m) => {
                flatten_into(m, String::new(), &component, &mut flat)?
            }
            _ => return Err(ComposeError::ParamsMissingWrapper { component }),
        }
        namespaces.insert(component, flat);
    }
    Ok(ParamSet { namespaces })
}

fn flatten_into(
    map: &serde_yaml::Mapping,
    prefix: String,
    component: &str,
    out: &mut BTreeMap<String, Value>,
) -> Result<(), ComposeError> {
    for (k, v) in map {
        let seg = string_key(k, component)?;
        if seg.is_empty() || !seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ComposeError::BadParamKey {
                component: component.to_string(),
                key: seg,
            });
        }
        let key = if prefix.is_empty() { seg } else { format!("{prefix}.{seg}") };
        match v {
            serde_yaml::Value::Mapping(nested) => {
                flatten_into(nested, key, component, out)?
            }
            other => {
                let json = yaml_to_json(other).ok_or_else(|| ComposeError::BadParamValue {
                    component: component.to_string(),
                    key: key.clone(),
                })?;
                out.insert(key, json);
            }
        }
    }
    Ok(())
}

fn string_key(k: &serde_yaml::Value, component: &str) -> Result<String, ComposeError> {
    match k {
        serde_yaml::Value::String(s) => Ok(s.clone()),
        other => Err(ComposeError::BadParamKey {
            component: component.to_string(),
            key: format!("{other:?}"),
        }),
    }
}

fn yaml_to_json(v: &serde_yaml::Value) -> Option<Value> {
    match v {
        serde_yaml::Value::Null => Some(Value::Null),
        serde_yaml::Value::Bool(b) => Some(Value::Bool(*b)),
        serde_yaml::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(Value::from(i))
            } else if let Some(u) = n.as_u64() {
                Some(Value::from(u))
            } else {
                n.as_f64().and_then(|f| serde_json::Number::from_f64(f).map(Value::Number))
            }
        }
        serde_yaml::Value::String(s) => Some(Value::String(s.clone())),
        serde_yaml::Value::Sequence(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(yaml_to_json(item)?);
            }
            Some(Value::Array(out))
        }
        // Mappings flatten at the level above; one inside a sequence has no
        // dot-key spelling.
        serde_yaml::Value::Mapping(_) | serde_yaml::Value::Tagged(_) => None,
    }
}
