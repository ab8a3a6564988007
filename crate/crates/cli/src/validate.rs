//! Pre-flight for the whole config surface of one or more instances:
//! compose files, params files, and every referenced tree, with a summary
//! of how many files and lines the configs amount to.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::json;

use coral::btxml::{expand_subtrees, parse_tree_xml, validate_tree};
use coral::composer::{
    parse_compose, parse_params, resolve_path, InstanceConfig, Role, EXIT_CONFIG, EXIT_OK,
};

use crate::ValidateArgs;

#[derive(Debug, Default)]
pub struct Survey {
    /// Every config file inspected, deduplicated, with its line count.
    pub files: Vec<(PathBuf, usize)>,
    pub diagnostics: Vec<String>,
}

impl Survey {
    pub fn total_lines(&self) -> usize {
        self.files.iter().map(|(_, n)| n).sum()
    }

    fn seen(&self, path: &Path) -> bool {
        self.files.iter().any(|(p, _)| p == path)
    }

    fn count_file(&mut self, path: &Path) -> Option<String> {
        match std::fs::read_to_string(path) {
            Ok(text) => {
                if !self.seen(path) {
                    self.files.push((path.to_path_buf(), text.lines().count()));
                }
                Some(text)
            }
            Err(e) => {
                self.diagnostics.push(format!("{}: {e}", path.display()));
                None
            }
        }
    }

    pub fn check_params(&mut self, path: &Path) {
        let Some(text) = self.count_file(path) else { return };
        if let Err(e) = parse_params(&text) {
            self.diagnostics.push(format!("{}: {e}", path.display()));
        }
    }

    fn check_tree(&mut self, path: &Path, exports: Option<&BTreeSet<String>>) {
        let Some(text) = self.count_file(path) else { return };
        let spec = match parse_tree_xml(&text, Some(path)).and_then(|s| expand_subtrees(&s)) {
            Ok(spec) => spec,
            Err(e) => {
                self.diagnostics.push(format!("{}: {e}", path.display()));
                return;
            }
        };
        for diag in validate_tree(&spec, exports) {
            self.diagnostics.push(format!("{}: {diag}", path.display()));
        }
    }

    fn check_compose(&mut self, path: &Path) -> Option<InstanceConfig> {
        let text = self.count_file(path)?;
        match parse_compose(&text) {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                self.diagnostics.push(format!("{}: {e}", path.display()));
                None
            }
        }
    }
}

/// Leaf names are resolvable only when every skillset pre-declares its
/// exports; one silent skillset makes any unknown-leaf verdict unsound.
fn declared_exports(cfg: &InstanceConfig) -> Option<BTreeSet<String>> {
    let skillsets: Vec<_> =
        cfg.components.iter().filter(|c| c.role == Role::Skillset).collect();
    if skillsets.is_empty() || skillsets.iter().any(|c| c.exports.is_empty()) {
        return None;
    }
    Some(skillsets.iter().flat_map(|c| c.exports.iter().cloned()).collect())
}

/// Validates one compose file plus everything it references. Extra params
/// files (from -p) are checked by the caller.
pub fn survey_compose(survey: &mut Survey, compose_path: &Path) {
    let base = compose_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let Some(cfg) = survey.check_compose(compose_path) else { return };
    if let Some(params) = &cfg.params_file {
        let p = resolve_path(&base, params);
        survey.check_params(&p);
    }
    let exports = declared_exports(&cfg);
    for component in &cfg.components {
        if let Some(tree) = &component.tree {
            let p = resolve_path(&base, tree);
            survey.check_tree(&p, exports.as_ref());
        }
    }
}

pub fn cmd_validate(args: ValidateArgs) -> i32 {
    let mut survey = Survey::default();
    for file in &args.files {
        survey_compose(&mut survey, file);
    }
    for params in &args.params {
        survey.check_params(params);
    }

    let ok = survey.diagnostics.is_empty();
    if args.json {
        let body = json!({
            "ok": ok,
            "files": survey.files.len(),
            "total_lines": survey.total_lines(),
            "paths": survey.files.iter().map(|(p, n)| json!({
                "path": p.display().to_string(),
                "lines": n,
            })).collect::<Vec<_>>(),
            "diagnostics": survey.diagnostics,
        });
        println!("{}", serde_json::to_string_pretty(&body).expect("summary serializes"));
    } else {
        for (path, lines) in &survey.files {
            println!("{:>6} lines  {}", lines, path.display());
        }
        println!("{} files, {} total lines", survey.files.len(), survey.total_lines());
        for diag in &survey.diagnostics {
            eprintln!("error: {diag}");
        }
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_CONFIG
    }
}
