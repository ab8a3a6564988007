//! Instance registry: one JSON handle per running instance under
//! `<compose dir>/.coral/`, written after startup succeeds and removed on
//! teardown. A handle whose pid is gone is stale, not an error.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandleFile {
    pub instance_id: String,
    pub bus_addr: String,
    pub supervisor_pid: u32,
    pub log_dir: PathBuf,
    pub compose_path: PathBuf,
    /// Unix seconds.
    pub started_at: u64,
}

pub fn handle_path(base: &Path, instance_id: &str) -> PathBuf {
    base.join(".coral").join(format!("{instance_id}.json"))
}

pub fn default_log_dir(base: &Path, instance_id: &str) -> PathBuf {
    base.join(".coral").join("logs").join(instance_id)
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl HandleFile {
    pub fn store(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let body = serde_json::to_string_pretty(self).expect("handle serializes");
        std::fs::write(path, format!("{body}\n"))
    }

    pub fn load(path: &Path) -> std::io::Result<HandleFile> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// True when the pid is alive and is a `coral __supervise` or foreground
/// `coral up` process; guards against pid reuse after a crash.
pub fn pid_is_supervisor(pid: u32) -> bool {
    let Ok(cmdline) = std::fs::read(format!("/proc/{pid}/cmdline")) else {
        return false;
    };
    let text = String::from_utf8_lossy(&cmdline).replace('\0', " ");
    text.contains("__supervise") || (text.contains("coral") && text.contains(" up "))
}
