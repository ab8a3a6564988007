//! Process supervision for one instance: broker first, components in
//! dependency order, readiness barrier on skillset manifests, restart
//! budgets, and symmetric teardown. Children run in their own process
//! groups so teardown can reap whole subtrees.

use std::collections::{BTreeMap, BTreeSet};
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWriteExt, BufReader};
use tokio::process::{Child, Command};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::{sleep, Instant};

use super::compose::{resolve_path, start_order};
use super::{
    env_keys, ComponentSpec, InstanceConfig, ParamSet, RestartPolicy, Role, RunSpec, EXIT_OK,
    EXIT_RUNTIME,
};
use crate::bus::{BrokerHandle, BusClient, BusError, ServiceHandle};
use crate::coordination::SharedStore;
use crate::registry::{fetch_manifests, RegistryError};

pub const MAX_RESTARTS: u32 = 3;
const STOP_GRACE: Duration = Duration::from_secs(5);
const RESTART_PAUSE: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum UpError {
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("component {component}: {detail}")]
    Spawn { component: String, detail: String },
    #[error("readiness deadline passed, missing skillsets: {missing:?}")]
    Readiness { missing: Vec<String> },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone)]
pub struct LogLine {
    pub component: String,
    /// "out" or "err".
    pub stream: &'static str,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitCause {
    /// Exited on its own with this code before any stop request.
    Exited(i32),
    /// Killed by this signal before any stop request.
    Signaled(i32),
    /// Stopped within the grace window after the stop signal.
    Graceful,
    /// Ignored the stop signal and was force-killed.
    Forced,
    /// Never ran (spawn failed or teardown preceded the start).
    NotStarted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComponentState {
    Running { pid: u32, restarts: u32 },
    /// Between a failure and its respawn.
    Restarting { restarts: u32 },
    Exited { cause: ExitCause },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExitReport {
    pub components: BTreeMap<String, ExitCause>,
}

impl ExitReport {
    pub fn all_graceful(&self) -> bool {
        self.components
            .values()
            .all(|c| matches!(c, ExitCause::Graceful | ExitCause::Exited(0)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceOutcome {
    /// Every executor finished with code 0.
    Clean,
    /// A component failed past its restart budget.
    ComponentFailed { component: String, cause: ExitCause },
}

impl InstanceOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            InstanceOutcome::Clean => EXIT_OK,
            InstanceOutcome::ComponentFailed { .. } => EXIT_RUNTIME,
        }
    }
}

#[derive(Clone)]
pub struct UpOptions {
    /// Paths in the compose file resolve against this directory; it is also
    /// the children's working directory.
    pub base_dir: PathBuf,
    /// Per-component log files land here when set.
    pub log_dir: Option<PathBuf>,
    /// Mirror of every captured log line.
    pub echo: Option<mpsc::UnboundedSender<LogLine>>,
    pub stop_grace: Duration,
}

impl UpOptions {
    pub fn new(base_dir: impl Into<PathBuf>) -> UpOptions {
        UpOptions {
            base_dir: base_dir.into(),
            log_dir: None,
            echo: None,
            stop_grace: STOP_GRACE,
        }
    }
}

#[derive(Debug)]
struct Slot {
    role: Role,
    pid: Option<u32>,
    restarts: u32,
    cause: Option<ExitCause>,
}

struct Inner {
    stopping: AtomicBool,
    slots: Mutex<BTreeMap<String, Slot>>,
    outcome: watch::Sender<Option<InstanceOutcome>>,
}

impl Inner {
    fn stopping(&self) -> bool {
        self.stopping.load(Ordering::SeqCst)
    }

    /// Permanent exit: no restart follows. Resolves the instance outcome
    /// unless a teardown is already in progress.
    fn record_exit(&self, name: &str, cause: ExitCause) {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots.get_mut(name).expect("known component");
        slot.pid = None;
        slot.cause = Some(cause.clone());
        if self.stopping() {
            return;
        }
        if !matches!(cause, ExitCause::Exited(0)) {
            self.outcome.send_if_modified(|o| {
                if o.is_none() {
                    *o = Some(InstanceOutcome::ComponentFailed {
                        component: name.to_string(),
                        cause,
                    });
                    true
                } else {
                    false
                }
            });
            return;
        }
        let has_executor = slots.values().any(|s| s.role == Role::Executor);
        let pending = slots
            .values()
            .any(|s| s.role == Role::Executor && s.cause.is_none());
        if has_executor && !pending {
            self.outcome.send_if_modified(|o| {
                if o.is_none() {
                    *o = Some(InstanceOutcome::Clean);
                    true
                } else {
                    false
                }
            });
        }
    }
}

pub struct InstanceHandle {
    cfg: InstanceConfig,
    bus_addr: String,
    grace: Duration,
    /// Names in spawn order; teardown walks it in reverse.
    sequence: Vec<String>,
    broker: Option<BrokerHandle>,
    client: BusClient,
    services: Vec<ServiceHandle>,
    inner: Arc<Inner>,
    monitors: Vec<JoinHandle<()>>,
    outcome_rx: watch::Receiver<Option<InstanceOutcome>>,
    report: Option<ExitReport>,
}

impl std::fmt::Debug for InstanceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InstanceHandle")
            .field("instance_id", &self.cfg.instance_id)
            .field("bus_addr", &self.bus_addr)
            .field("components", &self.status())
            .finish_non_exhaustive()
    }
}

pub async fn up_instance(
    cfg: InstanceConfig,
    params: ParamSet,
    opts: UpOptions,
) -> Result<InstanceHandle, UpError> {
    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| UpError::Spawn {
            component: "<logs>".to_string(),
            detail: format!("log dir {}: {e}", dir.display()),
        })?;
    }
    let broker = BrokerHandle::start(&cfg.bus).await?;
    let bus_addr = broker.addr().to_string();
    let client = BusClient::connect(&bus_addr, Some("coral_supervisor")).await?;

    let mut services = Vec::new();
    services.push(SharedStore::new().serve(&client).await?);
    for c in &cfg.components {
        let payload: Value = serde_json::from_str(&params.namespace_json(&c.params_ns))
            .expect("namespace_json emits valid json");
        let ch = format!("coral/params/get/{}", c.name);
        let handle = client
            .serve(&ch, move |_req| {
                let payload = payload.clone();
                async move { payload }
            })
            .await?;
        services.push(handle);
    }

    let (outcome_tx, outcome_rx) = watch::channel(None);
    let inner = Arc::new(Inner {
        stopping: AtomicBool::new(false),
        slots: Mutex::new(
            cfg.components
                .iter()
                .map(|c| {
                    let slot = Slot { role: c.role, pid: None, restarts: 0, cause: None };
                    (c.name.clone(), slot)
                })
                .collect(),
        ),
        outcome: outcome_tx,
    });

    let mut handle = InstanceHandle {
        cfg,
        bus_addr,
        grace: opts.stop_grace,
        sequence: Vec::new(),
        broker: Some(broker),
        client,
        services,
        inner,
        monitors: Vec::new(),
        outcome_rx,
        report: None,
    };

    if let Err(e) = spawn_all(&mut handle, &params, &opts).await {
        handle.nuke().await;
        return Err(e);
    }
    if let Err(e) = handle.readiness().await {
        handle.nuke().await;
        return Err(e);
    }
    Ok(handle)
}

/// Spec-named alias for [`InstanceHandle::down`].
pub async fn down_instance(handle: &mut InstanceHandle) -> ExitReport {
    handle.down().await
}

async fn spawn_all(
    handle: &mut InstanceHandle,
    params: &ParamSet,
    opts: &UpOptions,
) -> Result<(), UpError> {
    let expected: Vec<String> = handle.cfg.skillset_names().into_iter().collect();
    let expected = expected.join(",");
    for idx in start_order(&handle.cfg.components) {
        let spec = handle.cfg.components[idx].clone();
        let launcher =
            make_launcher(&spec, &handle.cfg, params, &handle.bus_addr, &expected, opts)?;
        let child = launcher.spawn()?;
        {
            let mut slots = handle.inner.slots.lock().unwrap();
            slots.get_mut(&spec.name).unwrap().pid = child.id();
        }
        handle.sequence.push(spec.name.clone());
        let inner = handle.inner.clone();
        handle
            .monitors
            .push(tokio::spawn(monitor(spec.name, launcher, inner, child)));
    }
    Ok(())
}

impl InstanceHandle {
    pub fn instance_id(&self) -> &str {
        &self.cfg.instance_id
    }

    /// Actual broker address (resolves port 0 binds).
    pub fn bus_addr(&self) -> &str {
        &self.bus_addr
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.cfg
    }

    /// Component names in the order they were spawned.
    pub fn start_sequence(&self) -> &[String] {
        &self.sequence
    }

    pub fn status(&self) -> BTreeMap<String, ComponentState> {
        let slots = self.inner.slots.lock().unwrap();
        slots
            .iter()
            .map(|(name, s)| {
                let state = match (&s.cause, s.pid) {
                    (Some(cause), _) => ComponentState::Exited { cause: cause.clone() },
                    (None, Some(pid)) => ComponentState::Running { pid, restarts: s.restarts },
                    (None, None) => ComponentState::Restarting { restarts: s.restarts },
                };
                (name.clone(), state)
            })
            .collect()
    }

    pub fn outcome(&self) -> Option<InstanceOutcome> {
        self.outcome_rx.borrow().clone()
    }

    /// Resolves when every executor has finished or any component has
    /// failed for good. Never resolves for a healthy headless instance.
    pub async fn wait(&mut self) -> InstanceOutcome {
        loop {
            let current = self.outcome_rx.borrow().clone();
            if let Some(outcome) = current {
                return outcome;
            }
            if self.outcome_rx.changed().await.is_err() {
                return InstanceOutcome::Clean;
            }
        }
    }

    /// Stop signal in reverse start order, grace window, force-kill for
    /// stragglers, broker last. Idempotent.
    pub async fn down(&mut self) -> ExitReport {
        if let Some(report) = &self.report {
            return report.clone();
        }
        self.inner.stopping.store(true, Ordering::SeqCst);
        let already_exited: BTreeSet<String> = {
            let slots = self.inner.slots.lock().unwrap();
            slots
                .iter()
                .filter(|(_, s)| s.cause.is_some())
                .map(|(n, _)| n.clone())
                .collect()
        };
        for name in self.sequence.iter().rev() {
            let pid = self.inner.slots.lock().unwrap()[name].pid;
            if let Some(pid) = pid {
                unsafe {
                    libc::killpg(pid as i32, libc::SIGTERM);
                }
            }
        }
        let deadline = Instant::now() + self.grace;
        while Instant::now() < deadline {
            let all_down =
                self.inner.slots.lock().unwrap().values().all(|s| s.pid.is_none());
            if all_down {
                break;
            }
            sleep(Duration::from_millis(25)).await;
        }
        let mut forced = BTreeSet::new();
        {
            let slots = self.inner.slots.lock().unwrap();
            for (name, slot) in slots.iter() {
                if let Some(pid) = slot.pid {
                    unsafe {
                        libc::killpg(pid as i32, libc::SIGKILL);
                    }
                    forced.insert(name.clone());
                }
            }
        }
        for m in self.monitors.drain(..) {
            let _ = m.await;
        }
        let mut components = BTreeMap::new();
        {
            let slots = self.inner.slots.lock().unwrap();
            for (name, slot) in slots.iter() {
                let cause = match &slot.cause {
                    None => ExitCause::NotStarted,
                    Some(c) if already_exited.contains(name) => c.clone(),
                    Some(_) if forced.contains(name) => ExitCause::Forced,
                    Some(_) => ExitCause::Graceful,
                };
                components.insert(name.clone(), cause);
            }
        }
        self.services.clear();
        self.client.close();
        if let Some(broker) = self.broker.take() {
            broker.shutdown().await;
        }
        let report = ExitReport { components };
        self.report = Some(report.clone());
        report
    }

    async fn readiness(&self) -> Result<(), UpError> {
        let skillsets = self.cfg.skillset_names();
        if skillsets.is_empty() {
            return Ok(());
        }
        match fetch_manifests(&self.client, &skillsets, self.cfg.readiness_deadline).await {
            Ok(_) => Ok(()),
            Err(RegistryError::Readiness { missing }) => Err(UpError::Readiness { missing }),
            Err(RegistryError::Bus(e)) => Err(UpError::Bus(e)),
            Err(other) => Err(UpError::Manifest(other.to_string())),
        }
    }

    /// Abort path: no grace, no report.
    async fn nuke(&mut self) {
        self.inner.stopping.store(true, Ordering::SeqCst);
        let pids: Vec<u32> = {
            let slots = self.inner.slots.lock().unwrap();
            slots.values().filter_map(|s| s.pid).collect()
        };
        for pid in pids {
            unsafe {
                libc::killpg(pid as i32, libc::SIGKILL);
            }
        }
        for m in self.monitors.drain(..) {
            let _ = m.await;
        }
        self.services.clear();
        self.client.close();
        if let Some(broker) = self.broker.take() {
            broker.shutdown().await;
        }
        self.report = Some(ExitReport::default());
    }
}

impl Drop for InstanceHandle {
    fn drop(&mut self) {
        if self.report.is_some() {
            return;
        }
        // Dropped without down (test panic, early return): reap the groups
        // synchronously so nothing outlives the supervisor.
        self.inner.stopping.store(true, Ordering::SeqCst);
        let slots = self.inner.slots.lock().unwrap();
        for slot in slots.values() {
            if let Some(pid) = slot.pid {
                unsafe {
                    libc::killpg(pid as i32, libc::SIGKILL);
                }
            }
        }
    }
}

struct Launcher {
    component: String,
    argv: Vec<String>,
    env: BTreeMap<String, String>,
    cwd: PathBuf,
    restart: RestartPolicy,
    log_path: Option<PathBuf>,
    echo: Option<mpsc::UnboundedSender<LogLine>>,
}

fn make_launcher(
    spec: &ComponentSpec,
    cfg: &InstanceConfig,
    params: &ParamSet,
    bus_addr: &str,
    expected_skillsets: &str,
    opts: &UpOptions,
) -> Result<Launcher, UpError> {
    let mut env = spec.env.clone();
    env.insert(env_keys::BUS_ADDR.to_string(), bus_addr.to_string());
    env.insert(env_keys::COMPONENT_NAME.to_string(), spec.name.clone());
    env.insert(env_keys::INSTANCE_ID.to_string(), cfg.instance_id.clone());
    env.insert(env_keys::PARAMS.to_string(), params.namespace_json(&spec.params_ns));
    if spec.role == Role::Executor {
        let tree = spec.tree.as_ref().expect("validated at parse");
        env.insert(
            env_keys::TREE_PATH.to_string(),
            resolve_path(&opts.base_dir, tree).to_string_lossy().into_owned(),
        );
        env.insert(env_keys::EXPECTED_SKILLSETS.to_string(), expected_skillsets.to_string());
        env.insert(
            env_keys::READINESS_DEADLINE_MS.to_string(),
            cfg.readiness_deadline.as_millis().to_string(),
        );
    }
    let argv = match &spec.run {
        RunSpec::Command(argv) => argv.clone(),
        RunSpec::Image(image) => container_argv(&spec.name, image, &env)?,
    };
    Ok(Launcher {
        component: spec.name.clone(),
        argv,
        env,
        cwd: opts.base_dir.clone(),
        restart: spec.restart,
        log_path: opts.log_dir.as_ref().map(|d| d.join(format!("{}.log", spec.name))),
        echo: opts.echo.clone(),
    })
}

impl Launcher {
    fn spawn(&self) -> Result<Child, UpError> {
        let program = resolve_program(&self.argv[0], &self.cwd);
        let mut cmd = Command::new(&program);
        cmd.args(&self.argv[1..])
            .envs(&self.env)
            .current_dir(&self.cwd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .kill_on_drop(true);
        let mut child = cmd.spawn().map_err(|e| UpError::Spawn {
            component: self.component.clone(),
            detail: format!("{}: {e}", program.display()),
        })?;
        self.pump(child.stdout.take(), "out");
        self.pump(child.stderr.take(), "err");
        Ok(child)
    }

    fn pump<R>(&self, src: Option<R>, stream: &'static str)
    where
        R: AsyncRead + Unpin + Send + 'static,
    {
        let Some(src) = src else { return };
        let component = self.component.clone();
        let echo = self.echo.clone();
        let log_path = self.log_path.clone();
        tokio::spawn(async move {
            let mut log = match &log_path {
                Some(p) => tokio::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .await
                    .ok(),
                None => None,
            };
            let mut lines = BufReader::new(src).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if let Some(f) = log.as_mut() {
                    let _ = f.write_all(format!("[{stream}] {line}\n").as_bytes()).await;
                    let _ = f.flush().await;
                }
                if let Some(tx) = &echo {
                    let _ = tx.send(LogLine {
                        component: component.clone(),
                        stream,
                        line,
                    });
                }
            }
        });
    }
}

async fn monitor(name: String, launcher: Launcher, inner: Arc<Inner>, mut child: Child) {
    loop {
        let status = child.wait().await;
        let cause = cause_of(status);
        let failed = !matches!(cause, ExitCause::Exited(0));
        let budget_left = inner.slots.lock().unwrap()[&name].restarts < MAX_RESTARTS;
        if failed && launcher.restart == RestartPolicy::OnFailure && budget_left && !inner.stopping()
        {
            {
                let mut slots = inner.slots.lock().unwrap();
                let slot = slots.get_mut(&name).unwrap();
                slot.pid = None;
                slot.restarts += 1;
            }
            sleep(RESTART_PAUSE).await;
            if !inner.stopping() {
                match launcher.spawn() {
                    Ok(next) => {
                        inner.slots.lock().unwrap().get_mut(&name).unwrap().pid = next.id();
                        child = next;
                        continue;
                    }
                    Err(e) => {
                        tracing::warn!(component = %name, "respawn failed: {e}");
                    }
                }
            }
        }
        inner.record_exit(&name, cause);
        return;
    }
}

fn cause_of(status: std::io::Result<ExitStatus>) -> ExitCause {
    match status {
        Ok(s) => match s.code() {
            Some(code) => ExitCause::Exited(code),
            None => ExitCause::Signaled(s.signal().unwrap_or(0)),
        },
        Err(_) => ExitCause::NotStarted,
    }
}

/// argv[0] with a '/' resolves against the compose dir; a bare name prefers
/// a sibling of the running executable (so a workspace build finds its own
/// bins), then falls back to PATH.
fn resolve_program(argv0: &str, base: &Path) -> PathBuf {
    if argv0.contains('/') {
        return resolve_path(base, Path::new(argv0));
    }
    if let Ok(exe) = std::env::current_exe() {
        if let Some(dir) = exe.parent() {
            let sibling = dir.join(argv0);
            if sibling.is_file() {
                return sibling;
            }
            if let Some(above) = dir.parent() {
                let candidate = above.join(argv0);
                if candidate.is_file() {
                    return candidate;
                }
            }
        }
    }
    PathBuf::from(argv0)
}

fn container_argv(
    component: &str,
    image: &str,
    env: &BTreeMap<String, String>,
) -> Result<Vec<String>, UpError> {
    let runtime = ["docker", "podman"]
        .into_iter()
        .find(|r| on_path(r))
        .ok_or_else(|| UpError::Spawn {
            component: component.to_string(),
            detail: format!("image {image:?} needs docker or podman on PATH"),
        })?;
    let mut argv = vec![
        runtime.to_string(),
        "run".to_string(),
        "--rm".to_string(),
        "--network".to_string(),
        "host".to_string(),
    ];
    for (k, v) in env {
        argv.push("-e".to_string());
        argv.push(format!("{k}={v}"));
    }
    argv.push(image.to_string());
    Ok(argv)
}

fn on_path(name: &str) -> bool {
    std::env::var_os("PATH")
        .map(|p| std::env::split_paths(&p).any(|d| d.join(name).is_file()))
        .unwrap_or(false)
}
