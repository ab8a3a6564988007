//! Process-level lifecycle around the library supervisor: foreground and
//! detached up, down via handle files, and captured-log retrieval.

use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::time::{Duration, Instant};

use tokio::signal::unix::{signal, SignalKind};

use coral::composer::{
    parse_compose, parse_params, resolve_path, up_instance, InstanceConfig, InstanceOutcome,
    ParamSet, UpError, UpOptions, EXIT_CONFIG, EXIT_OK, EXIT_READINESS, EXIT_RUNTIME,
};

use crate::handle::{default_log_dir, handle_path, now_unix, pid_is_supervisor, HandleFile};
use crate::validate::{survey_compose, Survey};
use crate::{InstanceRef, LogsArgs, UpArgs};

struct Loaded {
    cfg: InstanceConfig,
    params: ParamSet,
    base: PathBuf,
    compose_abs: PathBuf,
    log_dir: PathBuf,
}

fn absolutize(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|cwd| cwd.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn init_logging() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
}

/// Runs the same pre-flight `validate` would, then materializes the config.
/// `CORAL_BUS_ADDR` in the environment overrides the compose bus address.
fn load(args: &UpArgs) -> Result<Loaded, i32> {
    let compose_abs = absolutize(&args.file);
    let base = compose_abs.parent().unwrap_or(Path::new("/")).to_path_buf();

    let mut survey = Survey::default();
    survey_compose(&mut survey, &compose_abs);
    let params_override = args.params.as_ref().map(|p| absolutize(p));
    if let Some(p) = &params_override {
        survey.check_params(p);
    }
    if !survey.diagnostics.is_empty() {
        for d in &survey.diagnostics {
            eprintln!("error: {d}");
        }
        return Err(EXIT_CONFIG);
    }

    let text = std::fs::read_to_string(&compose_abs).map_err(|e| {
        eprintln!("error: {}: {e}", compose_abs.display());
        EXIT_CONFIG
    })?;
    let mut cfg = parse_compose(&text).map_err(|e| {
        eprintln!("error: {}: {e}", compose_abs.display());
        EXIT_CONFIG
    })?;
    if let Ok(bus) = std::env::var("CORAL_BUS_ADDR") {
        cfg.bus = bus;
    }

    let params_path =
        params_override.or_else(|| cfg.params_file.as_ref().map(|p| resolve_path(&base, p)));
    let params = match params_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| {
                eprintln!("error: {}: {e}", p.display());
                EXIT_CONFIG
            })?;
            parse_params(&text).map_err(|e| {
                eprintln!("error: {}: {e}", p.display());
                EXIT_CONFIG
            })?
        }
        None => ParamSet::default(),
    };

    let log_dir = args
        .log_dir
        .as_ref()
        .map(|p| absolutize(p))
        .unwrap_or_else(|| default_log_dir(&base, &cfg.instance_id));
    Ok(Loaded { cfg, params, base, compose_abs, log_dir })
}

pub fn cmd_up(args: UpArgs) -> i32 {
    init_logging();
    if args.detach {
        return detach(&args);
    }
    match load(&args) {
        Ok(loaded) => block_on_instance(loaded, true),
        Err(code) => code,
    }
}

pub fn cmd_supervise(args: UpArgs) -> i32 {
    init_logging();
    match load(&args) {
        Ok(loaded) => block_on_instance(loaded, false),
        Err(code) => code,
    }
}

fn block_on_instance(loaded: Loaded, echo: bool) -> i32 {
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: runtime: {e}");
            return EXIT_RUNTIME;
        }
    };
    rt.block_on(run_instance(loaded, echo))
}

async fn run_instance(loaded: Loaded, echo: bool) -> i32 {
    let Loaded { cfg, params, base, compose_abs, log_dir } = loaded;
    let mut opts = UpOptions::new(&base);
    opts.log_dir = Some(log_dir.clone());
    let mut printer = None;
    if echo {
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
        opts.echo = Some(tx);
        printer = Some(tokio::spawn(async move {
            while let Some(line) = rx.recv().await {
                println!("{:>14} | {}", line.component, line.line);
            }
        }));
    }

    let mut handle = match up_instance(cfg, params, opts).await {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                UpError::Readiness { .. } => EXIT_READINESS,
                _ => EXIT_CONFIG,
            };
        }
    };

    let hpath = handle_path(&base, handle.instance_id());
    let hfile = HandleFile {
        instance_id: handle.instance_id().to_string(),
        bus_addr: handle.bus_addr().to_string(),
        supervisor_pid: std::process::id(),
        log_dir: log_dir.clone(),
        compose_path: compose_abs,
        started_at: now_unix(),
    };
    if let Err(e) = hfile.store(&hpath) {
        tracing::warn!("handle file {}: {e}", hpath.display());
    }
    tracing::info!("instance {} up, bus {}", handle.instance_id(), handle.bus_addr());

    let mut sigterm = signal(SignalKind::terminate()).expect("signal handler installs");
    let resolved: Option<InstanceOutcome> = tokio::select! {
        outcome = handle.wait() => Some(outcome),
        _ = sigterm.recv() => None,
        _ = tokio::signal::ctrl_c() => None,
    };
    handle.down().await;
    let _ = std::fs::remove_file(&hpath);
    if let Some(p) = printer {
        // Instance is down, so every echo sender is gone and the printer
        // drains whatever is left and ends.
        let _ = p.await;
    }
    match resolved {
        Some(outcome) => {
            if let InstanceOutcome::ComponentFailed { component, cause } = &outcome {
                eprintln!("error: component {component} failed ({cause:?})");
            }
            outcome.exit_code()
        }
        None => EXIT_OK,
    }
}

fn detach(args: &UpArgs) -> i32 {
    // Pre-flight in-process so config errors surface here, not in a log.
    let loaded = match load(args) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let hpath = handle_path(&loaded.base, &loaded.cfg.instance_id);
    if hpath.exists() {
        if let Ok(prev) = HandleFile::load(&hpath) {
            if pid_is_supervisor(prev.supervisor_pid) {
                eprintln!(
                    "error: instance {} already running (pid {})",
                    prev.instance_id, prev.supervisor_pid
                );
                return EXIT_CONFIG;
            }
        }
        let _ = std::fs::remove_file(&hpath);
    }

    let exe = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: current_exe: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&loaded.log_dir) {
        eprintln!("error: log dir {}: {e}", loaded.log_dir.display());
        return EXIT_CONFIG;
    }
    let sup_log = loaded.log_dir.join("supervisor.log");
    let sink = match std::fs::File::create(&sup_log) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", sup_log.display());
            return EXIT_CONFIG;
        }
    };
    let sink2 = match sink.try_clone() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", sup_log.display());
            return EXIT_CONFIG;
        }
    };

    let mut cmd = std::process::Command::new(&exe);
    cmd.arg("__supervise").arg("-f").arg(&loaded.compose_abs);
    if let Some(p) = &args.params {
        cmd.arg("-p").arg(absolutize(p));
    }
    cmd.arg("--log-dir").arg(&loaded.log_dir);
    cmd.stdin(Stdio::null()).stdout(sink).stderr(sink2);
    {
        use std::os::unix::process::CommandExt;
        // Own process group: the supervisor outlives this shell.
        cmd.process_group(0);
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: spawning supervisor: {e}");
            return EXIT_RUNTIME;
        }
    };

    let deadline = loaded.cfg.readiness_deadline + Duration::from_secs(15);
    let give_up = Instant::now() + deadline;
    loop {
        if hpath.exists() {
            if let Ok(h) = HandleFile::load(&hpath) {
                println!(
                    "instance {} up (bus {}), logs in {}",
                    h.instance_id,
                    h.bus_addr,
                    h.log_dir.display()
                );
                return EXIT_OK;
            }
            // Partially written handle; poll again.
        }
        match child.try_wait() {
            Ok(Some(status)) => {
                let code = status.code().unwrap_or(EXIT_RUNTIME);
                if code == EXIT_OK {
                    println!("instance ran to completion before detach returned");
                } else {
                    eprintln!("error: supervisor exited during startup; see {}", sup_log.display());
                }
                return code;
            }
            Ok(None) => {}
            Err(e) => {
                eprintln!("error: waiting on supervisor: {e}");
                return EXIT_RUNTIME;
            }
        }
        if Instant::now() >= give_up {
            let _ = child.kill();
            eprintln!("error: instance not ready within {deadline:?}");
            return EXIT_READINESS;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Resolves an InstanceRef to (directory holding .coral/, instance id).
fn locate(at: &InstanceRef) -> Result<(PathBuf, String), i32> {
    if let Some(file) = &at.file {
        let compose_abs = absolutize(file);
        let base = compose_abs.parent().unwrap_or(Path::new("/")).to_path_buf();
        let text = std::fs::read_to_string(&compose_abs).map_err(|e| {
            eprintln!("error: {}: {e}", compose_abs.display());
            EXIT_CONFIG
        })?;
        let cfg = parse_compose(&text).map_err(|e| {
            eprintln!("error: {}: {e}", compose_abs.display());
            EXIT_CONFIG
        })?;
        return Ok((base, cfg.instance_id));
    }
    let base = match &at.dir {
        Some(d) => absolutize(d),
        None => std::env::current_dir().unwrap_or_else(|_| PathBuf::from(".")),
    };
    match &at.instance {
        Some(id) => Ok((base, id.clone())),
        None => {
            eprintln!("error: pass -f <compose file> or --instance <id>");
            Err(EXIT_CONFIG)
        }
    }
}

pub fn cmd_down(at: InstanceRef) -> i32 {
    let (base, instance_id) = match locate(&at) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let hpath = handle_path(&base, &instance_id);
    let hfile = match HandleFile::load(&hpath) {
        Ok(h) => h,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            eprintln!(
                "error: no running instance {instance_id:?} (no handle under {})",
                base.join(".coral").display()
            );
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {}: {e}", hpath.display());
            return EXIT_CONFIG;
        }
    };
    if !pid_is_supervisor(hfile.supervisor_pid) {
        let _ = std::fs::remove_file(&hpath);
        println!("instance {instance_id} was not running; removed stale handle");
        return EXIT_OK;
    }

    let pid = hfile.supervisor_pid as libc::pid_t;
    unsafe { libc::kill(pid, libc::SIGTERM) };
    let give_up = Instant::now() + Duration::from_secs(60);
    while Instant::now() < give_up {
        if unsafe { libc::kill(pid, 0) } != 0 {
            let _ = std::fs::remove_file(&hpath);
            println!("stopped {instance_id}");
            return EXIT_OK;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    // SIGKILL here would orphan the component processes, so refuse.
    eprintln!("error: supervisor pid {pid} survived SIGTERM for 60s");
    EXIT_RUNTIME
}

pub fn cmd_logs(args: LogsArgs) -> i32 {
    let (base, instance_id) = match locate(&args.at) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let hpath = handle_path(&base, &instance_id);
    let log_dir = match HandleFile::load(&hpath) {
        Ok(h) => h.log_dir,
        // Instance gone; captured logs may still be on disk.
        Err(_) => default_log_dir(&base, &instance_id),
    };
    let log_file = log_dir.join(format!("{}.log", args.component));
    match std::fs::read_to_string(&log_file) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", log_file.display());
            if let Ok(entries) = std::fs::read_dir(&log_dir) {
                let names: Vec<String> = entries
                    .flatten()
                    .filter_map(|e| e.file_name().into_string().ok())
                    .filter(|n| n.ends_with(".log"))
                    .collect();
                if !names.is_empty() {
                    eprintln!("available: {}", names.join(", "));
                }
            }
            EXIT_CONFIG
        }
    }
}
