//! Supervisor lifecycle tests against shell-script stand-ins for real
//! components: env delivery, start order, restart budgets, readiness
//! timeouts, and teardown hygiene.

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::Duration;

use serde_json::json;
use tempfile::TempDir;
use tokio::sync::mpsc;
use tokio::time::{sleep, Instant};

use coral::bus::BusClient;
use coral::composer::{
    parse_compose, parse_params, up_instance, ComponentState, ExitCause, InstanceOutcome,
    UpError, UpOptions, MAX_RESTARTS,
};

fn script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    let mut perms = std::fs::metadata(&path).unwrap().permissions();
    perms.set_mode(0o755);
    std::fs::set_permissions(&path, perms).unwrap();
    format!("./{name}")
}

/// Pids whose cmdline mentions `marker`. Stub scripts carry their tempdir
/// in argv, so the marker finds every live instance child.
fn procs_with_marker(marker: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir("/proc").unwrap().flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else {
            continue;
        };
        let Ok(raw) = std::fs::read(format!("/proc/{pid}/cmdline")) else {
            continue;
        };
        if String::from_utf8_lossy(&raw).replace('\0', " ").contains(marker) {
            out.push(pid);
        }
    }
    out
}

async fn wait_until(what: &str, mut probe: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while Instant::now() < deadline {
        if probe() {
            return;
        }
        sleep(Duration::from_millis(25)).await;
    }
    panic!("timed out waiting for {what}");
}

fn compose_header() -> &'static str {
    "x-coral:\n  headless: true\n  bus: 127.0.0.1:0\nservices:\n"
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn each_component_sees_exactly_its_own_params() {
    let dir = TempDir::new().unwrap();
    // Scripts run from the compose dir, so the marker is absolute.
    let idle = script(
        dir.path(),
        "echo_params.sh",
        "echo \"PARAMS=$CORAL_PARAMS\"\nwhile true; do sleep 0.2; done",
    );
    let compose = format!(
        "{}  alpha:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n  beta:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let params = "alpha:\n  parameters:\n    secret: a\nbeta:\n  parameters:\n    secret: b\n";

    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut opts = UpOptions::new(dir.path());
    opts.echo = Some(tx);
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        parse_params(params).unwrap(),
        opts,
    )
    .await
    .unwrap();

    let mut seen = std::collections::BTreeMap::new();
    let deadline = Instant::now() + Duration::from_secs(5);
    while seen.len() < 2 && Instant::now() < deadline {
        match tokio::time::timeout(Duration::from_millis(200), rx.recv()).await {
            Ok(Some(line)) if line.line.starts_with("PARAMS=") => {
                seen.insert(line.component.clone(), line.line.clone());
            }
            _ => {}
        }
    }
    assert_eq!(seen.len(), 2, "lines from both components: {seen:?}");
    assert_eq!(seen["alpha"], r#"PARAMS={"secret":"a"}"#);
    assert_eq!(seen["beta"], r#"PARAMS={"secret":"b"}"#);

    handle.down().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn components_start_after_their_dependencies() {
    let dir = TempDir::new().unwrap();
    let idle = script(dir.path(), "idle.sh", "while true; do sleep 0.2; done");
    let compose = format!(
        "{}  top:\n    command: [{idle}]\n    depends_on: [mid]\n    x-coral: {{ role: driver }}\n  mid:\n    command: [{idle}]\n    depends_on: [base]\n    x-coral: {{ role: driver }}\n  base:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    let seq = handle.start_sequence().to_vec();
    let pos = |n: &str| seq.iter().position(|s| s == n).unwrap();
    assert!(pos("base") < pos("mid"), "{seq:?}");
    assert!(pos("mid") < pos("top"), "{seq:?}");

    handle.down().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn on_failure_restarts_until_the_component_stays_up() {
    let dir = TempDir::new().unwrap();
    let flaky = script(
        dir.path(),
        "flaky.sh",
        "n=$(cat runs 2>/dev/null || echo 0)\nn=$((n+1))\necho $n > runs\nif [ $n -lt 3 ]; then exit 1; fi\nwhile true; do sleep 0.2; done",
    );
    let compose = format!(
        "{}  flaky:\n    command: [{flaky}]\n    x-coral: {{ role: driver, restart: on-failure }}\n",
        compose_header()
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    wait_until("flaky to stay up after two restarts", || {
        matches!(
            handle.status()["flaky"],
            ComponentState::Running { restarts: 2, .. }
        )
    })
    .await;
    assert_eq!(handle.outcome(), None, "two crashes stay within budget");

    handle.down().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn exhausted_restart_budget_fails_the_instance() {
    let dir = TempDir::new().unwrap();
    let doomed = script(dir.path(), "doomed.sh", "echo 1 >> runs\nexit 7");
    let compose = format!(
        "{}  doomed:\n    command: [{doomed}]\n    x-coral: {{ role: driver, restart: on-failure }}\n",
        compose_header()
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    let outcome = handle.wait().await;
    assert_eq!(
        outcome,
        InstanceOutcome::ComponentFailed {
            component: "doomed".to_string(),
            cause: ExitCause::Exited(7),
        }
    );
    assert_eq!(outcome.exit_code(), 4);
    match handle.status()["doomed"] {
        ComponentState::Exited { .. } => {}
        ref other => panic!("expected exited, got {other:?}"),
    }
    let runs = std::fs::read_to_string(dir.path().join("runs")).unwrap();
    assert_eq!(
        runs.lines().count() as u32,
        MAX_RESTARTS + 1,
        "initial run plus the full budget"
    );

    handle.down().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn never_restart_component_fails_fast() {
    let dir = TempDir::new().unwrap();
    let doomed = script(dir.path(), "doomed.sh", "echo 1 >> runs\nexit 7");
    let compose = format!(
        "{}  doomed:\n    command: [{doomed}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    let outcome = handle.wait().await;
    assert!(matches!(
        outcome,
        InstanceOutcome::ComponentFailed { ref component, cause: ExitCause::Exited(7) } if component == "doomed"
    ));
    let runs = std::fs::read_to_string(dir.path().join("runs")).unwrap();
    assert_eq!(runs.lines().count(), 1, "no restarts without on-failure");

    handle.down().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clean_executor_exit_resolves_the_instance() {
    let dir = TempDir::new().unwrap();
    let mission = script(dir.path(), "mission.sh", "sleep 0.3\nexit 0");
    let idle = script(dir.path(), "idle.sh", "while true; do sleep 0.2; done");
    let compose = format!(
        "x-coral: {{ bus: 127.0.0.1:0 }}\nservices:\n  mission:\n    command: [{mission}]\n    x-coral: {{ role: executor, tree: mission.xml }}\n  feed:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n"
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    let outcome = handle.wait().await;
    assert_eq!(outcome, InstanceOutcome::Clean);
    assert_eq!(outcome.exit_code(), 0);

    let report = handle.down().await;
    assert_eq!(report.components["mission"], ExitCause::Exited(0));
    assert_eq!(report.components["feed"], ExitCause::Graceful);
    assert!(report.all_graceful());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn readiness_timeout_names_the_silent_skillset_and_tears_down() {
    let dir = TempDir::new().unwrap();
    let marker = dir.path().to_string_lossy().into_owned();
    let idle = script(dir.path(), "mute_skills.sh", "while true; do sleep 0.2; done");
    let compose = format!(
        "x-coral:\n  headless: true\n  bus: 127.0.0.1:0\n  readiness_deadline: 1200ms\nservices:\n  mute_skills:\n    command: [{idle}]\n    x-coral: {{ role: skillset }}\n"
    );
    let err = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap_err();

    match err {
        UpError::Readiness { missing } => assert_eq!(missing, vec!["mute_skills".to_string()]),
        other => panic!("expected readiness error, got {other}"),
    }
    assert!(
        procs_with_marker(&marker).is_empty(),
        "teardown leaves no children"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn spawn_failure_aborts_and_reaps_earlier_components() {
    let dir = TempDir::new().unwrap();
    let marker = dir.path().to_string_lossy().into_owned();
    let idle = script(dir.path(), "idle.sh", "while true; do sleep 0.2; done");
    let compose = format!(
        "{}  first:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n  second:\n    command: [./does_not_exist.sh]\n    depends_on: [first]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let err = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap_err();

    assert!(
        matches!(err, UpError::Spawn { ref component, .. } if component == "second"),
        "{err}"
    );
    assert!(procs_with_marker(&marker).is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn down_is_graceful_idempotent_and_leaves_no_processes() {
    let dir = TempDir::new().unwrap();
    let marker = dir.path().to_string_lossy().into_owned();
    let polite = script(
        dir.path(),
        "polite.sh",
        "trap 'exit 0' TERM\nwhile true; do sleep 0.2 & wait $!; done",
    );
    let compose = format!(
        "{}  polite:\n    command: [{polite}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();
    wait_until("stub to appear in the process table", || {
        !procs_with_marker(&marker).is_empty()
    })
    .await;

    let report = handle.down().await;
    assert_eq!(report.components["polite"], ExitCause::Graceful);
    assert!(procs_with_marker(&marker).is_empty(), "no orphans after down");

    let again = handle.down().await;
    assert_eq!(again, report, "second down is a cached no-op");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stubborn_component_is_force_killed_after_the_grace_window() {
    let dir = TempDir::new().unwrap();
    let marker = dir.path().to_string_lossy().into_owned();
    let stubborn = script(
        dir.path(),
        "stubborn.sh",
        "trap '' TERM\nwhile true; do sleep 0.2; done",
    );
    let compose = format!(
        "{}  stubborn:\n    command: [{stubborn}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let mut opts = UpOptions::new(dir.path());
    opts.stop_grace = Duration::from_millis(400);
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        Default::default(),
        opts,
    )
    .await
    .unwrap();
    wait_until("stub to appear in the process table", || {
        !procs_with_marker(&marker).is_empty()
    })
    .await;

    let started = Instant::now();
    let report = handle.down().await;
    assert!(started.elapsed() >= Duration::from_millis(400));
    assert_eq!(report.components["stubborn"], ExitCause::Forced);
    assert!(!report.all_graceful());
    assert!(procs_with_marker(&marker).is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn params_service_answers_on_the_bus() {
    let dir = TempDir::new().unwrap();
    let idle = script(dir.path(), "idle.sh", "while true; do sleep 0.2; done");
    let compose = format!(
        "{}  lidar:\n    command: [{idle}]\n    x-coral: {{ role: driver }}\n",
        compose_header()
    );
    let params = "lidar:\n  parameters:\n    rate: 5\n    frame: base_link\n";
    let mut handle = up_instance(
        parse_compose(&compose).unwrap(),
        parse_params(params).unwrap(),
        UpOptions::new(dir.path()),
    )
    .await
    .unwrap();

    let client = BusClient::connect(handle.bus_addr(), Some("probe")).await.unwrap();
    let reply = client
        .call("coral/params/get/lidar", json!({}), Duration::from_secs(2))
        .await
        .unwrap();
    assert_eq!(reply, json!({"rate": 5, "frame": "base_link"}));

    coral::coordination::shared_set(&client, "mood", json!("calm")).await.unwrap();
    let got = coral::coordination::shared_get(&client, "mood").await.unwrap();
    assert_eq!(got, Some(json!("calm")));

    handle.down().await;
}
