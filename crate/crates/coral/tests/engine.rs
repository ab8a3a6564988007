//! Engine invariants under randomized trees and scripted leaf statuses:
//! determinism, memory resumption, reactive halting, parallel accounting.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use coral::btxml::{NodeKind, NodeSpec, TreeSpec};
use coral::engine::{create_runtime, BehaviorLeaf, LeafBindings, LeafCtx, TickStatus};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Tick(usize, TickStatus),
    Halt(usize),
    RootReturn(TickStatus),
}

/// Per-instance scripted leaf that logs its ticks and halts. The script is
/// consumed front to back; the last status repeats.
struct ScriptLeaf {
    idx: usize,
    script: Vec<TickStatus>,
    cursor: usize,
    log: Arc<Mutex<Vec<Event>>>,
}

impl BehaviorLeaf for ScriptLeaf {
    fn tick(&mut self, _ctx: &mut LeafCtx<'_>) -> TickStatus {
        let status = self.script[self.cursor.min(self.script.len() - 1)];
        self.cursor += 1;
        self.log.lock().unwrap().push(Event::Tick(self.idx, status));
        status
    }

    fn halt(&mut self) {
        self.log.lock().unwrap().push(Event::Halt(self.idx));
    }
}

fn status_of(byte: u8) -> TickStatus {
    match byte % 3 {
        0 => TickStatus::Success,
        1 => TickStatus::Failure,
        _ => TickStatus::Running,
    }
}

/// Builds bindings where leaf `L<i>` plays out `scripts[i]`.
fn script_bindings(scripts: &[Vec<u8>], log: Arc<Mutex<Vec<Event>>>) -> LeafBindings {
    let mut bindings = LeafBindings::new();
    for (idx, raw) in scripts.iter().enumerate() {
        let script: Vec<TickStatus> = raw.iter().copied().map(status_of).collect();
        let script = if script.is_empty() { vec![TickStatus::Success] } else { script };
        let log = log.clone();
        bindings.bind(format!("L{idx}"), move |_| {
            Box::new(ScriptLeaf { idx, script: script.clone(), cursor: 0, log: log.clone() })
        });
    }
    bindings
}

fn leaf(idx: usize) -> NodeSpec {
    NodeSpec::new(NodeKind::Action { name: format!("L{idx}") })
}

fn spec_of(root: NodeSpec) -> TreeSpec {
    TreeSpec {
        main_tree_id: "T".into(),
        trees: [("T".to_string(), root)].into(),
        source: None,
        warnings: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn determinism_same_tree_same_scripts_same_root_sequence(
        picks in proptest::collection::vec(0u8..255, 1..5),
        scripts in proptest::collection::vec(proptest::collection::vec(0u8..255, 1..6), 4),
        attempts in 1u8..4,
    ) {
        let root = build_tree(&picks, scripts.len(), attempts);
        let spec = spec_of(root);

        let mut sequences = Vec::new();
        for _ in 0..2 {
            let log = Arc::new(Mutex::new(Vec::new()));
            let bindings = script_bindings(&scripts, log);
            let mut rt = create_runtime(&spec, &bindings, Duration::from_millis(1)).unwrap();
            let seq: Vec<TickStatus> = (0..12).map(|_| rt.tick_root()).collect();
            sequences.push(seq);
        }
        prop_assert_eq!(&sequences[0], &sequences[1]);
    }

    #[test]
    fn memory_sequence_never_reticks_left_of_running(
        scripts in proptest::collection::vec(proptest::collection::vec(0u8..255, 1..8), 2..5),
    ) {
        let children: Vec<NodeSpec> = (0..scripts.len()).map(leaf).collect();
        let spec = spec_of(NodeSpec {
            kind: NodeKind::Sequence,
            attrs: BTreeMap::new(),
            children,
        });
        let log = Arc::new(Mutex::new(Vec::new()));
        let bindings = script_bindings(&scripts, log.clone());
        let mut rt = create_runtime(&spec, &bindings, Duration::from_millis(1)).unwrap();

        for _ in 0..10 {
            let st = rt.tick_root();
            log.lock().unwrap().push(Event::RootReturn(st));
        }

        // between consecutive root returns, if the previous round ended with
        // leaf r Running, the next round must not tick any leaf left of r
        let log = log.lock().unwrap();
        let rounds = split_rounds(&log);
        for pair in rounds.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            if prev.root == TickStatus::Running {
                let r = prev
                    .ticks
                    .iter()
                    .find(|(_, s)| *s == TickStatus::Running)
                    .map(|(i, _)| *i)
                    .expect("running root implies a running leaf in a leaf-only sequence");
                if let Some((first, _)) = next.ticks.first() {
                    prop_assert!(
                        *first >= r,
                        "resumed left of the running child: {:?} then {:?}",
                        prev.ticks,
                        next.ticks
                    );
                }
            }
        }
    }

    #[test]
    fn reactive_sequence_halts_preempted_child_exactly_once(
        scripts in proptest::collection::vec(proptest::collection::vec(0u8..255, 2..8), 2..5),
    ) {
        let children: Vec<NodeSpec> = (0..scripts.len()).map(leaf).collect();
        let spec = spec_of(NodeSpec {
            kind: NodeKind::ReactiveSequence,
            attrs: BTreeMap::new(),
            children,
        });
        let log = Arc::new(Mutex::new(Vec::new()));
        let bindings = script_bindings(&scripts, log.clone());
        let mut rt = create_runtime(&spec, &bindings, Duration::from_millis(1)).unwrap();
        for _ in 0..10 {
            let st = rt.tick_root();
            log.lock().unwrap().push(Event::RootReturn(st));
        }

        let log = log.lock().unwrap();
        let rounds = split_rounds(&log);
        for pair in rounds.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let prev_running = prev
                .ticks
                .iter()
                .find(|(_, s)| *s == TickStatus::Running)
                .map(|(i, _)| *i);
            let next_stop = next
                .ticks
                .iter()
                .find(|(_, s)| *s != TickStatus::Success)
                .map(|(i, _)| *i);
            if let (Some(r), Some(e)) = (prev_running, next_stop) {
                if e < r {
                    let halts = next.halts.iter().filter(|i| **i == r).count();
                    prop_assert_eq!(
                        halts,
                        1,
                        "preempted child {} halted {} times in round {:?}",
                        r,
                        halts,
                        next
                    );
                    prop_assert!(
                        !next.ticks.iter().any(|(i, _)| *i == r),
                        "preempted child was ticked in the same round"
                    );
                }
            }
        }
    }

    #[test]
    fn parallel_completion_accounting_is_exclusive(
        scripts in proptest::collection::vec(proptest::collection::vec(0u8..255, 1..6), 2..5),
        k_pick in any::<prop::sample::Index>(),
    ) {
        let n = scripts.len();
        let k = k_pick.index(n) + 1;
        let children: Vec<NodeSpec> = (0..n).map(leaf).collect();
        let mut attrs = BTreeMap::new();
        attrs.insert("success_count".to_string(), k.to_string());
        let spec = spec_of(NodeSpec { kind: NodeKind::Parallel, attrs, children });

        let log = Arc::new(Mutex::new(Vec::new()));
        let bindings = script_bindings(&scripts, log.clone());
        let mut rt = create_runtime(&spec, &bindings, Duration::from_millis(1)).unwrap();

        let mut settled: BTreeMap<usize, TickStatus> = BTreeMap::new();
        for _ in 0..12 {
            let marker = log.lock().unwrap().len();
            let st = rt.tick_root();
            let events: Vec<Event> = log.lock().unwrap()[marker..].to_vec();
            for ev in &events {
                if let Event::Tick(i, s) = ev {
                    if s.is_done() {
                        settled.insert(*i, *s);
                    }
                }
            }
            if st.is_done() {
                let succeeded =
                    settled.values().filter(|s| **s == TickStatus::Success).count();
                let failed = settled.values().filter(|s| **s == TickStatus::Failure).count();
                let won = succeeded >= k;
                let lost = failed > n - k;
                prop_assert!(won ^ lost, "succeeded={succeeded} failed={failed} k={k} n={n}");
                prop_assert_eq!(st == TickStatus::Success, won);
                break;
            }
        }
    }
}

/// One root tick's worth of leaf events.
#[derive(Debug)]
struct Round {
    ticks: Vec<(usize, TickStatus)>,
    halts: Vec<usize>,
    root: TickStatus,
}

fn split_rounds(log: &[Event]) -> Vec<Round> {
    let mut rounds = Vec::new();
    let mut current = Round { ticks: vec![], halts: vec![], root: TickStatus::Idle };
    for ev in log {
        match ev {
            Event::Tick(i, s) => current.ticks.push((*i, *s)),
            Event::Halt(i) => current.halts.push(*i),
            Event::RootReturn(st) => {
                current.root = *st;
                rounds.push(std::mem::replace(
                    &mut current,
                    Round { ticks: vec![], halts: vec![], root: TickStatus::Idle },
                ));
            }
        }
    }
    rounds
}

/// Deterministic small tree from a byte recipe: each byte picks a composite
/// or decorator layer over the scripted leaves.
fn build_tree(picks: &[u8], leaves: usize, attempts: u8) -> NodeSpec {
    let mut nodes: Vec<NodeSpec> = (0..leaves).map(leaf).collect();
    for &pick in picks {
        let grouped = match pick % 7 {
            0 => NodeSpec { kind: NodeKind::Sequence, attrs: BTreeMap::new(), children: nodes },
            1 => NodeSpec { kind: NodeKind::Fallback, attrs: BTreeMap::new(), children: nodes },
            2 => NodeSpec {
                kind: NodeKind::ReactiveSequence,
                attrs: BTreeMap::new(),
                children: nodes,
            },
            3 => NodeSpec {
                kind: NodeKind::ReactiveFallback,
                attrs: BTreeMap::new(),
                children: nodes,
            },
            4 => {
                let mut attrs = BTreeMap::new();
                attrs.insert(
                    "success_count".to_string(),
                    (usize::from(pick) % nodes.len().max(1) + 1).to_string(),
                );
                NodeSpec { kind: NodeKind::Parallel, attrs, children: nodes }
            }
            5 => {
                let mut attrs = BTreeMap::new();
                attrs.insert("num_attempts".to_string(), attempts.to_string());
                NodeSpec {
                    kind: NodeKind::Retry,
                    attrs,
                    children: vec![NodeSpec {
                        kind: NodeKind::Fallback,
                        attrs: BTreeMap::new(),
                        children: nodes,
                    }],
                }
            }
            _ => NodeSpec {
                kind: NodeKind::Inverter,
                attrs: BTreeMap::new(),
                children: vec![NodeSpec {
                    kind: NodeKind::Sequence,
                    attrs: BTreeMap::new(),
                    children: nodes,
                }],
            },
        };
        nodes = vec![grouped];
    }
    match nodes.len() {
        1 => nodes.pop().unwrap(),
        _ => NodeSpec { kind: NodeKind::Sequence, attrs: BTreeMap::new(), children: nodes },
    }
}
