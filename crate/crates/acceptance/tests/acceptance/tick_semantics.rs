//! Engine ticks versus the frozen recursive reference: every tree of depth
//! <= 2 over {Sequence, Fallback, Inverter, Parallel(k)}, every leaf-status
//! assignment, zero tolerance.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU8, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use coral::btxml::{NodeKind, NodeSpec, TreeSpec};
use coral::engine::{create_runtime, BehaviorLeaf, LeafBindings, LeafCtx, TickStatus};
use coral_acceptance::{enumerate_shapes, eval_shape, Assignments, RefStatus, Shape};

const MAX_DEPTH: usize = 2;
const MAX_ARITY: usize = 3;
const MAX_LEAVES: usize = 6;
const BUDGET: Duration = Duration::from_secs(10);

/// Leaf that reports whatever its assigned cell currently holds.
struct CellLeaf {
    cell: Arc<Vec<AtomicU8>>,
    idx: usize,
}

impl BehaviorLeaf for CellLeaf {
    fn tick(&mut self, _ctx: &mut LeafCtx<'_>) -> TickStatus {
        match self.cell[self.idx].load(Ordering::Relaxed) {
            0 => TickStatus::Running,
            1 => TickStatus::Success,
            _ => TickStatus::Failure,
        }
    }
}

fn code_of(status: RefStatus) -> u8 {
    match status {
        RefStatus::Running => 0,
        RefStatus::Success => 1,
        RefStatus::Failure => 2,
    }
}

fn ref_of(status: TickStatus) -> Option<RefStatus> {
    match status {
        TickStatus::Running => Some(RefStatus::Running),
        TickStatus::Success => Some(RefStatus::Success),
        TickStatus::Failure => Some(RefStatus::Failure),
        TickStatus::Idle => None,
    }
}

/// Same pre-order leaf numbering as the reference evaluator.
fn shape_to_node(shape: &Shape, next: &mut usize) -> NodeSpec {
    let composite = |kind: NodeKind, children: &[Shape], next: &mut usize| {
        let children = children.iter().map(|c| shape_to_node(c, next)).collect();
        NodeSpec { kind, attrs: BTreeMap::new(), children }
    };
    match shape {
        Shape::Leaf => {
            let mut node = NodeSpec::new(NodeKind::Action { name: "Scripted".into() });
            node.attrs.insert("idx".into(), next.to_string());
            *next += 1;
            node
        }
        Shape::Sequence(cs) => composite(NodeKind::Sequence, cs, next),
        Shape::Fallback(cs) => composite(NodeKind::Fallback, cs, next),
        Shape::Inverter(c) => composite(NodeKind::Inverter, std::slice::from_ref(c), next),
        Shape::Parallel(k, cs) => {
            let mut node = composite(NodeKind::Parallel, cs, next);
            node.attrs.insert("success_count".into(), k.to_string());
            node
        }
    }
}

fn spec_of(shape: &Shape) -> TreeSpec {
    let mut next = 0;
    let root = shape_to_node(shape, &mut next);
    TreeSpec {
        main_tree_id: "Sweep".into(),
        trees: [("Sweep".to_string(), root)].into(),
        source: None,
        warnings: vec![],
    }
}

#[test]
fn criterion_4_tick_semantics_oracle() {
    let started = Instant::now();
    let shapes = enumerate_shapes(MAX_DEPTH, MAX_ARITY, MAX_LEAVES);
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4).min(8);
    let evals = AtomicU64::new(0);
    let mismatches: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let cursor = AtomicU64::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let cell: Arc<Vec<AtomicU8>> =
                    Arc::new((0..MAX_LEAVES).map(|_| AtomicU8::new(0)).collect());
                let mut bindings = LeafBindings::new();
                let factory_cell = cell.clone();
                bindings.bind("Scripted", move |info| {
                    let idx = info
                        .attrs
                        .get("idx")
                        .and_then(|raw| raw.parse().ok())
                        .expect("sweep leaves carry an idx attribute");
                    Box::new(CellLeaf { cell: factory_cell.clone(), idx })
                });

                loop {
                    let at = cursor.fetch_add(1, Ordering::Relaxed) as usize;
                    let Some(shape) = shapes.get(at) else { break };
                    let spec = spec_of(shape);
                    let mut rt = create_runtime(&spec, &bindings, Duration::from_millis(1))
                        .expect("sweep trees are valid by construction");
                    let mut local = 0u64;
                    for assignment in Assignments::new(shape.leaf_count()) {
                        for (i, status) in assignment.iter().enumerate() {
                            cell[i].store(code_of(*status), Ordering::Relaxed);
                        }
                        rt.halt_tree();
                        let engine = ref_of(rt.tick_root());
                        let expected = eval_shape(shape, &assignment);
                        local += 1;
                        if engine != Some(expected) {
                            mismatches.lock().unwrap().push(format!(
                                "{shape:?} with {assignment:?}: engine {engine:?}, reference {expected:?}"
                            ));
                        }
                    }
                    evals.fetch_add(local, Ordering::Relaxed);
                }
            });
        }
    });

    let elapsed = started.elapsed();
    let evals = evals.load(Ordering::Relaxed);
    let mismatches = mismatches.into_inner().unwrap();
    let outcome = if !mismatches.is_empty() {
        Err(format!(
            "{} of {evals} evaluations disagree; first: {}",
            mismatches.len(),
            mismatches[0]
        ))
    } else if elapsed > BUDGET {
        Err(format!("agreement complete but took {elapsed:.2?} (budget {BUDGET:?})"))
    } else {
        Ok(format!(
            "{} shapes, {evals} evaluations, 100% agreement in {elapsed:.2?}",
            shapes.len()
        ))
    };
    crate::report(4, "tick-semantics oracle", outcome);
}
