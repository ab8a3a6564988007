//! Reference models the acceptance tests compare the real implementation
//! against. Everything here is deliberately independent of the `coral`
//! crates: plain recursion, plain std, written and frozen before the engine.

/// Leaf outcome for one tick. Idle is not a leaf result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefStatus {
    Running,
    Success,
    Failure,
}

pub const REF_STATUSES: [RefStatus; 3] =
    [RefStatus::Running, RefStatus::Success, RefStatus::Failure];

/// Tree shape with anonymous leaves. Leaves are numbered by pre-order
/// position when a status assignment is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Leaf,
    Sequence(Vec<Shape>),
    Fallback(Vec<Shape>),
    Inverter(Box<Shape>),
    /// Succeeds once `k` children have succeeded.
    Parallel(usize, Vec<Shape>),
}

impl Shape {
    pub fn leaf_count(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Inverter(c) => c.leaf_count(),
            Shape::Sequence(cs) | Shape::Fallback(cs) | Shape::Parallel(_, cs) => {
                cs.iter().map(Shape::leaf_count).sum()
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Shape::Leaf => 0,
            Shape::Inverter(c) => 1 + c.depth(),
            Shape::Sequence(cs) | Shape::Fallback(cs) | Shape::Parallel(_, cs) => {
                1 + cs.iter().map(Shape::depth).max().unwrap_or(0)
            }
        }
    }
}

/// One synchronous tick from idle state, every leaf reporting its assigned
/// status. `statuses` is indexed by pre-order leaf position.
pub fn eval_shape(shape: &Shape, statuses: &[RefStatus]) -> RefStatus {
    let mut next_leaf = 0;
    eval(shape, statuses, &mut next_leaf)
}

fn eval(shape: &Shape, statuses: &[RefStatus], next_leaf: &mut usize) -> RefStatus {
    match shape {
        Shape::Leaf => {
            let s = statuses[*next_leaf];
            *next_leaf += 1;
            s
        }
        Shape::Inverter(child) => match eval(child, statuses, next_leaf) {
            RefStatus::Success => RefStatus::Failure,
            RefStatus::Failure => RefStatus::Success,
            RefStatus::Running => RefStatus::Running,
        },
        Shape::Sequence(children) => {
            let mut result = RefStatus::Success;
            for (i, child) in children.iter().enumerate() {
                match eval(child, statuses, next_leaf) {
                    RefStatus::Success => continue,
                    other => {
                        // Later children are never ticked; keep leaf numbering
                        // aligned by skipping their positions.
                        skip_leaves(&children[i + 1..], next_leaf);
                        result = other;
                        break;
                    }
                }
            }
            result
        }
        Shape::Fallback(children) => {
            let mut result = RefStatus::Failure;
            for (i, child) in children.iter().enumerate() {
                match eval(child, statuses, next_leaf) {
                    RefStatus::Failure => continue,
                    other => {
                        skip_leaves(&children[i + 1..], next_leaf);
                        result = other;
                        break;
                    }
                }
            }
            result
        }
        Shape::Parallel(k, children) => {
            let (mut succeeded, mut failed) = (0usize, 0usize);
            for child in children {
                match eval(child, statuses, next_leaf) {
                    RefStatus::Success => succeeded += 1,
                    RefStatus::Failure => failed += 1,
                    RefStatus::Running => {}
                }
            }
            if succeeded >= *k {
                RefStatus::Success
            } else if failed > children.len() - *k {
                RefStatus::Failure
            } else {
                RefStatus::Running
            }
        }
    }
}

fn skip_leaves(shapes: &[Shape], next_leaf: &mut usize) {
    for s in shapes {
        *next_leaf += s.leaf_count();
    }
}

/// Every tree of depth <= `max_depth` over the four operators, composite
/// arity <= `max_arity`, at most `max_leaves` leaves. Each shape appears
/// exactly once (children tuples that never reach the previous depth are
/// skipped, since those trees were produced at a lower level).
pub fn enumerate_shapes(max_depth: usize, max_arity: usize, max_leaves: usize) -> Vec<Shape> {
    let mut all = vec![Shape::Leaf];
    for depth in 1..=max_depth {
        let pool: Vec<Shape> = all.clone();
        let fresh: Vec<Shape> = pool.iter().filter(|s| s.depth() == depth - 1).cloned().collect();
        if fresh.is_empty() {
            break;
        }
        for arity in 1..=max_arity {
            for children in tuples(&pool, &fresh, arity, max_leaves) {
                all.push(Shape::Sequence(children.clone()));
                all.push(Shape::Fallback(children.clone()));
                for k in 1..=children.len() {
                    all.push(Shape::Parallel(k, children.clone()));
                }
                if arity == 1 {
                    all.push(Shape::Inverter(Box::new(children[0].clone())));
                }
            }
        }
        all.retain(|s| s.leaf_count() <= max_leaves);
    }
    all
}

/// Child tuples of length `arity` drawn from `pool`, containing at least one
/// element of `fresh` and totalling at most `max_leaves` leaves.
fn tuples(pool: &[Shape], fresh: &[Shape], arity: usize, max_leaves: usize) -> Vec<Vec<Shape>> {
    let mut out = Vec::new();
    let mut current: Vec<Shape> = Vec::with_capacity(arity);
    fn rec(
        pool: &[Shape],
        fresh: &[Shape],
        arity: usize,
        max_leaves: usize,
        leaves_so_far: usize,
        has_fresh: bool,
        current: &mut Vec<Shape>,
        out: &mut Vec<Vec<Shape>>,
    ) {
        if current.len() == arity {
            if has_fresh {
                out.push(current.clone());
            }
            return;
        }
        for candidate in pool {
            let leaves = leaves_so_far + candidate.leaf_count();
            if leaves > max_leaves {
                continue;
            }
            let is_fresh = fresh.contains(candidate);
            current.push(candidate.clone());
            rec(pool, fresh, arity, max_leaves, leaves, has_fresh || is_fresh, current, out);
            current.pop();
        }
    }
    rec(pool, fresh, arity, max_leaves, 0, false, &mut current, &mut out);
    out
}

/// Iterator over all `|REF_STATUSES|^n` leaf assignments, odometer order.
pub struct Assignments {
    current: Vec<usize>,
    done: bool,
}

impl Assignments {
    pub fn new(leaves: usize) -> Self {
        Assignments { current: vec![0; leaves], done: false }
    }
}

impl Iterator for Assignments {
    type Item = Vec<RefStatus>;

    fn next(&mut self) -> Option<Vec<RefStatus>> {
        if self.done {
            return None;
        }
        let out = self.current.iter().map(|&i| REF_STATUSES[i]).collect();
        let mut pos = 0;
        loop {
            if pos == self.current.len() {
                self.done = true;
                break;
            }
            self.current[pos] += 1;
            if self.current[pos] < REF_STATUSES.len() {
                break;
            }
            self.current[pos] = 0;
            pos += 1;
        }
        Some(out)
    }
}
