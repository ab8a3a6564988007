//! JSON-lines sensor log: one object per line, t strictly increasing,
//! points non-empty.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagLine {
    pub t: f64,
    pub points: Vec<[f64; 3]>,
    pub pose: [f64; 4],
}

/// One line; empty point lists count as unparseable.
pub fn parse_line(text: &str) -> Option<BagLine> {
    let line: BagLine = serde_json::from_str(text).ok()?;
    if line.points.is_empty() {
        return None;
    }
    Some(line)
}

/// Kept lines plus the number skipped. Blank lines are ignored silently.
pub fn read_bag(path: &Path) -> std::io::Result<(Vec<BagLine>, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = Vec::new();
    let mut skipped = 0;
    for raw in text.lines() {
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(raw) {
            Some(line) => lines.push(line),
            None => skipped += 1,
        }
    }
    Ok((lines, skipped))
}

pub fn write_bag(path: &Path, lines: &[BagLine]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).expect("bag line serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Deterministic synthetic log: a sensor drifting forward with a slow turn.
/// The same (seed, lines) pair always yields the same bag, which is what
/// makes a generated stream auditable after the fact.
pub fn gen_bag(seed: u64, lines: usize) -> Vec<BagLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = [0.0f64, 0.0, 0.0, 0.0];
    let mut out = Vec::with_capacity(lines);
    for i in 0..lines {
        let n = rng.gen_range(3..=12);
        let points = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.0..0.5),
                ]
            })
            .collect();
        pose[0] += rng.gen_range(0.05..0.15);
        pose[1] += rng.gen_range(-0.05..0.05);
        pose[3] += rng.gen_range(-0.1..0.1);
        out.push(BagLine { t: i as f64 * 0.1, points, pose });
    }
    out
}

pub fn total_points(lines: &[BagLine]) -> usize {
    lines.iter().map(|l| l.points.len()).sum()
}
