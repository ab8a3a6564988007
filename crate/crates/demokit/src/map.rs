//! Transform-and-accumulate map. The point of this stand-in is honest
//! bookkeeping: every integrated point is stored exactly once, so the final
//! count must equal the sum of the integrated snapshot sizes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, u64>,
    pub snapshot_count: u64,
}

/// Pose [x, y, z, yaw]: yaw rotation about z, then translation. z never
/// rotates.
pub fn transform(pose: [f64; 4], p: [f64; 3]) -> [f64; 3] {
    let (s, c) = pose[3].sin_cos();
    [
        p[0] * c - p[1] * s + pose[0],
        p[0] * s + p[1] * c + pose[1],
        p[2] + pose[2],
    ]
}

impl MapState {
    pub fn integrate(&mut self, points: &[[f64; 3]], pose: [f64; 4]) {
        self.points.extend(points.iter().map(|p| transform(pose, *p)));
        self.snapshot_count += 1;
    }

    pub fn add_labels(&mut self, counts: &BTreeMap<String, u64>) {
        for (label, n) in counts {
            *self.labels.entry(label.clone()).or_default() += n;
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut text = serde_json::to_string_pretty(self).expect("map serializes");
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<MapState> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Deterministic stand-in for semantic detection: a label from a hash of
/// the centimeter-quantized coordinates.
pub fn label_for(p: [f64; 3]) -> &'static str {
    const LABELS: [&str; 4] = ["crack", "corrosion", "vegetation", "clear"];
    let q = |v: f64| (v * 100.0).round() as i64;
    let h = q(p[0]) ^ (q(p[1]) << 1) ^ (q(p[2]) << 2);
    LABELS[h.rem_euclid(LABELS.len() as i64) as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_about_z_sends_x_to_y() {
        let got = transform([0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2], [1.0, 0.0, 0.0]);
        let want = [0.0, 1.0, 0.0];
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn translation_applies_after_rotation_and_z_passes_through() {
        let got = transform([10.0, 20.0, 3.0, std::f64::consts::PI], [1.0, 2.0, 0.5]);
        assert!((got[0] - 9.0).abs() < 1e-9);
        assert!((got[1] - 18.0).abs() < 1e-9);
        assert!((got[2] - 3.5).abs() < 1e-9);
    }

    #[test]
    fn integrate_accounts_for_every_point_exactly_once() {
        let mut map = MapState::default();
        let batches: Vec<Vec<[f64; 3]>> = (1..=5)
            .map(|n| (0..n).map(|i| [i as f64, 0.0, 0.0]).collect())
            .collect();
        for batch in &batches {
            map.integrate(batch, [1.0, 2.0, 0.0, 0.3]);
        }
        assert_eq!(map.points.len(), batches.iter().map(Vec::len).sum::<usize>());
        assert_eq!(map.snapshot_count, 5);
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out/map.json");
        let mut map = MapState::default();
        map.integrate(&[[1.0, 2.0, 3.0]], [0.0; 4]);
        map.add_labels(&BTreeMap::from([("crack".to_string(), 2)]));
        map.save(&path).unwrap();
        assert_eq!(MapState::load(&path).unwrap(), map);
    }

    #[test]
    fn labels_are_deterministic_and_spread() {
        let p = [0.1234, -1.5, 0.25];
        assert_eq!(label_for(p), label_for(p));
        let distinct: std::collections::BTreeSet<&str> = crate::bag::gen_bag(7, 20)
            .iter()
            .flat_map(|l| l.points.iter().map(|p| label_for(*p)))
            .collect();
        assert!(distinct.len() > 1, "a real bag hits several labels: {distinct:?}");
    }
}
