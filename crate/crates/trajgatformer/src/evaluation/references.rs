//! Published ADE/FDE reference constants for the comparison table.
//!
//! These models are not reimplemented here; their numbers ship as constants
//! so reports can show relative improvement against them.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub name: String,
    pub ade: f64,
    pub fde: f64,
}

impl ReferenceEntry {
    fn new(name: &str, ade: f64, fde: f64) -> ReferenceEntry {
        ReferenceEntry {
            name: name.to_string(),
            ade,
            fde,
        }
    }
}

/// Worker-trajectory results reported on the original construction dataset.
pub fn worker_references() -> Vec<ReferenceEntry> {
    vec![
        ReferenceEntry::new("LSTM", 1.753, 3.332),
        ReferenceEntry::new("SGAN", 1.767, 3.343),
        ReferenceEntry::new("EA-Distance", 1.825, 3.349),
        ReferenceEntry::new("EA-Direction", 1.734, 3.201),
        ReferenceEntry::new("TrajGATFormer", 1.250, 2.350),
        ReferenceEntry::new("TrajGATFormer-Obstacle", 1.030, 2.060),
    ]
}

/// Panel-trajectory results (obstacle variant only).
pub fn panel_references() -> Vec<ReferenceEntry> {
    vec![ReferenceEntry::new(
        "TrajGATFormer-Obstacle (panel)",
        1.630,
        3.790,
    )]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tables_carry_the_published_rows() {
        let w = worker_references();
        assert_eq!(w.len(), 6);
        let lstm = &w[0];
        assert_eq!((lstm.ade, lstm.fde), (1.753, 3.332));
        let ours = w.iter().find(|r| r.name == "TrajGATFormer").unwrap();
        assert_eq!((ours.ade, ours.fde), (1.250, 2.350));
        let p = panel_references();
        assert_eq!((p[0].ade, p[0].fde), (1.630, 3.790));
    }
}
