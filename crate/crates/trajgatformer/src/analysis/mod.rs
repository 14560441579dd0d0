//! Dataset statistics: per-agent mean walking speed and stop fraction.

mod plot;

pub use plot::{emit_plot, PlotKind, PlotSpec, Series};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trackio::{AgentClass, Scene};

pub const DEFAULT_STOP_THRESHOLD: f64 = 0.4;

/// Mean speed in m/s: average over consecutive-point Euclidean distances,
/// scaled by the frame rate.
pub fn mean_walking_speed(track: &[(f64, f64)], fps: f64) -> Result<f64> {
    if track.len() < 2 {
        return Err(Error::InsufficientData(
            "mean speed needs at least 2 points".into(),
        ));
    }
    if fps <= 0.0 {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    let sum: f64 = track
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum();
    Ok(sum / (track.len() - 1) as f64 * fps)
}

/// Fraction of consecutive-point speeds below the stop threshold.
pub fn stop_fraction(track: &[(f64, f64)], fps: f64, thresh: f64) -> Result<f64> {
    if track.len() < 2 {
        return Err(Error::InsufficientData(
            "stop fraction needs at least 2 points".into(),
        ));
    }
    let below = track
        .windows(2)
        .filter(|w| {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            d * fps < thresh
        })
        .count();
    Ok(below as f64 / (track.len() - 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpeedStats {
    pub class: AgentClass,
    pub id: u64,
    pub mean_speed: f64,
    pub stop_fraction: f64,
    pub n_points: usize,
}

/// Per-agent speed statistics for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub scene: String,
    pub fps: f64,
    pub threshold: f64,
    pub agents: Vec<AgentSpeedStats>,
}

impl SpeedStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("stats serialize");
        crate::write_atomic(path, json.as_bytes())
    }
}

/// Compute stats for every agent with at least two recorded points.
pub fn analyze_scene(scene: &Scene, threshold: f64) -> Result<SpeedStats> {
    let mut agents = Vec::new();
    let mut seen = BTreeMap::new();
    for r in &scene.records {
        seen.entry((r.class, r.id)).or_insert(0usize);
        *seen.get_mut(&(r.class, r.id)).unwrap() += 1;
    }
    for ((class, id), n_points) in seen {
        if n_points < 2 {
            continue;
        }
        let track = scene.track_of(class, id);
        agents.push(AgentSpeedStats {
            class,
            id,
            mean_speed: mean_walking_speed(&track, scene.fps)?,
            stop_fraction: stop_fraction(&track, scene.fps, threshold)?,
            n_points,
        });
    }
    if agents.is_empty() {
        return Err(Error::InsufficientData(
            "no agent has two or more recorded points".into(),
        ));
    }
    Ok(SpeedStats {
        scene: scene.name.clone(),
        fps: scene.fps,
        threshold,
        agents,
    })
}
