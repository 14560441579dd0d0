//! Tracked-record ingestion: file parsing, pixel→world calibration, and
//! dataset windowing.

mod homography;
mod window;

pub use homography::{apply_homography, estimate_homography, Homography};
pub use window::{
    build_windows, load_dataset, save_dataset, split_dataset, AgentTrack, DatasetSplit,
    WindowSample,
};

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Worker,
    Obstacle,
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentClass::Worker => write!(f, "worker"),
            AgentClass::Obstacle => write!(f, "obstacle"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Pixel,
    World,
}

/// One detection/tracking row: `frame, class, id, x, y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u64,
    pub class: AgentClass,
    pub id: u64,
    pub pos_x: f64,
    pub pos_y: f64,
}

/// All records of one recording, sorted by frame. The unit applies to every
/// record in the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub records: Vec<TrackRecord>,
    pub fps: f64,
    pub name: String,
    pub unit: Unit,
}

impl Scene {
    /// Build a scene, sorting by frame and rejecting duplicate
    /// (frame, class, id) triples.
    pub fn new(mut records: Vec<TrackRecord>, fps: f64, name: String, unit: Unit) -> Result<Scene> {
        if fps <= 0.0 {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        records.sort_by_key(|r| r.frame);
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert((r.frame, r.class, r.id)) {
                return Err(Error::Integrity(format!(
                    "duplicate record for frame {} class {} id {}",
                    r.frame, r.class, r.id
                )));
            }
        }
        Ok(Scene {
            records,
            fps,
            name,
            unit,
        })
    }

    /// Apply a homography to every record, producing a world-unit scene.
    pub fn to_world(&self, h: &Homography) -> Result<Scene> {
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let (x, y) = apply_homography(h, (r.pos_x, r.pos_y))?;
            records.push(TrackRecord {
                pos_x: x,
                pos_y: y,
                ..r.clone()
            });
        }
        Ok(Scene {
            records,
            fps: self.fps,
            name: self.name.clone(),
            unit: Unit::World,
        })
    }

    /// Ordered positions of one agent, by frame.
    pub fn track_of(&self, class: AgentClass, id: u64) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.class == class && r.id == id)
            .map(|r| (r.pos_x, r.pos_y))
            .collect()
    }

    /// Distinct (class, id) pairs present in the scene, sorted.
    pub fn agent_ids(&self) -> Vec<(AgentClass, u64)> {
        let set: BTreeSet<(AgentClass, u64)> =
            self.records.iter().map(|r| (r.class, r.id)).collect();
        set.into_iter().collect()
    }
}

fn parse_class(token: &str) -> Option<AgentClass> {
    match token.to_ascii_lowercase().as_str() {
        "worker" => Some(AgentClass::Worker),
        "obstacle" | "panel" => Some(AgentClass::Obstacle),
        _ => None,
    }
}

/// Parse a delimited track file (comma or whitespace, `#` comments, optional
/// header). Each data line carries `frame, class, id, x, y`.
pub fn parse_track_file(path: &Path, unit: Unit, fps: f64) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    parse_track_text(&text, unit, fps, name)
}

/// Parse track records from text; see [`parse_track_file`].
pub fn parse_track_text(text: &str, unit: Unit, fps: f64, name: String) -> Result<Scene> {
    let mut records = Vec::new();
    let mut saw_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let frame: std::result::Result<u64, _> = fields[0].parse();
        if frame.is_err() && !saw_data {
            // Optional header row.
            saw_data = true;
            continue;
        }
        saw_data = true;
        let frame = frame.map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("frame '{}' is not a non-negative integer", fields[0]),
        })?;
        let class = parse_class(fields[1]).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unknown class '{}'", fields[1]),
        })?;
        let id: u64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("id '{}' is not a non-negative integer", fields[2]),
        })?;
        let pos_x: f64 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("x '{}' is not numeric", fields[3]),
        })?;
        let pos_y: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("y '{}' is not numeric", fields[4]),
        })?;
        if !pos_x.is_finite() || !pos_y.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: "position is not finite".into(),
            });
        }
        records.push(TrackRecord {
            frame,
            class,
            id,
            pos_x,
            pos_y,
        });
    }
    Scene::new(records, fps, name, unit)
}

/// Write a scene back out in the track-file format.
pub fn format_track_file(scene: &Scene) -> String {
    let mut out = String::from("# frame,class,id,x,y\n");
    for r in &scene.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.frame, r.class, r.id, r.pos_x, r.pos_y
        ));
    }
    out
}
