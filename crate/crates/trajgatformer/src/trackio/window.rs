//! Sliding-window dataset construction and the temporal train/val/test split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trackio::{AgentClass, Scene, Unit};

/// One agent's slice of a window: `t_obs` observed plus `t_pred` future
/// positions in meters, covering consecutive frames with no gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub class: AgentClass,
    pub id: u64,
    pub observed: Vec<(f64, f64)>,
    pub future: Vec<(f64, f64)>,
}

impl AgentTrack {
    pub fn last_observed(&self) -> (f64, f64) {
        *self.observed.last().expect("observed is non-empty")
    }
}

/// One training example: all agents with gap-free coverage of the same
/// 20-frame span, keyed by the window's start frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub scene_window_id: i64,
    pub agents: Vec<AgentTrack>,
    pub obstacles: Vec<AgentTrack>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub ratios: (f64, f64, f64),
    pub fps: f64,
}

/// Slide a window of `t_obs + t_pred` frames over the scene. A window exists
/// at each start frame where at least one worker covers the whole span with
/// no missing frame; agents with gaps are dropped from that window only.
pub fn build_windows(
    scene: &Scene,
    t_obs: usize,
    t_pred: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if scene.unit != Unit::World {
        return Err(Error::Config(
            "windows require world-unit positions; calibrate pixel scenes first".into(),
        ));
    }
    if t_obs == 0 || t_pred == 0 || stride == 0 {
        return Err(Error::Config(
            "t_obs, t_pred, and stride must all be positive".into(),
        ));
    }
    let span = t_obs + t_pred;
    let mut by_agent: BTreeMap<(AgentClass, u64), BTreeMap<u64, (f64, f64)>> = BTreeMap::new();
    for r in &scene.records {
        by_agent
            .entry((r.class, r.id))
            .or_default()
            .insert(r.frame, (r.pos_x, r.pos_y));
    }
    let (min_frame, max_frame) = match (
        scene.records.first().map(|r| r.frame),
        scene.records.last().map(|r| r.frame),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(Vec::new()),
    };
    if max_frame - min_frame + 1 < span as u64 {
        return Ok(Vec::new());
    }

    let mut windows = Vec::new();
    let mut start = min_frame;
    while start + span as u64 - 1 <= max_frame {
        let mut agents = Vec::new();
        let mut obstacles = Vec::new();
        for ((class, id), frames) in &by_agent {
            let covered = (start..start + span as u64).all(|f| frames.contains_key(&f));
            if !covered {
                continue;
            }
            let points: Vec<(f64, f64)> = (start..start + span as u64)
                .map(|f| frames[&f])
                .collect();
            let track = AgentTrack {
                class: *class,
                id: *id,
                observed: points[..t_obs].to_vec(),
                future: points[t_obs..].to_vec(),
            };
            match class {
                AgentClass::Worker => agents.push(track),
                AgentClass::Obstacle => obstacles.push(track),
            }
        }
        if !agents.is_empty() {
            windows.push(WindowSample {
                scene_window_id: start as i64,
                agents,
                obstacles,
            });
        }
        start += stride as u64;
    }
    Ok(windows)
}

/// Contiguous-in-time split: the earliest windows go to train, then val,
/// then test, so near-duplicate windows never leak across splits. Train and
/// val sizes are floored; the remainder goes to test; every split is then
/// kept non-empty. The `seed` parameter is reserved for alternative split
/// strategies — the temporal split is deterministic without it.
pub fn split_dataset(
    windows: &[WindowSample],
    ratios: (f64, f64, f64),
    _seed: u64,
    fps: f64,
) -> Result<DatasetSplit> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    let n = windows.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 windows to split, got {n}"
        )));
    }
    let mut sorted: Vec<WindowSample> = windows.to_vec();
    sorted.sort_by_key(|w| w.scene_window_id);

    let mut n_train = (rt * n as f64).floor() as usize;
    let mut n_val = (rv * n as f64).floor() as usize;
    let mut n_test = n - n_train - n_val;
    // Keep every split populated, taking from train first.
    while n_val == 0 || n_test == 0 || n_train == 0 {
        if n_val == 0 {
            if n_train > 1 {
                n_train -= 1;
            } else {
                n_test -= 1;
            }
            n_val += 1;
        } else if n_test == 0 {
            if n_train > 1 {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
            n_test += 1;
        } else {
            if n_val > 1 {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
            n_train += 1;
        }
    }

    let val_end = n_train + n_val;
    Ok(DatasetSplit {
        train: sorted[..n_train].to_vec(),
        val: sorted[n_train..val_end].to_vec(),
        test: sorted[val_end..].to_vec(),
        ratios,
        fps,
    })
}

const FORMAT_TAG: &str = "tgf-dataset";

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    fps: f64,
    ratios: [f64; 3],
    t_obs: usize,
    t_pred: usize,
    train: Vec<WindowSample>,
    val: Vec<WindowSample>,
    test: Vec<WindowSample>,
}

/// Serialize a split to one JSON document.
pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    let probe = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .flat_map(|w| &w.agents)
        .next();
    let (t_obs, t_pred) = probe
        .map(|a| (a.observed.len(), a.future.len()))
        .unwrap_or((8, 12));
    let doc = DatasetFile {
        format: FORMAT_TAG.to_string(),
        version: 1,
        fps: split.fps,
        ratios: [split.ratios.0, split.ratios.1, split.ratios.2],
        t_obs,
        t_pred,
        train: split.train.clone(),
        val: split.val.clone(),
        test: split.test.clone(),
    };
    let json = serde_json::to_string(&doc).expect("dataset serializes");
    crate::write_atomic(path, json.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("dataset file: {e}"),
    })?;
    if doc.format != FORMAT_TAG {
        return Err(Error::Integrity(format!(
            "unexpected format tag '{}' in dataset file",
            doc.format
        )));
    }
    for w in doc.train.iter().chain(&doc.val).chain(&doc.test) {
        for a in w.agents.iter().chain(&w.obstacles) {
            if a.observed.len() != doc.t_obs || a.future.len() != doc.t_pred {
                return Err(Error::Integrity(format!(
                    "window {} agent {} has {}+{} points, expected {}+{}",
                    w.scene_window_id,
                    a.id,
                    a.observed.len(),
                    a.future.len(),
                    doc.t_obs,
                    doc.t_pred
                )));
            }
        }
    }
    Ok(DatasetSplit {
        train: doc.train,
        val: doc.val,
        test: doc.test,
        ratios: (doc.ratios[0], doc.ratios[1], doc.ratios[2]),
        fps: doc.fps,
    })
}
