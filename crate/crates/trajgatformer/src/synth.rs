//! Seeded synthetic scene generation — the desk-scale stand-in for a real
//! tracked recording.
//!
//! Three worker profiles: straight walks, constant-curvature turns, and
//! workstation-style dwell/walk mixtures with controllable mean speed and
//! stop fraction. A separate generator couples worker turns to panel motion
//! for obstacle-interaction studies.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::trackio::{build_windows, AgentClass, Scene, TrackRecord, Unit, WindowSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Linear,
    Turning,
    Workstation,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Profile::Linear),
            "turning" => Ok(Profile::Turning),
            "workstation" => Ok(Profile::Workstation),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected linear, turning, or workstation)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub frames: usize,
    pub workers: usize,
    pub obstacles: usize,
    pub fps: f64,
    /// Walking speed in m/s (linear and turning profiles).
    pub speed: f64,
    /// Per-coordinate Gaussian position noise in meters.
    pub noise_sigma: f64,
    /// Heading change magnitude per frame in radians (turning profile).
    pub turn_rate: f64,
    /// Target stop fraction (workstation profile).
    pub stop_target: f64,
    /// Target mean speed in m/s (workstation profile).
    pub mean_speed: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            frames: 60,
            workers: 2,
            obstacles: 0,
            fps: 2.5,
            speed: 1.0,
            noise_sigma: 0.0,
            turn_rate: 0.15,
            stop_target: 0.7,
            mean_speed: 0.93,
            seed: 0,
        }
    }
}

fn push_track(
    records: &mut Vec<TrackRecord>,
    class: AgentClass,
    id: u64,
    points: &[(f64, f64)],
) {
    for (frame, p) in points.iter().enumerate() {
        records.push(TrackRecord {
            frame: frame as u64,
            class,
            id,
            pos_x: p.0,
            pos_y: p.1,
        });
    }
}

fn noisy(points: Vec<(f64, f64)>, sigma: f64, rng: &mut SeedRng) -> Vec<(f64, f64)> {
    if sigma == 0.0 {
        return points;
    }
    points
        .into_iter()
        .map(|p| (p.0 + sigma * rng.normal(), p.1 + sigma * rng.normal()))
        .collect()
}

fn straight_track(frames: usize, step: f64, rng: &mut SeedRng) -> Vec<(f64, f64)> {
    let heading = rng.uniform(0.0, std::f64::consts::TAU);
    let start = (rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
    (0..frames)
        .map(|t| {
            (
                start.0 + step * heading.cos() * t as f64,
                start.1 + step * heading.sin() * t as f64,
            )
        })
        .collect()
}

fn turning_track(frames: usize, step: f64, turn_rate: f64, rng: &mut SeedRng) -> Vec<(f64, f64)> {
    let mut heading = rng.uniform(0.0, std::f64::consts::TAU);
    let kappa = if rng.bernoulli(0.5) { turn_rate } else { -turn_rate };
    let mut pos = (rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
    let mut out = vec![pos];
    for _ in 1..frames {
        pos = (pos.0 + step * heading.cos(), pos.1 + step * heading.sin());
        heading += kappa;
        out.push(pos);
    }
    out
}

/// Dwell/walk mixture hitting the stop fraction exactly (stopped transitions
/// are floor((frames-1)·target)) and the mean speed exactly, by solving for
/// the walking speed given a fixed slow-dwell speed.
fn workstation_track(
    frames: usize,
    fps: f64,
    stop_target: f64,
    mean_speed: f64,
    rng: &mut SeedRng,
) -> Result<Vec<(f64, f64)>> {
    if !(0.0..=1.0).contains(&stop_target) {
        return Err(Error::Config(format!(
            "stop target must be in [0, 1], got {stop_target}"
        )));
    }
    let m = frames - 1;
    let stopped = (m as f64 * stop_target).floor() as usize;
    let walking = m - stopped;
    let dwell_speed = 0.2; // below the 0.4 m/s stop threshold
    let walk_speed = if walking == 0 {
        0.0
    } else {
        (m as f64 * mean_speed - stopped as f64 * dwell_speed) / walking as f64
    };
    if walking > 0 && walk_speed < crate::analysis::DEFAULT_STOP_THRESHOLD {
        return Err(Error::Config(format!(
            "mean speed {mean_speed} with stop target {stop_target} needs a walking \
             speed of {walk_speed:.3} m/s, below the stop threshold"
        )));
    }
    // Seeded placement of the stopped transitions.
    let mut labels = vec![false; m];
    for l in labels.iter_mut().take(stopped) {
        *l = true;
    }
    rng.shuffle(&mut labels);

    let mut heading = rng.uniform(0.0, std::f64::consts::TAU);
    let mut pos = (rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
    let mut out = vec![pos];
    for &is_stop in &labels {
        let speed = if is_stop { dwell_speed } else { walk_speed };
        let step = speed / fps;
        // Drift the heading a little between transitions.
        heading += rng.uniform(-0.2, 0.2);
        pos = (pos.0 + step * heading.cos(), pos.1 + step * heading.sin());
        out.push(pos);
    }
    Ok(out)
}

/// Generate one scene with the requested worker profile. Obstacles, when
/// requested, move on straight slow tracks.
pub fn generate(profile: Profile, opts: &SynthOptions) -> Result<Scene> {
    if opts.frames < 2 || opts.workers == 0 {
        return Err(Error::Config(
            "synthesis needs >= 2 frames and >= 1 worker".into(),
        ));
    }
    let rng = SeedRng::new(opts.seed);
    let step = opts.speed / opts.fps;
    let mut records = Vec::new();
    for id in 1..=opts.workers as u64 {
        let mut track_rng = rng.split(&format!("worker-{id}"));
        let points = match profile {
            Profile::Linear => straight_track(opts.frames, step, &mut track_rng),
            Profile::Turning => {
                turning_track(opts.frames, step, opts.turn_rate, &mut track_rng)
            }
            Profile::Workstation => workstation_track(
                opts.frames,
                opts.fps,
                opts.stop_target,
                opts.mean_speed,
                &mut track_rng,
            )?,
        };
        let points = noisy(points, opts.noise_sigma, &mut track_rng);
        push_track(&mut records, AgentClass::Worker, id, &points);
    }
    for id in 1..=opts.obstacles as u64 {
        let mut track_rng = rng.split(&format!("obstacle-{id}"));
        let points = straight_track(opts.frames, step * 0.5, &mut track_rng);
        let points = noisy(points, opts.noise_sigma, &mut track_rng);
        push_track(&mut records, AgentClass::Obstacle, id, &points);
    }
    Scene::new(
        records,
        opts.fps,
        format!("synth-{profile:?}-{}", opts.seed).to_lowercase(),
        Unit::World,
    )
}

/// A scene where the worker's turns are driven by panel movement: the panel
/// starts moving six frames before each worker turn, and the gaps between
/// turns are random, so turn timing is readable from the panel track but
/// not from the worker's own history.
pub fn correlated_scene(frames: usize, fps: f64, noise_sigma: f64, seed: u64) -> Result<Scene> {
    if frames < 25 {
        return Err(Error::Config(
            "correlated scenes need at least 25 frames".into(),
        ));
    }
    let mut rng = SeedRng::new(seed);
    let step = 1.0 / fps;
    // The panel alternates long still and moving phases (its own future is
    // mostly momentum), but phase onsets are random. The worker starts an
    // arc `lag` frames after each moving-phase onset, so upcoming turns are
    // readable from the observed panel rows while the worker's own straight
    // history says nothing about when the next arc starts.
    let omega = 0.18;
    let lag = 6usize;
    let arc_len = 8usize;

    // Alternating phase plan, starting still.
    let mut panel_moving = vec![false; frames];
    let mut onsets = Vec::new();
    let mut t = 4 + rng.gen_range_usize(8);
    loop {
        if t >= frames {
            break;
        }
        onsets.push(t);
        let move_len = 10 + rng.gen_range_usize(7);
        for f in t..(t + move_len).min(frames) {
            panel_moving[f] = true;
        }
        t += move_len + 10 + rng.gen_range_usize(7);
    }

    let mut worker = Vec::with_capacity(frames);
    let mut panel = Vec::with_capacity(frames);
    let mut heading = rng.uniform(0.0, std::f64::consts::TAU);
    let turn_sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let mut wpos = (rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
    let mut ppos = (wpos.0 + 3.0, wpos.1 + 1.0);
    for t in 0..frames {
        worker.push(wpos);
        panel.push(ppos);
        if panel_moving[t] {
            ppos = (ppos.0 + 0.9 * step, ppos.1 + 0.35 * step);
        }
        let arcing = onsets
            .iter()
            .any(|&on| t >= on + lag && t < on + lag + arc_len);
        if arcing {
            heading += turn_sign * omega;
        }
        wpos = (wpos.0 + step * heading.cos(), wpos.1 + step * heading.sin());
    }
    let worker = noisy(worker, noise_sigma, &mut rng);
    let panel = noisy(panel, noise_sigma, &mut rng);
    let mut records = Vec::new();
    push_track(&mut records, AgentClass::Worker, 1, &worker);
    push_track(&mut records, AgentClass::Obstacle, 1, &panel);
    Scene::new(records, fps, format!("synth-correlated-{seed}"), Unit::World)
}

/// Window several scenes into one pool with globally unique ids that
/// interleave the scenes in time, so a temporal split stays mixed.
pub fn windows_from_scenes(
    scenes: &[Scene],
    t_obs: usize,
    t_pred: usize,
) -> Result<Vec<WindowSample>> {
    let n = scenes.len() as i64;
    let mut out = Vec::new();
    for (idx, scene) in scenes.iter().enumerate() {
        let mut windows = build_windows(scene, t_obs, t_pred, 1)?;
        for w in &mut windows {
            w.scene_window_id = w.scene_window_id * n + idx as i64;
        }
        out.append(&mut windows);
    }
    out.sort_by_key(|w| w.scene_window_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{mean_walking_speed, stop_fraction};

    #[test]
    fn linear_profile_hits_exact_speed() {
        let opts = SynthOptions {
            frames: 40,
            workers: 1,
            speed: 1.0,
            ..SynthOptions::default()
        };
        let scene = generate(Profile::Linear, &opts).unwrap();
        let track = scene.track_of(AgentClass::Worker, 1);
        let v = mean_walking_speed(&track, scene.fps).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "mean speed {v}");
    }

    #[test]
    fn workstation_profile_hits_targets() {
        let opts = SynthOptions {
            frames: 101,
            workers: 1,
            stop_target: 0.7,
            mean_speed: 0.93,
            ..SynthOptions::default()
        };
        let scene = generate(Profile::Workstation, &opts).unwrap();
        let track = scene.track_of(AgentClass::Worker, 1);
        let sf = stop_fraction(&track, scene.fps, 0.4).unwrap();
        assert!((sf - 0.7).abs() < 0.05, "stop fraction {sf}");
        let v = mean_walking_speed(&track, scene.fps).unwrap();
        assert!((v - 0.93).abs() < 1e-9, "mean speed {v}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let opts = SynthOptions {
            frames: 30,
            workers: 2,
            obstacles: 1,
            noise_sigma: 0.05,
            ..SynthOptions::default()
        };
        let a = generate(Profile::Turning, &opts).unwrap();
        let b = generate(Profile::Turning, &opts).unwrap();
        assert_eq!(a, b);
        let c = generate(
            Profile::Turning,
            &SynthOptions {
                seed: 1,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn turning_tracks_actually_curve() {
        let opts = SynthOptions {
            frames: 30,
            workers: 1,
            turn_rate: 0.2,
            ..SynthOptions::default()
        };
        let scene = generate(Profile::Turning, &opts).unwrap();
        let track = scene.track_of(AgentClass::Worker, 1);
        // Heading at the start vs the end differs by roughly frames·rate.
        let h0 = (track[1].1 - track[0].1).atan2(track[1].0 - track[0].0);
        let h1 = (track[29].1 - track[28].1).atan2(track[29].0 - track[28].0);
        let mut delta = (h1 - h0).abs();
        while delta > std::f64::consts::PI {
            delta = (delta - std::f64::consts::TAU).abs();
        }
        assert!(delta > 0.5, "heading barely changed: {delta}");
    }

    #[test]
    fn correlated_scene_turns_follow_panel_bursts() {
        let scene = correlated_scene(60, 2.5, 0.0, 3).unwrap();
        let worker = scene.track_of(AgentClass::Worker, 1);
        let panel = scene.track_of(AgentClass::Obstacle, 1);
        assert_eq!(worker.len(), 60);
        // The panel alternates moving and still stretches.
        let moving: Vec<bool> = panel
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs()) > 1e-9)
            .collect();
        assert!(moving.iter().any(|&m| m) && moving.iter().any(|&m| !m));
        // Worker headings change at some frames (the turns exist).
        let headings: Vec<f64> = worker
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
            .collect();
        let turns = headings
            .windows(2)
            .filter(|h| (h[1] - h[0]).abs() > 0.5)
            .count();
        assert!(turns >= 3, "expected several turns, saw {turns}");
    }

    #[test]
    fn multi_scene_windows_interleave() {
        let mk = |seed| {
            generate(
                Profile::Linear,
                &SynthOptions {
                    frames: 25,
                    workers: 1,
                    seed,
                    ..SynthOptions::default()
                },
            )
            .unwrap()
        };
        let scenes = vec![mk(0), mk(1)];
        let windows = windows_from_scenes(&scenes, 8, 12, ).unwrap();
        // 25 frames → 6 windows per scene.
        assert_eq!(windows.len(), 12);
        let ids: Vec<i64> = windows.iter().map(|w| w.scene_window_id).collect();
        assert_eq!(ids[0] % 2, 0);
        assert_eq!(ids[1] % 2, 1);
    }
}
