// Scratch tuning for the obstacle-variant comparison. Deleted before ship.
use std::time::Instant;

use trajgatformer::evaluation::{ade, MetricMode};
use trajgatformer::model::{forecast, DecodeMode, ModelConfig, ModelParams, Variant};
use trajgatformer::rng::SeedRng;
use trajgatformer::synth::{correlated_scene, windows_from_scenes};
use trajgatformer::trackio::{split_dataset, WindowSample};
use trajgatformer::training::{fit, BatchSpec, TrainConfig};

fn worker_val_ade(model: &ModelParams, windows: &[WindowSample]) -> f64 {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for w in windows {
        let fc = forecast(model, w, DecodeMode::Autoregressive).unwrap();
        for f in fc {
            if f.class != trajgatformer::trackio::AgentClass::Worker {
                continue;
            }
            let tr = w.agents.iter().find(|a| a.id == f.id).unwrap();
            pred.push(f.points.clone());
            truth.push(tr.future.clone());
        }
    }
    ade(&pred, &truth, MetricMode::Standard).unwrap()
}

fn main() {
    let seed = 7u64;
    let scenes: Vec<_> = (0..24)
        .map(|i| correlated_scene(33, 2.5, 0.02, seed + i).unwrap())
        .collect();
    let windows = windows_from_scenes(&scenes, 8, 12).unwrap();
    println!("windows: {}", windows.len());
    let split = split_dataset(&windows, (0.7, 0.2, 0.1), seed, 2.5).unwrap();
    println!("split: {}/{}/{}", split.train.len(), split.val.len(), split.test.len());

    let mut cfg = ModelConfig::reduced(32);
    cfg.dropout = 0.1;
    let tc = TrainConfig {
        epochs: 40,
        batch: BatchSpec::Uniform(4),
        warmup: 200,
        factor: 1.0,
        seed,
        teacher_forcing: false,
        grad_clip: Some(1.0),
    };

    let t0 = Instant::now();
    let mut rng = SeedRng::new(seed).split("init-worker");
    let worker_params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
    let worker_ckpt = fit(worker_params, &split, &tc).unwrap();
    println!("worker fit {:.1}s best epoch {}", t0.elapsed().as_secs_f64(), worker_ckpt.best_epoch);

    let t1 = Instant::now();
    let mut rng = SeedRng::new(seed).split("init-obstacle");
    let obstacle_params = ModelParams::init(cfg.clone(), Variant::WithObstacle, &mut rng).unwrap();
    let obstacle_ckpt = fit(obstacle_params, &split, &tc).unwrap();
    println!("obstacle fit {:.1}s best epoch {}", t1.elapsed().as_secs_f64(), obstacle_ckpt.best_epoch);

    let wm = worker_ckpt.model().unwrap();
    let om = obstacle_ckpt.model().unwrap();
    let w_ade = worker_val_ade(&wm, &split.val);
    let o_ade = worker_val_ade(&om, &split.val);
    println!("worker-val ADE: worker-only {w_ade:.4} | with-obstacle {o_ade:.4} | obstacle<=worker: {}", o_ade <= w_ade);
}
