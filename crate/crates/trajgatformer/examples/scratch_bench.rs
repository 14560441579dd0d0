// Scratch tuning harness for the desk-scale learning-behavior run. Deleted before ship.
use std::time::Instant;

use trajgatformer::evaluation::{ade, MetricMode};
use trajgatformer::model::{forecast, DecodeMode, ModelConfig, ModelParams, Variant};
use trajgatformer::rng::SeedRng;
use trajgatformer::synth::{generate, windows_from_scenes, Profile, SynthOptions};
use trajgatformer::trackio::{split_dataset, WindowSample};
use trajgatformer::training::{fit, BatchSpec, TrainConfig};
use trajgatformer::evaluation::constant_velocity_predict;

fn main() {
    let seed = 42u64;
    let n_scenes_per_kind = 10usize;
    let frames = 29usize; // 10 windows per scene
    let mut scenes = Vec::new();
    for i in 0..n_scenes_per_kind {
        scenes.push(
            generate(
                Profile::Linear,
                &SynthOptions {
                    frames,
                    workers: 1,
                    obstacles: 0,
                    noise_sigma: 0.05,
                    speed: 1.0,
                    seed: seed + i as u64,
                    ..SynthOptions::default()
                },
            )
            .unwrap(),
        );
    }
    for i in 0..n_scenes_per_kind {
        scenes.push(
            generate(
                Profile::Turning,
                &SynthOptions {
                    frames,
                    workers: 1,
                    obstacles: 0,
                    noise_sigma: 0.05,
                    speed: 1.0,
                    turn_rate: 0.18,
                    seed: seed + 100 + i as u64,
                    ..SynthOptions::default()
                },
            )
            .unwrap(),
        );
    }
    let windows = windows_from_scenes(&scenes, 8, 12).unwrap();
    println!("windows: {}", windows.len());
    let split = split_dataset(&windows, (0.7, 0.2, 0.1), seed, 2.5).unwrap();
    println!("split: {}/{}/{}", split.train.len(), split.val.len(), split.test.len());

    let n_total = scenes.len() as i64;
    let is_turning = |w: &WindowSample| (w.scene_window_id % n_total) >= n_scenes_per_kind as i64;
    let turning_val: Vec<WindowSample> = split.val.iter().filter(|w| is_turning(w)).cloned().collect();
    println!("turning val windows: {}", turning_val.len());

    let mut cfg = ModelConfig::reduced(64);
    cfg.dropout = 0.1;
    let mut rng = SeedRng::new(seed).split("init");
    let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
    println!("params: {}", params.num_parameters());

    let tc = TrainConfig {
        epochs: 200,
        batch: BatchSpec::Uniform(4),
        warmup: 500,
        factor: 1.0,
        seed,
        teacher_forcing: true,
        grad_clip: Some(1.0),
    };
    let t0 = Instant::now();
    let ckpt = fit(params, &split, &tc).unwrap();
    println!("fit took {:.1}s; best epoch {}", t0.elapsed().as_secs_f64(), ckpt.best_epoch);
    let first = ckpt.loss_history[0].train_loss;
    let best_train = ckpt.loss_history.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    let at_best = ckpt.loss_history[ckpt.best_epoch - 1].train_loss;
    println!("train loss epoch1 {first:.4} -> best-epoch {at_best:.4} (min {best_train:.4}); fall {:.1}%", (1.0 - at_best / first) * 100.0);

    // Model ADE on turning val subset
    let model = ckpt.model().unwrap();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut cv_pred = Vec::new();
    let mut st_pred = Vec::new();
    for w in &turning_val {
        let fc = forecast(&model, w, DecodeMode::Autoregressive).unwrap();
        for f in fc {
            let tr = w.agents.iter().find(|a| a.id == f.id).unwrap();
            pred.push(f.points.clone());
            truth.push(tr.future.clone());
            cv_pred.push(constant_velocity_predict(&tr.observed, 12).unwrap());
            st_pred.push(vec![tr.last_observed(); 12]);
        }
    }
    let model_ade = ade(&pred, &truth, MetricMode::Standard).unwrap();
    let cv_ade = ade(&cv_pred, &truth, MetricMode::Standard).unwrap();
    let st_ade = ade(&st_pred, &truth, MetricMode::Standard).unwrap();
    println!("turning-val ADE: model {model_ade:.4} | constant-velocity {cv_ade:.4} | stationary {st_ade:.4}");
}
