// Diagnostic: loss trajectories on correlated data. Deleted before ship.
use trajgatformer::evaluation::{ade, MetricMode};
use trajgatformer::model::{forecast, DecodeMode, ModelConfig, ModelParams, Variant};
use trajgatformer::rng::SeedRng;
use trajgatformer::synth::{correlated_scene, windows_from_scenes};
use trajgatformer::trackio::{split_dataset, AgentClass, WindowSample};
use trajgatformer::training::{fit, BatchSpec, TrainConfig};

fn main() {
    let seed = 7u64;
    let scenes: Vec<_> = (0..12)
        .map(|i| correlated_scene(33, 2.5, 0.02, seed + i).unwrap())
        .collect();
    let windows = windows_from_scenes(&scenes, 8, 12).unwrap();
    let split = split_dataset(&windows, (0.7, 0.2, 0.1), seed, 2.5).unwrap();

    // Stationary val ADE for scale.
    let mut st_pred = Vec::new();
    let mut truth = Vec::new();
    for w in &split.val {
        for a in &w.agents {
            st_pred.push(vec![a.last_observed(); 12]);
            truth.push(a.future.clone());
        }
    }
    println!("stationary worker val ADE: {:.4}", ade(&st_pred, &truth, MetricMode::Standard).unwrap());

    let mut cfg = ModelConfig::reduced(32);
    cfg.dropout = 0.1;
    let tc = TrainConfig {
        epochs: 60,
        batch: BatchSpec::Uniform(4),
        warmup: 400,
        factor: 1.0,
        seed,
        teacher_forcing: true,
        grad_clip: Some(1.0),
    };
    let mut rng = SeedRng::new(seed).split("init-worker");
    let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
    let ckpt = fit(params, &split, &tc).unwrap();
    for e in ckpt.loss_history.iter().step_by(4) {
        println!("epoch {:3} train {:8.4} val {:8.4} lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    // Worker val ADE of final best model
    let model = ckpt.model().unwrap();
    let mut pred = Vec::new();
    for w in &split.val {
        let fc = forecast(&model, w, DecodeMode::Autoregressive).unwrap();
        for f in fc {
            if f.class == AgentClass::Worker {
                pred.push(f.points.clone());
            }
        }
    }
    println!("model worker val ADE (best ckpt): {:.4}", ade(&pred, &truth, MetricMode::Standard).unwrap());
    let _ = &split as &dyn std::any::Any;
    let _: Vec<&WindowSample> = Vec::new();
}
