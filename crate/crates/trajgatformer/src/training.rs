//! L2 loss, the optimization loop with the warmup schedule, checkpointing,
//! and transfer-learning initialization.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward_window, DecodeMode, ModelConfig, ModelParams, RunMode, Variant,
};
use crate::optim::{adam_step, clip_global_norm, noam_lr, AdamState};
use crate::rng::SeedRng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trackio::{DatasetSplit, WindowSample};

/// How windows are grouped per optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSpec {
    /// Fixed number of windows per batch.
    Uniform(usize),
    /// Pack windows while staying within per-class track budgets
    /// (the obstacle-variant regime: 3 worker tracks and 1 panel track).
    PerClass { workers: usize, panels: usize },
}

impl BatchSpec {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            BatchSpec::Uniform(n) => *n >= 1,
            BatchSpec::PerClass { workers, panels } => *workers >= 1 && *panels >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("batch sizes must be >= 1".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: BatchSpec,
    pub warmup: u64,
    pub factor: f64,
    pub seed: u64,
    pub teacher_forcing: bool,
    /// Global-norm gradient clip; `None` disables it for fidelity runs.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            batch: BatchSpec::Uniform(4),
            warmup: 4000,
            factor: 1.0,
            seed: 0,
            teacher_forcing: true,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// The obstacle-variant defaults: batches hold 3 worker tracks and
    /// 1 panel track.
    pub fn obstacle_default() -> TrainConfig {
        TrainConfig {
            batch: BatchSpec::PerClass {
                workers: 3,
                panels: 1,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.batch.validate()
    }
}

/// Mean over all agents and steps of the squared Euclidean distance between
/// predicted and true coordinates. `pred` and `truth` hold one point list
/// per agent.
pub fn l2_loss(pred: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "l2_loss: {} predicted agents vs {} true agents",
            pred.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Shape(format!(
                "l2_loss: {} predicted steps vs {} true steps",
                p.len(),
                t.len()
            )));
        }
        for (a, b) in p.iter().zip(t) {
            let (dx, dy) = (a.0 - b.0, a.1 - b.1);
            sum += dx * dx + dy * dy;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn truth_tensor(track: &crate::trackio::AgentTrack) -> Tensor {
    let rows: Vec<Vec<f64>> = track.future.iter().map(|p| vec![p.0, p.1]).collect();
    Tensor::from_rows(&rows).expect("future rows")
}

/// Run one teacher-forced (or autoregressive, when teacher forcing is off)
/// pass over a batch of windows and apply a single optimizer update.
/// Returns (summed squared distance, number of agent-steps).
fn batch_step(
    params: &mut ModelParams,
    batch: &[&WindowSample],
    tc: &TrainConfig,
    state: &mut AdamState,
    dropout_rng: &mut SeedRng,
) -> Result<(f64, usize)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let decode = if tc.teacher_forcing {
        DecodeMode::TeacherForced
    } else {
        DecodeMode::Autoregressive
    };
    let mut mode = RunMode::Train {
        dropout_rng,
    };

    let mut sq_terms = Vec::new();
    let mut count = 0usize;
    for window in batch {
        let fwd = forward_window(&tape, params, &bound, window, decode, &mut mode)?;
        for (class, id, positions) in fwd.agents {
            let track = window
                .agents
                .iter()
                .chain(&window.obstacles)
                .find(|a| a.class == class && a.id == id)
                .expect("decoded agent exists in window");
            let truth = tape.constant(truth_tensor(track));
            let diff = tape.sub(positions, truth)?;
            let sq = tape.mul_elem(diff, diff)?;
            sq_terms.push(tape.sum_all(sq));
            count += track.future.len();
        }
    }
    let mut total = sq_terms[0];
    for &term in &sq_terms[1..] {
        total = tape.add(total, term)?;
    }
    let loss = tape.scale(total, 1.0 / count as f64);
    let loss_value = tape.value(loss).scalar_value()?;
    if !loss_value.is_finite() {
        return Err(Error::TrainingFailure {
            step: state.step + 1,
            msg: format!("non-finite loss {loss_value}"),
        });
    }

    let grads = tape.backward(loss)?;
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, &var) in bound.iter() {
        by_name.insert(
            name.clone(),
            grads
                .get(var)
                .expect("parameter gradients are always materialized")
                .clone(),
        );
    }
    if let Some(max_norm) = tc.grad_clip {
        clip_global_norm(&mut by_name, max_norm);
    }
    let lr = noam_lr(state.step + 1, params.config.d_model, tc.warmup, tc.factor)?;
    adam_step(params.tensors_mut(), &by_name, state, lr)?;
    Ok((loss_value * count as f64, count))
}

fn make_batches<'a>(
    data: &'a [WindowSample],
    spec: BatchSpec,
    rng: &mut SeedRng,
) -> Vec<Vec<&'a WindowSample>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<&WindowSample>> = Vec::new();
    match spec {
        BatchSpec::Uniform(n) => {
            for chunk in order.chunks(n) {
                batches.push(chunk.iter().map(|&i| &data[i]).collect());
            }
        }
        BatchSpec::PerClass { workers, panels } => {
            let mut current: Vec<&WindowSample> = Vec::new();
            let (mut w_count, mut p_count) = (0usize, 0usize);
            for &i in &order {
                let w = &data[i];
                let (nw, np) = (w.agents.len(), w.obstacles.len());
                if !current.is_empty() && (w_count + nw > workers || p_count + np > panels) {
                    batches.push(std::mem::take(&mut current));
                    w_count = 0;
                    p_count = 0;
                }
                current.push(w);
                w_count += nw;
                p_count += np;
            }
            if !current.is_empty() {
                batches.push(current);
            }
        }
    }
    batches
}

/// One pass over the training windows in seeded-shuffled batches. Returns
/// the mean loss over all agent-steps seen this epoch (computed before each
/// update).
pub fn train_epoch(
    params: &mut ModelParams,
    data: &[WindowSample],
    tc: &TrainConfig,
    state: &mut AdamState,
    shuffle_rng: &mut SeedRng,
    dropout_rng: &mut SeedRng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("train_epoch: no windows".into()));
    }
    tc.validate()?;
    let batches = make_batches(data, tc.batch, shuffle_rng);
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in &batches {
        let (s, c) = batch_step(params, batch, tc, state, dropout_rng)?;
        sum += s;
        count += c;
    }
    Ok(sum / count as f64)
}

/// Mean autoregressive L2 loss over a window set (no dropout, no updates).
pub fn validation_loss(params: &ModelParams, data: &[WindowSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("validation: no windows".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for window in data {
        let forecasts = crate::model::forecast(params, window, DecodeMode::Autoregressive)?;
        for f in forecasts {
            let track = window
                .agents
                .iter()
                .chain(&window.obstacles)
                .find(|a| a.class == f.class && a.id == f.id)
                .expect("forecast agent exists");
            for (p, t) in f.points.iter().zip(&track.future) {
                let (dx, dy) = (p.0 - t.0, p.1 - t.1);
                sum += dx * dx + dy * dy;
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

const FORMAT_TAG: &str = "tgf-checkpoint";

/// Trained model state: parameters, optimizer state, configuration, and the
/// loss history, selected at the best validation epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Optimizer update count at the checkpointed epoch.
    pub step: u64,
    pub best_epoch: usize,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: AdamState,
    pub loss_history: Vec<EpochStats>,
}

impl Checkpoint {
    /// Rebuild the model, validating every parameter shape against the
    /// embedded configuration.
    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::from_tensors(self.model_config.clone(), self.variant, self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        crate::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("checkpoint file: {e}"),
        })?;
        if ckpt.format != FORMAT_TAG {
            return Err(Error::Integrity(format!(
                "unexpected format tag '{}' in checkpoint file",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

/// Train for the configured number of epochs and return the checkpoint with
/// the best validation loss. The global optimizer step drives the schedule
/// across epochs.
pub fn fit(params: ModelParams, split: &DatasetSplit, tc: &TrainConfig) -> Result<Checkpoint> {
    tc.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::InsufficientData(
            "fit requires non-empty train and val splits".into(),
        ));
    }
    if params.variant == Variant::WithObstacle {
        let missing = split
            .train
            .iter()
            .chain(&split.val)
            .any(|w| w.obstacles.is_empty());
        if missing {
            return Err(Error::Config(
                "obstacle-variant training requires obstacle tracks in every window".into(),
            ));
        }
    }

    let mut params = params;
    let mut state = AdamState::new();
    let root = SeedRng::new(tc.seed);
    let mut shuffle_rng = root.split("shuffle");
    let mut dropout_rng = root.split("dropout");

    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ModelParams, AdamState, u64)> = None;
    for epoch in 1..=tc.epochs {
        let train_loss = train_epoch(
            &mut params,
            &split.train,
            tc,
            &mut state,
            &mut shuffle_rng,
            &mut dropout_rng,
        )?;
        let val_loss = validation_loss(&params, &split.val)?;
        let lr = noam_lr(state.step, params.config.d_model, tc.warmup, tc.factor)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let improved = match &best {
            None => true,
            Some((best_val, ..)) => val_loss < *best_val,
        };
        if improved {
            best = Some((val_loss, epoch, params.clone(), state.clone(), state.step));
        }
    }
    let (_, best_epoch, best_params, best_state, step) = best.expect("epochs >= 1");
    Ok(Checkpoint {
        format: FORMAT_TAG.to_string(),
        version: 1,
        variant: best_params.variant,
        model_config: best_params.config.clone(),
        train_config: tc.clone(),
        step,
        best_epoch,
        params: best_params.tensors().clone(),
        optimizer: best_state,
        loss_history: history,
    })
}

/// Seed a new model's weights from a base checkpoint. The base and target
/// must both be worker-only with identical parameter shapes; every mismatch
/// is reported by name. The optimizer always restarts fresh.
pub fn transfer_init(
    target_config: ModelConfig,
    target_variant: Variant,
    base: &Checkpoint,
) -> Result<ModelParams> {
    let mut mismatches = Vec::new();
    if base.variant != Variant::WorkerOnly {
        mismatches.push(format!(
            "base variant is {}, expected worker_only",
            base.variant
        ));
    }
    if target_variant != Variant::WorkerOnly {
        mismatches.push(format!(
            "target variant is {target_variant}; transfer requires identical tensor sets and the obstacle variant adds an encoder"
        ));
    }
    if !mismatches.is_empty() {
        // Include the concrete tensor audit alongside the variant mismatch.
        if let Err(Error::TransferIncompatible { mismatches: more }) =
            ModelParams::from_tensors(target_config, target_variant, base.params.clone())
        {
            mismatches.extend(more);
        }
        return Err(Error::TransferIncompatible { mismatches });
    }
    ModelParams::from_tensors(target_config, target_variant, base.params.clone())
}

/// One CSV row per epoch: `epoch,train_loss,val_loss,lr_at_epoch_end`.
pub fn write_training_log(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr_at_epoch_end\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.lr
        ));
    }
    crate::write_atomic(path, out.as_bytes())
}
