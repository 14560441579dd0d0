//! The two forecasting architectures: a worker encoder with a graph-attention
//! social module feeding a transformer decoder, and a dual-encoder variant
//! that additionally encodes moving obstacles into the decoder memory.

mod forecast;
mod gat;
mod layers;

pub use forecast::{
    forecast, forward_window, fuse_memory, social_fusion, AgentForecast, DecodeMode, EncodedState,
    RunMode, WindowForward,
};
pub use gat::{adjacency_from_positions, gat_layer, GatOutput};
pub use layers::{
    causal_mask, decoder_forward, embed_positions, encoder_forward, multi_head_attention,
    positional_encoding, timestamp,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WorkerOnly,
    WithObstacle,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::WorkerOnly => write!(f, "worker_only"),
            Variant::WithObstacle => write!(f, "with_obstacle"),
        }
    }
}

/// How observed positions enter the embedding: per-step displacement
/// offsets (the default, translation-invariant) or raw coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Offsets,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Total query/key width, split evenly across heads; value width equals it.
    pub d_k: usize,
    pub worker_encoder_layers: usize,
    pub obstacle_encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub ffn_hidden: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub input_mode: InputMode,
    /// Social graph edge cutoff in meters; `None` means fully connected.
    pub gat_distance_threshold: Option<f64>,
    pub leaky_relu_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            d_k: 256,
            worker_encoder_layers: 1,
            obstacle_encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.1,
            ffn_hidden: 2048,
            t_obs: 8,
            t_pred: 12,
            input_mode: InputMode::Offsets,
            gat_distance_threshold: None,
            leaky_relu_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and desk-scale runs; keeps the
    /// paper-shaped head count and layer counts.
    pub fn reduced(d_model: usize) -> ModelConfig {
        ModelConfig {
            d_model,
            d_k: d_model,
            ffn_hidden: 4 * d_model,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be even for the positional encoding, got {}",
                self.d_model
            )));
        }
        if self.d_model % self.n_heads != 0 || self.d_k % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} and d_k {} must both divide across {} heads",
                self.d_model, self.d_k, self.n_heads
            )));
        }
        let counts = [
            self.worker_encoder_layers,
            self.obstacle_encoder_layers,
            self.decoder_layers,
            self.n_heads,
            self.ffn_hidden,
            self.t_obs,
            self.t_pred,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config(
                "layer counts, heads, ffn width, and window lengths must all be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn d_k_head(&self) -> usize {
        self.d_k / self.n_heads
    }
}

/// All learnable weights of one model, keyed by stable names so checkpoints
/// and transfer initialization can audit shapes parameter by parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

/// Shape catalog for one attention block.
fn attention_entries(prefix: &str, cfg: &ModelConfig, out: &mut Vec<(String, Vec<usize>)>) {
    let dh = cfg.d_k_head();
    for h in 0..cfg.n_heads {
        out.push((format!("{prefix}.w_q.{h}"), vec![cfg.d_model, dh]));
        out.push((format!("{prefix}.w_k.{h}"), vec![cfg.d_model, dh]));
        out.push((format!("{prefix}.w_v.{h}"), vec![cfg.d_model, dh]));
    }
    out.push((format!("{prefix}.w_o"), vec![cfg.d_k, cfg.d_model]));
}

fn ffn_and_norm_entries(
    prefix: &str,
    norms: &[&str],
    cfg: &ModelConfig,
    out: &mut Vec<(String, Vec<usize>)>,
) {
    out.push((format!("{prefix}.ffn.w1"), vec![cfg.d_model, cfg.ffn_hidden]));
    out.push((format!("{prefix}.ffn.b1"), vec![cfg.ffn_hidden]));
    out.push((format!("{prefix}.ffn.w2"), vec![cfg.ffn_hidden, cfg.d_model]));
    out.push((format!("{prefix}.ffn.b2"), vec![cfg.d_model]));
    for norm in norms {
        out.push((format!("{prefix}.{norm}.gain"), vec![cfg.d_model]));
        out.push((format!("{prefix}.{norm}.bias"), vec![cfg.d_model]));
    }
}

/// Canonical (name, shape) list for a variant, in initialization order.
fn parameter_catalog(cfg: &ModelConfig, variant: Variant) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut entries = vec![
        ("embed.w_x".to_string(), vec![2, d]),
        ("gat.w".to_string(), vec![d, d]),
        ("gat.a".to_string(), vec![2 * d, 1]),
    ];
    for l in 0..cfg.worker_encoder_layers {
        attention_entries(&format!("enc_w.{l}.attn"), cfg, &mut entries);
        ffn_and_norm_entries(&format!("enc_w.{l}"), &["ln1", "ln2"], cfg, &mut entries);
    }
    if variant == Variant::WithObstacle {
        for l in 0..cfg.obstacle_encoder_layers {
            attention_entries(&format!("enc_o.{l}.attn"), cfg, &mut entries);
            ffn_and_norm_entries(&format!("enc_o.{l}"), &["ln1", "ln2"], cfg, &mut entries);
        }
    }
    for l in 0..cfg.decoder_layers {
        attention_entries(&format!("dec.{l}.self_attn"), cfg, &mut entries);
        attention_entries(&format!("dec.{l}.cross_attn"), cfg, &mut entries);
        ffn_and_norm_entries(&format!("dec.{l}"), &["ln1", "ln2", "ln3"], cfg, &mut entries);
    }
    entries.push(("out.w".to_string(), vec![d, 2]));
    entries
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".gain")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".ffn.b")
}

impl ModelParams {
    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight init; layer-norm
    /// gains start at one, all biases at zero.
    pub fn init(config: ModelConfig, variant: Variant, rng: &mut SeedRng) -> Result<ModelParams> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in parameter_catalog(&config, variant) {
            let t = if is_gain(&name) {
                Tensor::filled(shape, 1.0)
            } else if is_bias(&name) {
                Tensor::zeros(shape)
            } else {
                let fan_in = shape[0];
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::uniform(shape, -bound, bound, rng)
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams {
            variant,
            config,
            tensors,
        })
    }

    /// Degenerate model: every weight matrix zero, layer-norm gains one.
    /// Its forecasts repeat the last observed position.
    pub fn zeros(config: ModelConfig, variant: Variant) -> Result<ModelParams> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in parameter_catalog(&config, variant) {
            let t = if is_gain(&name) {
                Tensor::filled(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams {
            variant,
            config,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn from_tensors(
        config: ModelConfig,
        variant: Variant,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<ModelParams> {
        config.validate()?;
        let expected = parameter_catalog(&config, variant);
        let mut problems = Vec::new();
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => problems.push(format!("{name}: missing")),
                Some(t) if t.shape() != shape.as_slice() => problems.push(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )),
                Some(_) => {}
            }
        }
        for name in tensors.keys() {
            if !expected.iter().any(|(n, _)| n == name) {
                problems.push(format!("{name}: not a parameter of this configuration"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::TransferIncompatible {
                mismatches: problems,
            });
        }
        Ok(ModelParams {
            variant,
            config,
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Register every parameter on a tape, returning name→handle bindings.
    pub fn bind(&self, tape: &Tape) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(t.clone())))
            .collect();
        Bound { vars }
    }
}

/// Parameter handles on one tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
