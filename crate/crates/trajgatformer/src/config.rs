//! Layered configuration: a TOML file provides defaults, command-line flags
//! override it. Unknown keys in the file are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evaluation::MetricMode;
use crate::model::{InputMode, ModelConfig};
use crate::training::{BatchSpec, TrainConfig};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fps: Option<f64>,
    pub metric_mode: Option<String>,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_k: Option<usize>,
    pub worker_encoder_layers: Option<usize>,
    pub obstacle_encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub dropout: Option<f64>,
    pub ffn_hidden: Option<usize>,
    pub t_obs: Option<usize>,
    pub t_pred: Option<usize>,
    pub input_mode: Option<String>,
    pub gat_distance_threshold: Option<f64>,
    pub leaky_relu_slope: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub batch_workers: Option<usize>,
    pub batch_panels: Option<usize>,
    pub warmup: Option<u64>,
    pub factor: Option<f64>,
    pub teacher_forcing: Option<bool>,
    pub grad_clip: Option<f64>,
    pub disable_grad_clip: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))
    }
}

pub fn parse_input_mode(s: &str) -> Result<InputMode> {
    match s.to_ascii_lowercase().as_str() {
        "offsets" => Ok(InputMode::Offsets),
        "raw" => Ok(InputMode::Raw),
        other => Err(Error::Config(format!(
            "unknown input mode '{other}' (expected offsets or raw)"
        ))),
    }
}

pub fn parse_metric_mode(s: &str) -> Result<MetricMode> {
    match s.to_ascii_lowercase().as_str() {
        "standard" => Ok(MetricMode::Standard),
        "paper-literal" | "paper_literal" | "literal" => Ok(MetricMode::PaperLiteral),
        other => Err(Error::Config(format!(
            "unknown metric mode '{other}' (expected standard or paper-literal)"
        ))),
    }
}

impl ModelOverrides {
    pub fn apply(&self, mut cfg: ModelConfig) -> Result<ModelConfig> {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(d_model);
        set!(n_heads);
        set!(d_k);
        set!(worker_encoder_layers);
        set!(obstacle_encoder_layers);
        set!(decoder_layers);
        set!(dropout);
        set!(ffn_hidden);
        set!(t_obs);
        set!(t_pred);
        set!(leaky_relu_slope);
        if let Some(v) = self.gat_distance_threshold {
            cfg.gat_distance_threshold = Some(v);
        }
        if let Some(mode) = &self.input_mode {
            cfg.input_mode = parse_input_mode(mode)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainOverrides {
    pub fn apply(&self, mut tc: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.epochs {
            tc.epochs = v;
        }
        if let Some(n) = self.batch_size {
            tc.batch = BatchSpec::Uniform(n);
        }
        if self.batch_workers.is_some() || self.batch_panels.is_some() {
            let (dw, dp) = match tc.batch {
                BatchSpec::PerClass { workers, panels } => (workers, panels),
                BatchSpec::Uniform(_) => (3, 1),
            };
            tc.batch = BatchSpec::PerClass {
                workers: self.batch_workers.unwrap_or(dw),
                panels: self.batch_panels.unwrap_or(dp),
            };
        }
        if let Some(v) = self.warmup {
            tc.warmup = v;
        }
        if let Some(v) = self.factor {
            tc.factor = v;
        }
        if let Some(v) = self.teacher_forcing {
            tc.teacher_forcing = v;
        }
        if let Some(v) = self.grad_clip {
            tc.grad_clip = Some(v);
        }
        if self.disable_grad_clip == Some(true) {
            tc.grad_clip = None;
        }
        tc.validate()?;
        Ok(tc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_apply_over_defaults() {
        let file: FileConfig = toml::from_str(
            r#"
            seed = 7
            [model]
            d_model = 64
            d_k = 64
            ffn_hidden = 256
            dropout = 0.0
            [train]
            epochs = 5
            warmup = 100
            "#,
        )
        .unwrap();
        assert_eq!(file.seed, Some(7));
        let cfg = file.model.apply(ModelConfig::default()).unwrap();
        assert_eq!(cfg.d_model, 64);
        assert_eq!(cfg.n_heads, 8);
        let tc = file.train.apply(TrainConfig::default()).unwrap();
        assert_eq!(tc.epochs, 5);
        assert_eq!(tc.warmup, 100);
        assert_eq!(tc.batch, BatchSpec::Uniform(4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("learning_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(toml::from_str::<FileConfig>("[model]\nwidth = 3").is_err());
    }

    #[test]
    fn per_class_batch_from_file() {
        let file: FileConfig =
            toml::from_str("[train]\nbatch_workers = 3\nbatch_panels = 1").unwrap();
        let tc = file.train.apply(TrainConfig::default()).unwrap();
        assert_eq!(
            tc.batch,
            BatchSpec::PerClass {
                workers: 3,
                panels: 1
            }
        );
    }

    #[test]
    fn invalid_override_combination_fails_validation() {
        let file: FileConfig = toml::from_str("[model]\nd_model = 30").unwrap();
        assert!(file.model.apply(ModelConfig::default()).is_err());
    }

    #[test]
    fn mode_parsers() {
        assert_eq!(parse_metric_mode("standard").unwrap(), MetricMode::Standard);
        assert_eq!(
            parse_metric_mode("paper-literal").unwrap(),
            MetricMode::PaperLiteral
        );
        assert!(parse_metric_mode("x").is_err());
        assert_eq!(parse_input_mode("raw").unwrap(), InputMode::Raw);
        assert!(parse_input_mode("y").is_err());
    }
}
