//! Shared transformer blocks: embedding, positional encoding, multi-head
//! attention, and the encoder/decoder stacks.

use crate::error::{Error, Result};
use crate::ops;
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::{Bound, ModelConfig};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Dropout regime for one forward pass. Validation and inference run `Eval`.
pub enum RunMode<'a> {
    Train { dropout_rng: &'a mut SeedRng },
    Eval,
}

impl RunMode<'_> {
    fn apply_dropout(&mut self, tape: &Tape, x: Var, p: f64) -> Result<Var> {
        match self {
            RunMode::Eval => Ok(x),
            RunMode::Train { .. } if p == 0.0 => Ok(x),
            RunMode::Train { dropout_rng } => {
                let numel: usize = tape.shape(x).iter().product();
                let mask = ops::dropout_mask(numel, p, dropout_rng)?;
                tape.dropout(x, mask)
            }
        }
    }
}

/// Sinusoidal positional encoding. Even columns carry sin(pos/10000^(j/d)),
/// odd columns cos(pos/10000^(j/d)) with the odd exponent as written, so the
/// sin/cos pair at (2i, 2i+1) uses slightly different frequencies.
pub fn positional_encoding(t: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {d}"
        )));
    }
    if t == 0 {
        return Err(Error::Config("positional encoding needs t >= 1".into()));
    }
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for j in 0..d {
            let angle = pos as f64 / 10000f64.powf(j as f64 / d as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![t, d], data)
}

/// Project 2-D steps into model space: one matmul with the shared 2×D map.
pub fn embed_positions(tape: &Tape, steps: Var, w_x: Var) -> Result<Var> {
    tape.matmul(steps, w_x)
}

/// Add the positional encoding to an embedding (elementwise sum).
pub fn timestamp(tape: &Tape, embedding: Var, pe: Var) -> Result<Var> {
    tape.add(embedding, pe)
}

/// Row-major attention mask over [q_len × k_len]: `true` marks an allowed
/// key. Excluded keys receive exactly zero attention weight.
pub fn causal_mask(t: usize) -> Vec<bool> {
    let mut mask = vec![false; t * t];
    for i in 0..t {
        for j in 0..=i {
            mask[i * t + j] = true;
        }
    }
    mask
}

/// Scaled dot-product attention over `n_heads` per-head projections, with
/// concatenated heads sent through the output projection.
pub fn multi_head_attention(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    cfg: &ModelConfig,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let q_len = tape.shape(q_in)[0];
    let k_len = tape.shape(k_in)[0];
    if let Some(m) = mask {
        if m.len() != q_len * k_len {
            return Err(Error::Shape(format!(
                "attention mask has {} entries for {q_len}x{k_len} scores",
                m.len()
            )));
        }
    }
    let scale = 1.0 / (cfg.d_k_head() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = tape.matmul(q_in, bound.var(&format!("{prefix}.w_q.{h}")))?;
        let k = tape.matmul(k_in, bound.var(&format!("{prefix}.w_k.{h}")))?;
        let v = tape.matmul(v_in, bound.var(&format!("{prefix}.w_v.{h}")))?;
        let scores = tape.scale(tape.matmul_nt(q, k)?, scale);
        let weights = match mask {
            Some(m) => tape.masked_softmax_rows(scores, m.to_vec())?,
            None => tape.softmax_rows(scores)?,
        };
        heads.push(tape.matmul(weights, v)?);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, bound.var(&format!("{prefix}.w_o")))
}

fn feed_forward(tape: &Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, bound.var(&format!("{prefix}.ffn.w1")))?;
    let h = tape.add_row_broadcast(h, bound.var(&format!("{prefix}.ffn.b1")))?;
    let h = tape.relu(h);
    let h = tape.matmul(h, bound.var(&format!("{prefix}.ffn.w2")))?;
    tape.add_row_broadcast(h, bound.var(&format!("{prefix}.ffn.b2")))
}

fn layer_norm(tape: &Tape, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    tape.layer_norm(
        x,
        bound.var(&format!("{name}.gain")),
        bound.var(&format!("{name}.bias")),
        LAYER_NORM_EPS,
    )
}

/// One post-norm encoder stack: self-attention, residual, norm, FFN,
/// residual, norm, repeated over the configured layer count. Each agent is
/// encoded independently, so attention here is purely temporal.
pub fn encoder_forward(
    tape: &Tape,
    bound: &Bound,
    stack: &str,
    layers: usize,
    cfg: &ModelConfig,
    xi: Var,
    mode: &mut RunMode,
) -> Result<Var> {
    let mut x = xi;
    for l in 0..layers {
        let prefix = format!("{stack}.{l}");
        let attn = multi_head_attention(
            tape,
            bound,
            &format!("{prefix}.attn"),
            cfg,
            x,
            x,
            x,
            None,
        )?;
        let attn = mode.apply_dropout(tape, attn, cfg.dropout)?;
        let h1 = layer_norm(tape, bound, &format!("{prefix}.ln1"), tape.add(x, attn)?)?;
        let ffn = feed_forward(tape, bound, &prefix, h1)?;
        let ffn = mode.apply_dropout(tape, ffn, cfg.dropout)?;
        x = layer_norm(tape, bound, &format!("{prefix}.ln2"), tape.add(h1, ffn)?)?;
    }
    Ok(x)
}

/// Decoder stack: causally masked self-attention over the target embeddings,
/// cross-attention with the encoded memory as keys/values, then the FFN,
/// each followed by residual-plus-norm.
pub fn decoder_forward(
    tape: &Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    targets: Var,
    memory: Var,
    mode: &mut RunMode,
) -> Result<Var> {
    let t = tape.shape(targets)[0];
    let causal = causal_mask(t);
    let mut x = targets;
    for l in 0..cfg.decoder_layers {
        let prefix = format!("dec.{l}");
        let sa = multi_head_attention(
            tape,
            bound,
            &format!("{prefix}.self_attn"),
            cfg,
            x,
            x,
            x,
            Some(&causal),
        )?;
        let sa = mode.apply_dropout(tape, sa, cfg.dropout)?;
        let h1 = layer_norm(tape, bound, &format!("{prefix}.ln1"), tape.add(x, sa)?)?;
        let ca = multi_head_attention(
            tape,
            bound,
            &format!("{prefix}.cross_attn"),
            cfg,
            h1,
            memory,
            memory,
            None,
        )?;
        let ca = mode.apply_dropout(tape, ca, cfg.dropout)?;
        let h2 = layer_norm(tape, bound, &format!("{prefix}.ln2"), tape.add(h1, ca)?)?;
        let ffn = feed_forward(tape, bound, &prefix, h2)?;
        let ffn = mode.apply_dropout(tape, ffn, cfg.dropout)?;
        x = layer_norm(tape, bound, &format!("{prefix}.ln3"), tape.add(h2, ffn)?)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Variant};
    use crate::rng::SeedRng;

    #[test]
    fn positional_encoding_closed_form() {
        let pe = positional_encoding(4, 8).unwrap();
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert!((pe.at(1, 0) - 1.0f64.sin()).abs() < 1e-12);
        // Literal odd-index exponent: column 1 at pos 1 is cos(1/10000^(1/8)).
        let expected = (1.0 / 10000f64.powf(1.0 / 8.0)).cos();
        assert!((pe.at(1, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn positional_encoding_rejects_odd_dimension() {
        assert!(positional_encoding(4, 7).is_err());
    }

    #[test]
    fn embedding_is_linear_in_positions() {
        let tape = Tape::new();
        let mut rng = SeedRng::new(5);
        let w = tape.param(Tensor::uniform(vec![2, 6], -1.0, 1.0, &mut rng));
        let p = Tensor::uniform(vec![3, 2], -2.0, 2.0, &mut rng);
        let doubled = p.map(|v| 2.0 * v);
        let e1 = embed_positions(&tape, tape.constant(p), w).unwrap();
        let e2 = embed_positions(&tape, tape.constant(doubled), w).unwrap();
        let diff = ops::sub(&ops::scale(&tape.value(e1), 2.0), &tape.value(e2)).unwrap();
        assert!(diff.data().iter().all(|v| v.abs() < 1e-12));

        let zeros = tape.constant(Tensor::zeros(vec![3, 2]));
        let e0 = embed_positions(&tape, zeros, w).unwrap();
        assert!(tape.value(e0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn timestamp_is_plain_addition() {
        let tape = Tape::new();
        let mut rng = SeedRng::new(6);
        let e = Tensor::uniform(vec![2, 4], -1.0, 1.0, &mut rng);
        let pe = Tensor::uniform(vec![2, 4], -1.0, 1.0, &mut rng);
        let ev = tape.constant(e.clone());
        let pev = tape.constant(pe.clone());
        let xi = timestamp(&tape, ev, pev).unwrap();
        let back = ops::sub(&tape.value(xi), &e).unwrap();
        assert_eq!(back.data(), pe.data());

        let zero = tape.constant(Tensor::zeros(vec![2, 4]));
        let xi = timestamp(&tape, ev, zero).unwrap();
        assert_eq!(tape.value(xi), e);
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::reduced(16);
        cfg.t_obs = 4;
        cfg.t_pred = 3;
        cfg.dropout = 0.0;
        cfg
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        let cfg = tiny_cfg();
        let mut rng = SeedRng::new(7);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.constant(Tensor::uniform(vec![1, 16], -1.0, 1.0, &mut rng));
        let out = multi_head_attention(&tape, &bound, "enc_w.0.attn", &cfg, x, x, x, None).unwrap();

        // Softmax over a single key is 1, so output = concat_h(x·W_v\^h)·W_o.
        let mut heads = Vec::new();
        for h in 0..cfg.n_heads {
            let v = ops::matmul(&tape.value(x), params.get(&format!("enc_w.0.attn.w_v.{h}")))
                .unwrap();
            heads.push(v);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        let concat = ops::concat_cols(&refs).unwrap();
        let expected = ops::matmul(&concat, params.get("enc_w.0.attn.w_o")).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identical_keys_split_attention_evenly() {
        let mut cfg = tiny_cfg();
        cfg.n_heads = 1;
        let mut rng = SeedRng::new(8);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let row: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let kv = tape.constant(Tensor::from_rows(&[row.clone(), row]).unwrap());
        let q = tape.constant(Tensor::uniform(vec![1, 16], -1.0, 1.0, &mut rng));
        let out = multi_head_attention(&tape, &bound, "enc_w.0.attn", &cfg, q, kv, kv, None)
            .unwrap();
        // With two identical keys the weights are (0.5, 0.5), so the output
        // equals attending to either row alone.
        let single = tape.slice_rows(kv, 0, 1).unwrap();
        let out_single =
            multi_head_attention(&tape, &bound, "enc_w.0.attn", &cfg, q, single, single, None)
                .unwrap();
        assert!(tape.value(out).max_abs_diff(&tape.value(out_single)) < 1e-12);
    }

    #[test]
    fn causal_mask_zeroes_future_positions() {
        let cfg = tiny_cfg();
        let mut rng = SeedRng::new(9);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.constant(Tensor::uniform(vec![3, 16], -1.0, 1.0, &mut rng));
        // Check the raw attention weights of head 0 under the causal mask.
        let q = tape
            .matmul(x, bound.var("dec.0.self_attn.w_q.0"))
            .unwrap();
        let k = tape
            .matmul(x, bound.var("dec.0.self_attn.w_k.0"))
            .unwrap();
        let scores = tape.scale(tape.matmul_nt(q, k).unwrap(), 1.0);
        let weights = tape
            .masked_softmax_rows(scores, causal_mask(3))
            .unwrap();
        let w = tape.value(weights);
        assert_eq!(w.at(0, 1), 0.0);
        assert_eq!(w.at(0, 2), 0.0);
        assert_eq!(w.at(1, 2), 0.0);
        assert!((w.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_encoder_is_layer_norm_plumbing() {
        let cfg = tiny_cfg();
        let params = ModelParams::zeros(cfg.clone(), Variant::WorkerOnly).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let mut rng = SeedRng::new(10);
        let x0 = Tensor::uniform(vec![4, 16], -1.0, 1.0, &mut rng);
        let x = tape.constant(x0.clone());
        let out = encoder_forward(&tape, &bound, "enc_w", 1, &cfg, x, &mut RunMode::Eval).unwrap();
        // Attention and FFN are zero maps, so the layer reduces to ln2(ln1(x)).
        let gain = Tensor::filled(vec![16], 1.0);
        let bias = Tensor::zeros(vec![16]);
        let expected = ops::layer_norm(
            &ops::layer_norm(&x0, &gain, &bias, LAYER_NORM_EPS).unwrap(),
            &gain,
            &bias,
            LAYER_NORM_EPS,
        )
        .unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn encoder_preserves_shape() {
        let cfg = tiny_cfg();
        let mut rng = SeedRng::new(11);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        for t in [1usize, 4, 9] {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let x = tape.constant(Tensor::uniform(vec![t, 16], -1.0, 1.0, &mut rng));
            let out =
                encoder_forward(&tape, &bound, "enc_w", 1, &cfg, x, &mut RunMode::Eval).unwrap();
            assert_eq!(tape.shape(out), vec![t, 16]);
        }
    }

    #[test]
    fn decoder_single_step_is_defined() {
        let cfg = tiny_cfg();
        let mut rng = SeedRng::new(12);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let targets = tape.constant(Tensor::uniform(vec![1, 16], -1.0, 1.0, &mut rng));
        let memory = tape.constant(Tensor::uniform(vec![8, 16], -1.0, 1.0, &mut rng));
        let out =
            decoder_forward(&tape, &bound, &cfg, targets, memory, &mut RunMode::Eval).unwrap();
        assert_eq!(tape.shape(out), vec![1, 16]);
        assert!(tape.value(out).is_finite());
    }

    #[test]
    fn decoder_is_causal_in_its_targets() {
        let cfg = tiny_cfg();
        let mut rng = SeedRng::new(13);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        let memory0 = Tensor::uniform(vec![8, 16], -1.0, 1.0, &mut rng);
        let targets0 = Tensor::uniform(vec![3, 16], -1.0, 1.0, &mut rng);

        let run = |targets: &Tensor| -> Tensor {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let t = tape.constant(targets.clone());
            let m = tape.constant(memory0.clone());
            let out = decoder_forward(&tape, &bound, &cfg, t, m, &mut RunMode::Eval).unwrap();
            tape.value(out)
        };

        let base = run(&targets0);
        // Perturb the last target row; earlier output rows must be bit-identical.
        let mut perturbed = targets0.clone();
        for v in &mut perturbed.data_mut()[2 * 16..] {
            *v += 17.5;
        }
        let changed = run(&perturbed);
        assert_eq!(base.row(0), changed.row(0));
        assert_eq!(base.row(1), changed.row(1));
        assert_ne!(base.row(2), changed.row(2));
    }
}
