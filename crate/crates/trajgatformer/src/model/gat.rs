//! Graph attention over co-present workers.
//!
//! Node features are transformed by the shared matrix W, pair scores come
//! from a learned vector over the concatenated transformed pair, and each
//! node's output is the attention-weighted sum of its neighbors' transformed
//! features pushed through W once more, then a ReLU.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

use super::Bound;

pub struct GatOutput {
    /// Per-node output features, n × D.
    pub features: Var,
    /// Attention coefficients, n × n; each row sums to 1 over the
    /// neighborhood and is exactly zero elsewhere.
    pub attention: Var,
}

/// Social graph over agents: fully connected when `threshold` is `None`,
/// otherwise an edge per pair within the distance cutoff. Self-loops are
/// always present.
pub fn adjacency_from_positions(positions: &[(f64, f64)], threshold: Option<f64>) -> Vec<bool> {
    let n = positions.len();
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let within = match threshold {
                None => true,
                Some(t) => {
                    let dx = positions[i].0 - positions[j].0;
                    let dy = positions[i].1 - positions[j].1;
                    (dx * dx + dy * dy).sqrt() <= t
                }
            };
            adj[i * n + j] = i == j || within;
        }
    }
    adj
}

/// One graph-attention layer over `nodes` (n × D).
pub fn gat_layer(
    tape: &Tape,
    bound: &Bound,
    nodes: Var,
    adjacency: &[bool],
    leaky_relu_slope: f64,
) -> Result<GatOutput> {
    let shape = tape.shape(nodes);
    let n = shape[0];
    let d = shape[1];
    if adjacency.len() != n * n {
        return Err(Error::Shape(format!(
            "adjacency has {} entries for {n} nodes",
            adjacency.len()
        )));
    }
    for i in 0..n {
        if !adjacency[i * n + i] {
            return Err(Error::Config(format!(
                "adjacency must include self-loops; node {i} has none"
            )));
        }
    }

    let w = bound.var("gat.w");
    let a = bound.var("gat.a");
    // Transformed features: row i is W·h_i.
    let transformed = tape.matmul_nt(nodes, w)?;
    // Pair score (i, j) = LeakyReLU(a · [Wh_i ‖ Wh_j]), split into the two
    // halves of a so the n×n score matrix is an outer sum of two vectors.
    let a_src = tape.slice_rows(a, 0, d)?;
    let a_dst = tape.slice_rows(a, d, d)?;
    let e = tape.matmul(transformed, a_src)?;
    let f = tape.matmul(transformed, a_dst)?;
    let scores = tape.leaky_relu(tape.outer_sum(e, f)?, leaky_relu_slope);
    let attention = tape.masked_softmax_rows(scores, adjacency.to_vec())?;
    // Output: sigma(sum_j alpha_ij · W·h~'_j) with the transformed features
    // sent through W a second time, sigma = ReLU.
    let retransformed = tape.matmul_nt(transformed, w)?;
    let features = tape.relu(tape.matmul(attention, retransformed)?);
    Ok(GatOutput {
        features,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams, Variant};
    use crate::ops;
    use crate::rng::SeedRng;
    use crate::tensor::Tensor;

    fn setup(d: usize, seed: u64) -> (ModelParams, ModelConfig) {
        let mut cfg = ModelConfig::reduced(d);
        cfg.dropout = 0.0;
        let mut rng = SeedRng::new(seed);
        let params = ModelParams::init(cfg.clone(), Variant::WorkerOnly, &mut rng).unwrap();
        (params, cfg)
    }

    #[test]
    fn single_node_attends_to_itself() {
        let (params, cfg) = setup(8, 1);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let mut rng = SeedRng::new(2);
        let h = Tensor::uniform(vec![1, 8], -1.0, 1.0, &mut rng);
        let nodes = tape.constant(h.clone());
        let out = gat_layer(&tape, &bound, nodes, &[true], cfg.leaky_relu_slope).unwrap();
        assert_eq!(tape.value(out.attention).data(), &[1.0]);
        // Output = ReLU(W·(W·h)) under the two-stage transform.
        let w = params.get("gat.w");
        let t1 = ops::matmul_nt(&h, w).unwrap();
        let t2 = ops::matmul_nt(&t1, w).unwrap();
        let expected = ops::relu(&t2);
        assert!(tape.value(out.features).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identical_nodes_share_attention_evenly() {
        let (params, cfg) = setup(8, 3);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let row: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let nodes = tape.constant(Tensor::from_rows(&[row.clone(), row]).unwrap());
        let out =
            gat_layer(&tape, &bound, nodes, &[true; 4], cfg.leaky_relu_slope).unwrap();
        let alpha = tape.value(out.attention);
        for v in alpha.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn three_node_case_matches_per_pair_recomputation() {
        let (params, cfg) = setup(8, 4);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let mut rng = SeedRng::new(5);
        let h = Tensor::uniform(vec![3, 8], -1.0, 1.0, &mut rng);
        let adjacency = vec![
            true, true, false, //
            true, true, true, //
            false, true, true,
        ];
        let nodes = tape.constant(h.clone());
        let out = gat_layer(&tape, &bound, nodes, &adjacency, cfg.leaky_relu_slope).unwrap();
        let alpha = tape.value(out.attention);

        // Direct per-pair evaluation of the attention definition.
        let w = params.get("gat.w");
        let a = params.get("gat.a");
        let transformed = ops::matmul_nt(&h, w).unwrap();
        let slope = cfg.leaky_relu_slope;
        let score = |i: usize, j: usize| -> f64 {
            let mut s = 0.0;
            for k in 0..8 {
                s += a.data()[k] * transformed.at(i, k);
                s += a.data()[8 + k] * transformed.at(j, k);
            }
            if s >= 0.0 {
                s
            } else {
                slope * s
            }
        };
        for i in 0..3 {
            let mut denom = 0.0;
            for k in 0..3 {
                if adjacency[i * 3 + k] {
                    denom += score(i, k).exp();
                }
            }
            let mut row_sum = 0.0;
            for j in 0..3 {
                let expected = if adjacency[i * 3 + j] {
                    score(i, j).exp() / denom
                } else {
                    0.0
                };
                assert!(
                    (alpha.at(i, j) - expected).abs() < 1e-12,
                    "alpha[{i}][{j}] = {} vs {expected}",
                    alpha.at(i, j)
                );
                row_sum += alpha.at(i, j);
            }
            assert!((row_sum - 1.0).abs() < 1e-9);
        }

        // And the output features against the same brute-force path.
        let retransformed = ops::matmul_nt(&transformed, w).unwrap();
        let weighted = ops::matmul(&alpha, &retransformed).unwrap();
        let expected = ops::relu(&weighted);
        assert!(tape.value(out.features).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn missing_self_loop_is_rejected() {
        let (params, cfg) = setup(8, 6);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let nodes = tape.constant(Tensor::zeros(vec![2, 8]));
        let adjacency = vec![true, true, true, false];
        assert!(gat_layer(&tape, &bound, nodes, &adjacency, cfg.leaky_relu_slope).is_err());
    }

    #[test]
    fn adjacency_threshold_and_self_loops() {
        let positions = [(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)];
        let adj = adjacency_from_positions(&positions, Some(2.0));
        assert!(adj[0 * 3 + 1] && adj[1 * 3 + 0]);
        assert!(!adj[0 * 3 + 2] && !adj[2 * 3 + 0]);
        assert!(adj[2 * 3 + 2]);
        let full = adjacency_from_positions(&positions, None);
        assert!(full.iter().all(|&b| b));
    }
}
