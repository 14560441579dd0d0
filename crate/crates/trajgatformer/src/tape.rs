//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep. Node
//! values are immutable once recorded; parameters enter as leaves and get
//! their gradients back from [`Tape::backward`].

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { param: bool },
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    AddRowBroadcast(Var, Var),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    LeakyRelu(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    OuterSum(Var, Var),
    CumsumRows(Var),
    SumAll(Var),
    SliceRows { x: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Value of a node (cloned out of the tape).
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn with2<T>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> T) -> T {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    fn with1<T>(&self, a: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value)
    }

    /// Record a non-learnable input.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: false })
    }

    /// Record a learnable parameter; its gradient is materialized by
    /// `backward` even when the loss never touches it.
    pub fn param(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: true })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, ops::matmul)?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// A · Bᵀ.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, ops::matmul_nt)?;
        Ok(self.push(v, Op::MatmulNt(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, ops::add)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, ops::sub)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul_elem(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, ops::mul_elem)?;
        Ok(self.push(v, Op::MulElem(a, b)))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        let v = self.with1(a, |x| ops::scale(x, factor));
        self.push(v, Op::Scale(a, factor))
    }

    pub fn add_row_broadcast(&self, a: Var, row: Var) -> Result<Var> {
        let v = self.with2(a, row, ops::add_row_broadcast)?;
        Ok(self.push(v, Op::AddRowBroadcast(a, row)))
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let v = self.with1(a, ops::softmax_rows)?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn masked_softmax_rows(&self, a: Var, allowed: Vec<bool>) -> Result<Var> {
        let v = self.with1(a, |x| ops::masked_softmax_rows(x, &allowed))?;
        Ok(self.push(v, Op::MaskedSoftmaxRows(a)))
    }

    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            ops::layer_norm(
                &nodes[x.0].value,
                &nodes[gain.0].value,
                &nodes[bias.0].value,
                eps,
            )?
        };
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let v = self.with1(a, |x| ops::leaky_relu(x, slope));
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.with1(a, ops::relu);
        self.push(v, Op::Relu(a))
    }

    /// Apply a precomputed inverted-dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let v = self.with1(a, |x| {
            if mask.len() != x.numel() {
                return Err(Error::Shape(format!(
                    "dropout: mask length {} vs {} elements",
                    mask.len(),
                    x.numel()
                )));
            }
            Tensor::new(
                x.shape().to_vec(),
                x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
            )
        })?;
        Ok(self.push(v, Op::Dropout(a, mask)))
    }

    pub fn outer_sum(&self, e: Var, f: Var) -> Result<Var> {
        let v = self.with2(e, f, ops::outer_sum)?;
        Ok(self.push(v, Op::OuterSum(e, f)))
    }

    pub fn cumsum_rows(&self, a: Var) -> Result<Var> {
        let v = self.with1(a, ops::cumsum_rows)?;
        Ok(self.push(v, Op::CumsumRows(a)))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let v = self.with1(a, ops::sum_all);
        self.push(v, Op::SumAll(a))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.with1(x, |t| ops::slice_rows(t, start, len))?;
        Ok(self.push(v, Op::SliceRows { x, start, len }))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            ops::concat_rows(&ts)?
        };
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            ops::concat_cols(&ts)?
        };
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Reverse accumulation from a scalar loss. Returns one gradient slot per
    /// node; parameter leaves always come back `Some` (zeros when unused).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g);
                }
                Op::Matmul(a, b) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap();
                    let da = ops::matmul_nt(&gt, &nodes[b.0].value)?;
                    let db = ops::matmul_tn(&nodes[a.0].value, &gt)?;
                    accumulate(&mut grads, a.0, da.data());
                    accumulate(&mut grads, b.0, db.data());
                    grads[id] = Some(g);
                }
                Op::MatmulNt(a, b) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap();
                    let da = ops::matmul(&gt, &nodes[b.0].value)?;
                    let db = ops::matmul_tn(&gt, &nodes[a.0].value)?;
                    accumulate(&mut grads, a.0, da.data());
                    accumulate(&mut grads, b.0, db.data());
                    grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, &g);
                    accumulate(&mut grads, b.0, &g);
                    grads[id] = Some(g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a.0, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, b.0, &neg);
                    grads[id] = Some(g);
                }
                Op::MulElem(a, b) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(nodes[b.0].value.data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    accumulate(&mut grads, a.0, &da);
                    accumulate(&mut grads, b.0, &db);
                    grads[id] = Some(g);
                }
                Op::Scale(a, factor) => {
                    let da: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, a.0, &da);
                    grads[id] = Some(g);
                }
                Op::AddRowBroadcast(a, row) => {
                    accumulate(&mut grads, a.0, &g);
                    let n = nodes[row.0].value.numel();
                    let mut drow = vec![0.0; n];
                    for (i, gv) in g.iter().enumerate() {
                        drow[i % n] += gv;
                    }
                    accumulate(&mut grads, row.0, &drow);
                    grads[id] = Some(g);
                }
                Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                    // dX = y ⊙ (g − ⟨g, y⟩ per row); masked entries have y = 0.
                    let y = &node.value;
                    let n = y.cols();
                    let m = y.numel() / n;
                    let mut dx = vec![0.0; y.numel()];
                    for i in 0..m {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..n {
                            dx[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = &nodes[x.0].value;
                    let gv = nodes[gain.0].value.data();
                    let d = gv.len();
                    let m = xv.numel() / d;
                    let mut dx = vec![0.0; xv.numel()];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for i in 0..m {
                        let row = &xv.data()[i * d..(i + 1) * d];
                        let gr = &g[i * d..(i + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let gy: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let m1 = gy.iter().sum::<f64>() / d as f64;
                        let m2 = gy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[i * d + j] = inv * (gy[j] - m1 - xhat[j] * m2);
                            dgain[j] += gr[j] * xhat[j];
                            dbias[j] += gr[j];
                        }
                    }
                    accumulate(&mut grads, x.0, &dx);
                    accumulate(&mut grads, gain.0, &dgain);
                    accumulate(&mut grads, bias.0, &dbias);
                    grads[id] = Some(g);
                }
                Op::LeakyRelu(a, slope) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { gv * slope })
                        .collect();
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::Relu(a) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::Dropout(a, mask) => {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(gv, mv)| gv * mv).collect();
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::OuterSum(e, f) => {
                    let n = nodes[f.0].value.numel();
                    let m = nodes[e.0].value.numel();
                    let mut de = vec![0.0; m];
                    let mut df = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            de[i] += g[i * n + j];
                            df[j] += g[i * n + j];
                        }
                    }
                    accumulate(&mut grads, e.0, &de);
                    accumulate(&mut grads, f.0, &df);
                    grads[id] = Some(g);
                }
                Op::CumsumRows(a) => {
                    // dx[s] = suffix sum of g down each column.
                    let n = node.value.cols();
                    let m = node.value.rows();
                    let mut dx = g.clone();
                    for i in (0..m.saturating_sub(1)).rev() {
                        for j in 0..n {
                            dx[i * n + j] += dx[(i + 1) * n + j];
                        }
                    }
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::SumAll(a) => {
                    let dx = vec![g[0]; nodes[a.0].value.numel()];
                    accumulate(&mut grads, a.0, &dx);
                    grads[id] = Some(g);
                }
                Op::SliceRows { x, start, len } => {
                    let n = node.value.cols();
                    let mut dx = vec![0.0; nodes[x.0].value.numel()];
                    dx[start * n..(start + len) * n].copy_from_slice(&g);
                    accumulate(&mut grads, x.0, &dx);
                    grads[id] = Some(g);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.numel();
                        accumulate(&mut grads, p.0, &g[offset..offset + len]);
                        offset += len;
                    }
                    grads[id] = Some(g);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let m = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        let mut dp = vec![0.0; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(&mut grads, p.0, &dp);
                        offset += w;
                    }
                    grads[id] = Some(g);
                }
            }
        }

        let out = nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match (&node.op, grads[id].take()) {
                (_, Some(g)) => Some(Tensor::new(node.value.shape().to_vec(), g).unwrap()),
                (Op::Leaf { param: true }, None) => {
                    Some(Tensor::zeros(node.value.shape().to_vec()))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { by_node: out })
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contribution: &[f64]) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}
