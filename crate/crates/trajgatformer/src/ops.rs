//! Forward kernels for the tensor engine.
//!
//! These are plain functions on [`Tensor`] values; the tape in
//! [`crate::tape`] records them together with their backward rules.

use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

fn want_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::Shape(format!("{what}: expected 2-D, got {s:?}"))),
    }
}

/// C = A · B for A [m×k], B [k×n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = want_2d(a, "matmul lhs")?;
    let (k2, n) = want_2d(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul: inner dimensions differ, lhs {:?} vs rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            let brow = &bd[l * n..(l + 1) * n];
            for (o, &b_lj) in orow.iter_mut().zip(brow) {
                *o += ail * b_lj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// C = A · Bᵀ for A [m×k], B [n×k].
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = want_2d(a, "matmul_nt lhs")?;
    let (n, k2) = want_2d(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_nt: inner dimensions differ, lhs {:?} vs rhs-transposed {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// C = Aᵀ · B for A [k×m], B [k×n].
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = want_2d(a, "matmul_tn lhs")?;
    let (k2, n) = want_2d(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_tn: inner dimensions differ, lhs-transposed {:?} vs rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for l in 0..k {
        let arow = &ad[l * m..(l + 1) * m];
        let brow = &bd[l * n..(l + 1) * n];
        for (i, &ali) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &blj) in orow.iter_mut().zip(brow) {
                *o += ali * blj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "sub: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
    )
}

pub fn mul_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mul_elem: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    a.map(|x| x * factor)
}

/// [m×n] + row vector ([n] or [1×n]) broadcast over every row.
pub fn add_row_broadcast(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (m, n) = want_2d(a, "add_row_broadcast lhs")?;
    if row.numel() != n || row.shape().len() > 2 || row.rows() != 1 {
        return Err(Error::Shape(format!(
            "add_row_broadcast: matrix {:?} vs row {:?}",
            a.shape(),
            row.shape()
        )));
    }
    let rd = row.data();
    let mut out = a.data().to_vec();
    for i in 0..m {
        for (o, r) in out[i * n..(i + 1) * n].iter_mut().zip(rd) {
            *o += r;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with max subtraction. Rejects NaN input.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax_rows: NaN input".into()));
    }
    let (m, n) = match x.shape() {
        [n] => (1usize, *n),
        [m, n] => (*m, *n),
        s => return Err(Error::Shape(format!("softmax_rows: rank {s:?}"))),
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data()[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * n..(i + 1) * n];
        let mut z = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            z += *o;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Row-wise softmax restricted to `allowed` positions; excluded entries
/// get exactly zero weight (equivalent to -inf pre-softmax logits).
pub fn masked_softmax_rows(x: &Tensor, allowed: &[bool]) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("masked_softmax_rows: NaN input".into()));
    }
    let (m, n) = want_2d(x, "masked_softmax_rows")?;
    if allowed.len() != m * n {
        return Err(Error::Shape(format!(
            "masked_softmax_rows: mask length {} vs {}x{}",
            allowed.len(),
            m,
            n
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data()[i * n..(i + 1) * n];
        let arow = &allowed[i * n..(i + 1) * n];
        let max = row
            .iter()
            .zip(arow)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Numeric(format!(
                "masked_softmax_rows: row {i} has an empty neighborhood"
            )));
        }
        let orow = &mut out[i * n..(i + 1) * n];
        let mut z = 0.0;
        for ((o, &v), &a) in orow.iter_mut().zip(row).zip(arow) {
            if a {
                *o = (v - max).exp();
                z += *o;
            }
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Per-row normalization over the last axis, then affine with gain/bias.
/// Epsilon sits inside the square root.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, d) = match x.shape() {
        [d] => (1usize, *d),
        [m, d] => (*m, *d),
        s => return Err(Error::Shape(format!("layer_norm: rank {s:?}"))),
    };
    if d < 2 {
        return Err(Error::Shape(format!(
            "layer_norm: last axis must be >= 2, got {d}"
        )));
    }
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::Shape(format!(
            "layer_norm: gain {:?} / bias {:?} vs feature width {d}",
            gain.shape(),
            bias.shape()
        )));
    }
    let g = gain.data();
    let b = bias.data();
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        let row = &x.data()[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, o) in out[i * d..(i + 1) * d].iter_mut().enumerate() {
            *o = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
pub fn dropout_mask(len: usize, p: f64, rng: &mut SeedRng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect())
}

/// Dropout as a standalone value op: identity in eval mode.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut SeedRng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), p, rng)?;
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
    )
}

/// Y[i][j] = e[i] + f[j] for column vectors e [n×1], f [n×1].
pub fn outer_sum(e: &Tensor, f: &Tensor) -> Result<Tensor> {
    let (m, c1) = want_2d(e, "outer_sum lhs")?;
    let (n, c2) = want_2d(f, "outer_sum rhs")?;
    if c1 != 1 || c2 != 1 {
        return Err(Error::Shape(format!(
            "outer_sum: wants column vectors, got {:?} and {:?}",
            e.shape(),
            f.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = e.data()[i] + f.data()[j];
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Cumulative sum down the row axis: y[t] = sum of x[0..=t] per column.
pub fn cumsum_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = want_2d(x, "cumsum_rows")?;
    let mut out = x.data().to_vec();
    for i in 1..m {
        for j in 0..n {
            out[i * n + j] += out[(i - 1) * n + j];
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

/// Contiguous block of `len` rows starting at `start`.
pub fn slice_rows(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (m, n) = want_2d(x, "slice_rows")?;
    if start + len > m || len == 0 {
        return Err(Error::Shape(format!(
            "slice_rows: rows {start}..{} out of 0..{m}",
            start + len
        )));
    }
    Tensor::new(vec![len, n], x.data()[start * n..(start + len) * n].to_vec())
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Shape("concat_rows: no inputs".into()));
    }
    let n = want_2d(parts[0], "concat_rows")?.1;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (m, c) = want_2d(p, "concat_rows")?;
        if c != n {
            return Err(Error::Shape(format!(
                "concat_rows: column mismatch {c} vs {n}"
            )));
        }
        rows += m;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, n], data)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Shape("concat_cols: no inputs".into()));
    }
    let m = want_2d(parts[0], "concat_cols")?.0;
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| want_2d(p, "concat_cols").map(|(r, c)| if r == m { c } else { usize::MAX }))
        .collect::<Result<_>>()?;
    if widths.contains(&usize::MAX) {
        return Err(Error::Shape("concat_cols: row mismatch".into()));
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(m * total);
    for i in 0..m {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    Tensor::new(vec![m, total], data)
}
