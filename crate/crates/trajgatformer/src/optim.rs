//! Adam with bias correction and the warmup learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Warmup schedule: factor · d_model^(-1/2) · min(step^(-1/2), step · warmup^(-3/2)).
///
/// Strictly increasing below `warmup`, decreasing above it, with both
/// branches meeting exactly at step = warmup.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, factor: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Config(
            "learning-rate schedule starts at step 1".into(),
        ));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(factor * (d_model as f64).powf(-0.5) * f64::min(s.powf(-0.5), s * w.powf(-1.5)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    fn moments(&mut self, name: &str, len: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len]);
        (m, v)
    }
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new()
    }
}

/// One bias-corrected Adam update over a named parameter map. The state's
/// step counter is incremented first, so the very first update runs at
/// step 1.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (beta1, beta2, eps) = (state.beta1, state.beta2, state.epsilon);

    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Shape(format!("adam_step: no gradient for '{name}'")))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "adam_step: '{name}' param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let (m, v) = state.moments(name, p.numel());
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
    let sq: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_peak_value() {
        // Both min branches coincide at step = warmup.
        let lr = noam_lr(4000, 512, 4000, 1.0).unwrap();
        let expected = 1.0 / (512.0f64 * 4000.0).sqrt();
        assert!((lr - expected).abs() < 1e-12, "{lr} vs {expected}");
    }

    #[test]
    fn noam_first_step() {
        let lr = noam_lr(1, 512, 4000, 1.0).unwrap();
        let expected = 512.0f64.powf(-0.5) * 4000.0f64.powf(-1.5);
        assert!((lr - expected).abs() < 1e-18);
    }

    #[test]
    fn noam_schedule_shape() {
        let a = noam_lr(3999, 512, 4000, 1.0).unwrap();
        let b = noam_lr(4000, 512, 4000, 1.0).unwrap();
        let c = noam_lr(4001, 512, 4000, 1.0).unwrap();
        assert!(a < b && b > c);
    }

    #[test]
    fn noam_step_zero_is_domain_error() {
        assert!(noam_lr(0, 512, 4000, 1.0).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(vec![1, 2]));
        let mut state = AdamState::new();
        // Seed nonzero moments so the decay is observable.
        state.moments("w", 2).0[0] = 0.5;
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        // m decays by beta1 but with g = 0 the 0.5 moment still nudges w[0];
        // run from a genuinely fresh state to check params stay put.
        let mut params2 = BTreeMap::new();
        params2.insert("w".to_string(), Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let mut fresh = AdamState::new();
        adam_step(&mut params2, &grads, &mut fresh, 1e-3).unwrap();
        assert_eq!(params2["w"].data(), &[1.0, -2.0]);
        assert_eq!(fresh.step, 1);
        // And the seeded moment decayed by beta1.
        assert!((state.m["w"][0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With constant gradient g, after one step m_hat = g and v_hat = g²,
        // so the update is lr·g/(|g| + ε) ≈ lr·sign(g).
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(0.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(3.7));
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        let w = params["w"].data()[0];
        assert!((w + 0.01).abs() < 1e-8, "update magnitude {w}");
    }

    #[test]
    fn quadratic_bowl_converges_after_warmup() {
        // f(w) = w², gradient 2w, with the schedule itself as the oracle loop.
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(5.0));
        let mut state = AdamState::new();
        let warmup = 50u64;
        let mut prev = 5.0f64.abs();
        let mut monotone_after_warmup = true;
        for step in 1..=500u64 {
            let w = params["w"].data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::scalar(2.0 * w));
            let lr = noam_lr(step, 64, warmup, 1.0).unwrap();
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
            let now = params["w"].data()[0].abs();
            if step > warmup && now > prev + 1e-12 {
                monotone_after_warmup = false;
            }
            prev = now;
        }
        assert!(monotone_after_warmup, "|w| grew after warmup");
        assert!(prev < 2.0, "did not approach the minimum: |w| = {prev}");
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::zeros(vec![2, 2]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(vec![2, 3]));
        let mut state = AdamState::new();
        assert!(adam_step(&mut params, &grads, &mut state, 1e-3).is_err());
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::new(vec![2], vec![3.0, 0.0]).unwrap());
        grads.insert("b".to_string(), Tensor::new(vec![1], vec![4.0]).unwrap());
        clip_global_norm(&mut grads, 1.0);
        let norm: f64 = grads
            .values()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((grads["a"].data()[0] - 0.6).abs() < 1e-12);
    }
}
