//! Knowledge-based baseline predictors: constant velocity and a
//! constant-velocity Kalman filter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROCESS_NOISE: f64 = 1e-2;
pub const DEFAULT_MEASUREMENT_NOISE: f64 = 1e-1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    ConstantVelocity,
    KalmanCv,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::ConstantVelocity => write!(f, "constant-velocity"),
            BaselineKind::KalmanCv => write!(f, "kalman-cv"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<BaselineKind> {
        match s.to_ascii_lowercase().as_str() {
            "constant-velocity" | "cv" => Ok(BaselineKind::ConstantVelocity),
            "kalman-cv" | "kalman" | "kf" => Ok(BaselineKind::KalmanCv),
            other => Err(Error::Config(format!(
                "unknown baseline '{other}' (expected constant-velocity or kalman-cv)"
            ))),
        }
    }
}

/// Extrapolate with the last observed per-frame displacement.
pub fn constant_velocity_predict(
    observed: &[(f64, f64)],
    horizon: usize,
) -> Result<Vec<(f64, f64)>> {
    if observed.len() < 2 {
        return Err(Error::InsufficientData(
            "constant-velocity needs at least 2 observed points".into(),
        ));
    }
    let last = observed[observed.len() - 1];
    let prev = observed[observed.len() - 2];
    let v = (last.0 - prev.0, last.1 - prev.1);
    Ok((1..=horizon)
        .map(|k| (last.0 + k as f64 * v.0, last.1 + k as f64 * v.1))
        .collect())
}

type Mat4 = [[f64; 4]; 4];

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..4 {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn mat4_transpose(a: &Mat4) -> Mat4 {
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[j][i] = a[i][j];
        }
    }
    t
}

/// 4-state (x, y, vx, vy) constant-velocity filter over the observed points
/// (one frame per step), then a pure prediction rollout. The state starts
/// from the first two observations, so a clean linear track passes through
/// with zero innovation.
pub fn kalman_predict(
    observed: &[(f64, f64)],
    horizon: usize,
    process_noise: f64,
    measurement_noise: f64,
) -> Result<Vec<(f64, f64)>> {
    let (_, x, _) = kalman_filter_pass(observed, process_noise, measurement_noise)?;
    let mut out = Vec::with_capacity(horizon);
    let mut pos = (x[0], x[1]);
    for _ in 0..horizon {
        pos = (pos.0 + x[2], pos.1 + x[3]);
        out.push(pos);
    }
    Ok(out)
}

/// Run the predict/update sweep and return (posterior trace per update,
/// final state, final covariance). Exposed for the filter-property tests.
pub fn kalman_filter_pass(
    observed: &[(f64, f64)],
    process_noise: f64,
    measurement_noise: f64,
) -> Result<(Vec<f64>, [f64; 4], Mat4)> {
    if observed.len() < 2 {
        return Err(Error::InsufficientData(
            "kalman filter needs at least 2 observed points".into(),
        ));
    }
    // Transition: x += vx, y += vy (dt = one frame).
    let f: Mat4 = [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let ft = mat4_transpose(&f);
    let q = process_noise;
    let r = measurement_noise;

    let p0 = observed[0];
    let p1 = observed[1];
    let mut x = [p1.0, p1.1, p1.0 - p0.0, p1.1 - p0.1];
    let mut p: Mat4 = [[0.0; 4]; 4];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let mut traces = Vec::new();
    for z in &observed[2..] {
        // Predict.
        let xp = [x[0] + x[2], x[1] + x[3], x[2], x[3]];
        let mut pp = mat4_mul(&mat4_mul(&f, &p), &ft);
        for (i, row) in pp.iter_mut().enumerate() {
            row[i] += q;
        }
        // Update with measurement (x, y). S = H P Hᵀ + R is the top-left
        // 2×2 block plus R on the diagonal.
        let s = [
            [pp[0][0] + r, pp[0][1]],
            [pp[1][0], pp[1][1] + r],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        if det <= 0.0 || s[0][0] <= 0.0 || s[1][1] <= 0.0 {
            return Err(Error::Numeric(
                "kalman update: innovation covariance is not positive definite".into(),
            ));
        }
        let s_inv = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        // K = P Hᵀ S⁻¹ (4×2).
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                k[i][j] = pp[i][0] * s_inv[0][j] + pp[i][1] * s_inv[1][j];
            }
        }
        let innov = [z.0 - xp[0], z.1 - xp[1]];
        for i in 0..4 {
            x[i] = xp[i] + k[i][0] * innov[0] + k[i][1] * innov[1];
        }
        // P = (I − K H) P.
        let mut p_new = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let kh = k[i][0] * pp[0][j] + k[i][1] * pp[1][j];
                p_new[i][j] = pp[i][j] - kh;
            }
        }
        p = p_new;
        traces.push(p[0][0] + p[1][1] + p[2][2] + p[3][3]);
    }
    Ok((traces, x, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_track(n: usize, v: (f64, f64)) -> Vec<(f64, f64)> {
        (0..n)
            .map(|t| (1.0 + v.0 * t as f64, -2.0 + v.1 * t as f64))
            .collect()
    }

    #[test]
    fn stationary_input_stays_put() {
        let obs = vec![(3.0, 4.0); 8];
        let pred = constant_velocity_predict(&obs, 12).unwrap();
        assert!(pred.iter().all(|&p| p == (3.0, 4.0)));
        let kf = kalman_predict(&obs, 12, DEFAULT_PROCESS_NOISE, DEFAULT_MEASUREMENT_NOISE)
            .unwrap();
        for p in kf {
            assert!((p.0 - 3.0).abs() < 1e-9 && (p.1 - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_velocity_marches_forward() {
        let obs = linear_track(8, (1.0, 0.0));
        let pred = constant_velocity_predict(&obs, 12).unwrap();
        let last_x = obs.last().unwrap().0;
        for (k, p) in pred.iter().enumerate() {
            assert!((p.0 - (last_x + (k + 1) as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_tracks_are_predicted_exactly() {
        // Generated linear tracks, evaluated with the metric oracle.
        let obs = linear_track(8, (0.4, -0.3));
        let truth: Vec<(f64, f64)> = (8..20)
            .map(|t| (1.0 + 0.4 * t as f64, -2.0 - 0.3 * t as f64))
            .collect();
        let cv = constant_velocity_predict(&obs, 12).unwrap();
        for (p, t) in cv.iter().zip(&truth) {
            assert!((p.0 - t.0).abs() < 1e-9 && (p.1 - t.1).abs() < 1e-9);
        }
    }

    #[test]
    fn kalman_matches_constant_velocity_on_clean_data() {
        let obs = linear_track(8, (0.25, 0.6));
        let cv = constant_velocity_predict(&obs, 12).unwrap();
        let kf = kalman_predict(&obs, 12, DEFAULT_PROCESS_NOISE, DEFAULT_MEASUREMENT_NOISE)
            .unwrap();
        for (a, b) in kf.iter().zip(&cv) {
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }

    #[test]
    fn covariance_trace_is_non_increasing_on_clean_data() {
        let obs = linear_track(8, (0.4, 0.0));
        let (traces, _, _) = kalman_filter_pass(
            &obs,
            DEFAULT_PROCESS_NOISE,
            DEFAULT_MEASUREMENT_NOISE,
        )
        .unwrap();
        assert_eq!(traces.len(), 6);
        for pair in traces.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "trace increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(constant_velocity_predict(&[(0.0, 0.0)], 12).is_err());
        assert!(kalman_predict(&[(0.0, 0.0)], 12, 1e-2, 1e-1).is_err());
    }

    #[test]
    fn baseline_names_parse() {
        assert_eq!(
            "constant-velocity".parse::<BaselineKind>().unwrap(),
            BaselineKind::ConstantVelocity
        );
        assert_eq!(
            "kalman".parse::<BaselineKind>().unwrap(),
            BaselineKind::KalmanCv
        );
        assert!("lstm".parse::<BaselineKind>().is_err());
    }
}
