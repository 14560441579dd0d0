//! Planar homography estimation from four point correspondences.
//!
//! With exactly four correspondences and h[2][2] pinned to 1 the direct
//! linear system has eight unknowns and eight equations, so it is solved
//! exactly by Gaussian elimination rather than least squares.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// 3×3 projective map with h[2][2] = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Homography {
        Homography {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn new(h: [[f64; 3]; 3]) -> Result<Homography> {
        if (h[2][2] - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "homography must be normalized with h[2][2] = 1, got {}",
                h[2][2]
            )));
        }
        let hm = Homography { h };
        if hm.det().abs() < 1e-12 {
            return Err(Error::Singular("homography is not invertible".into()));
        }
        Ok(hm)
    }

    pub fn det(&self) -> f64 {
        let h = &self.h;
        h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
            - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
            + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
    }

    /// Inverse map (normalized so the inverse also has h[2][2] = 1).
    pub fn inverse(&self) -> Result<Homography> {
        let h = &self.h;
        let det = self.det();
        if det.abs() < 1e-15 {
            return Err(Error::Singular("homography inverse: zero determinant".into()));
        }
        let cof = |r1: usize, c1: usize, r2: usize, c2: usize| {
            h[r1][c1] * h[r2][c2] - h[r1][c2] * h[r2][c1]
        };
        // Adjugate transpose over determinant.
        let mut inv = [
            [cof(1, 1, 2, 2), -cof(0, 1, 2, 2), cof(0, 1, 1, 2)],
            [-cof(1, 0, 2, 2), cof(0, 0, 2, 2), -cof(0, 0, 1, 2)],
            [cof(1, 0, 2, 1), -cof(0, 0, 2, 1), cof(0, 0, 1, 1)],
        ];
        for row in &mut inv {
            for v in row.iter_mut() {
                *v /= det;
            }
        }
        let scale = inv[2][2];
        if scale.abs() < 1e-15 {
            return Err(Error::Singular(
                "homography inverse cannot be normalized".into(),
            ));
        }
        for row in &mut inv {
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
        inv[2][2] = 1.0;
        Ok(Homography { h: inv })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = HomographyFile {
            format: FORMAT_TAG.to_string(),
            version: 1,
            h: self.h,
        };
        let json = serde_json::to_string_pretty(&doc).expect("homography serializes");
        crate::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Homography> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: HomographyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("homography file: {e}"),
        })?;
        if doc.format != FORMAT_TAG {
            return Err(Error::Integrity(format!(
                "unexpected format tag '{}' in homography file",
                doc.format
            )));
        }
        Homography::new(doc.h)
    }
}

const FORMAT_TAG: &str = "tgf-homography";

#[derive(Serialize, Deserialize)]
struct HomographyFile {
    format: String,
    version: u32,
    h: [[f64; 3]; 3],
}

fn triple_collinear(points: &[Point]) -> bool {
    // Cross-product area test, scaled by the spread of the points.
    let scale = points
        .iter()
        .flat_map(|p| [p.0.abs(), p.1.abs()])
        .fold(1.0, f64::max);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                let (ax, ay) = points[i];
                let (bx, by) = points[j];
                let (cx, cy) = points[k];
                let area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
                if area.abs() < 1e-9 * scale * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Solve an n×n dense system in place by Gaussian elimination with partial
/// pivoting.
fn solve_linear(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot < 1e-12 {
            return Err(Error::Singular(format!(
                "linear system is singular at column {col}"
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Estimate the homography mapping the four `src` points onto the four
/// `dst` points. Rejects configurations with a collinear triple or
/// coincident points on either side.
pub fn estimate_homography(src: &[Point], dst: &[Point]) -> Result<Homography> {
    if src.len() != 4 || dst.len() != 4 {
        return Err(Error::Config(format!(
            "homography needs exactly 4 correspondences, got {} -> {}",
            src.len(),
            dst.len()
        )));
    }
    if triple_collinear(src) {
        return Err(Error::Singular(
            "three source points are collinear (or coincident)".into(),
        ));
    }
    if triple_collinear(dst) {
        return Err(Error::Singular(
            "three destination points are collinear (or coincident)".into(),
        ));
    }

    // Two equations per correspondence in the unknowns h0..h7:
    //   x·h0 + y·h1 + h2 − u·x·h6 − u·y·h7 = u
    //   x·h3 + y·h4 + h5 − v·x·h6 − v·y·h7 = v
    let mut a = vec![vec![0.0; 8]; 8];
    let mut b = vec![0.0; 8];
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        a[2 * i] = vec![x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        b[2 * i] = u;
        a[2 * i + 1] = vec![0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * i + 1] = v;
    }
    let h = solve_linear(&mut a, &mut b)?;
    let hm = Homography::new([
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], 1.0],
    ])?;

    // The four correspondences must be reproduced to calibration accuracy.
    for (&s, &d) in src.iter().zip(dst) {
        let mapped = apply_homography(&hm, s)?;
        let err = ((mapped.0 - d.0).powi(2) + (mapped.1 - d.1).powi(2)).sqrt();
        if err > 1e-6 {
            return Err(Error::Numeric(format!(
                "calibration residual {err:e} exceeds 1e-6"
            )));
        }
    }
    Ok(hm)
}

/// Map a point through the homography, with perspective division.
pub fn apply_homography(h: &Homography, p: Point) -> Result<Point> {
    let m = &h.h;
    let (x, y) = p;
    let xp = m[0][0] * x + m[0][1] * y + m[0][2];
    let yp = m[1][0] * x + m[1][1] * y + m[1][2];
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    if w.abs() < 1e-12 {
        return Err(Error::PointAtInfinity { w });
    }
    Ok((xp / w, yp / w))
}
