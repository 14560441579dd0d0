//! ADE/FDE metrics, knowledge-based baseline predictors, and the
//! model-vs-baseline comparison report.

mod baselines;
mod references;

pub use baselines::{constant_velocity_predict, kalman_predict, BaselineKind};
pub use references::{panel_references, worker_references, ReferenceEntry};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forecast, AgentForecast, DecodeMode, ModelParams, Variant};
use crate::trackio::{AgentClass, WindowSample};

/// ADE denominator convention. `Standard` divides by the number of predicted
/// points; `PaperLiteral` divides by T_pred − T_obs − 1 (11 for the 12-step
/// horizon), which undercounts the points by one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    Standard,
    PaperLiteral,
}

fn check_shapes(pred: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<usize> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "metrics: {} predicted agents vs {} true agents",
            pred.len(),
            truth.len()
        )));
    }
    let t = pred[0].len();
    for (p, tr) in pred.iter().zip(truth) {
        if p.len() != t || tr.len() != t || t == 0 {
            return Err(Error::Shape(
                "metrics: ragged or empty point lists".into(),
            ));
        }
    }
    Ok(t)
}

/// Average displacement error in meters over all agents and steps.
pub fn ade(pred: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>], mode: MetricMode) -> Result<f64> {
    let t = check_shapes(pred, truth)?;
    let n = pred.len();
    let mut sum = 0.0;
    for (p, tr) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(tr) {
            sum += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
    }
    let denom = match mode {
        MetricMode::Standard => (n * t) as f64,
        MetricMode::PaperLiteral => {
            if t < 2 {
                return Err(Error::Shape(
                    "paper-literal ADE needs a horizon of at least 2 steps".into(),
                ));
            }
            (n * (t - 1)) as f64
        }
    };
    Ok(sum / denom)
}

/// Final displacement error in meters: mean over agents of the distance at
/// the last predicted step.
pub fn fde(pred: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut sum = 0.0;
    for (p, tr) in pred.iter().zip(truth) {
        let a = p.last().unwrap();
        let b = tr.last().unwrap();
        sum += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    Ok(sum / pred.len() as f64)
}

/// Anything that can predict futures for the agents of a window.
pub trait Predictor {
    fn name(&self) -> String;
    /// Whether obstacle trajectories are predicted (and may be requested).
    fn supports_obstacles(&self) -> bool;
    fn predict(&self, window: &WindowSample) -> Result<Vec<AgentForecast>>;
}

impl Predictor for BaselineKind {
    fn name(&self) -> String {
        self.to_string()
    }

    fn supports_obstacles(&self) -> bool {
        true
    }

    fn predict(&self, window: &WindowSample) -> Result<Vec<AgentForecast>> {
        let mut out = Vec::new();
        for track in window.agents.iter().chain(&window.obstacles) {
            let horizon = track.future.len();
            let points = match self {
                BaselineKind::ConstantVelocity => {
                    constant_velocity_predict(&track.observed, horizon)?
                }
                BaselineKind::KalmanCv => kalman_predict(
                    &track.observed,
                    horizon,
                    baselines::DEFAULT_PROCESS_NOISE,
                    baselines::DEFAULT_MEASUREMENT_NOISE,
                )?,
            };
            out.push(AgentForecast {
                class: track.class,
                id: track.id,
                points,
            });
        }
        Ok(out)
    }
}

/// Autoregressive model predictor over a trained parameter set.
pub struct ModelPredictor<'a> {
    pub params: &'a ModelParams,
    pub label: String,
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn supports_obstacles(&self) -> bool {
        self.params.variant == Variant::WithObstacle
    }

    fn predict(&self, window: &WindowSample) -> Result<Vec<AgentForecast>> {
        forecast(self.params, window, DecodeMode::Autoregressive)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ade: f64,
    pub fde: f64,
    pub n_agents: usize,
    pub n_windows: usize,
}

/// ADE/FDE per class, serializable to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub predictor: String,
    pub mode: MetricMode,
    pub worker: Option<ClassMetrics>,
    pub obstacle: Option<ClassMetrics>,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        crate::write_atomic(path, json.as_bytes())
    }

    pub fn class(&self, class: AgentClass) -> Option<&ClassMetrics> {
        match class {
            AgentClass::Worker => self.worker.as_ref(),
            AgentClass::Obstacle => self.obstacle.as_ref(),
        }
    }
}

/// Run autoregressive prediction over the test windows and aggregate ADE/FDE
/// for the requested classes, workers and obstacles reported separately.
pub fn evaluate(
    predictor: &dyn Predictor,
    test: &[WindowSample],
    mode: MetricMode,
    classes: &[AgentClass],
) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData("evaluate: no test windows".into()));
    }
    if classes.is_empty() {
        return Err(Error::Config("evaluate: no classes requested".into()));
    }
    if classes.contains(&AgentClass::Obstacle) && !predictor.supports_obstacles() {
        return Err(Error::Config(format!(
            "obstacle metrics requested from '{}', which predicts workers only",
            predictor.name()
        )));
    }

    struct Acc {
        pred: Vec<Vec<(f64, f64)>>,
        truth: Vec<Vec<(f64, f64)>>,
        windows: usize,
    }
    let mut workers = Acc {
        pred: Vec::new(),
        truth: Vec::new(),
        windows: 0,
    };
    let mut obstacles = Acc {
        pred: Vec::new(),
        truth: Vec::new(),
        windows: 0,
    };

    for window in test {
        let forecasts = predictor.predict(window)?;
        let mut saw_worker = false;
        let mut saw_obstacle = false;
        for f in forecasts {
            if !classes.contains(&f.class) {
                continue;
            }
            let track = window
                .agents
                .iter()
                .chain(&window.obstacles)
                .find(|a| a.class == f.class && a.id == f.id)
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "prediction for unknown agent {} {}",
                        f.class, f.id
                    ))
                })?;
            let acc = match f.class {
                AgentClass::Worker => {
                    saw_worker = true;
                    &mut workers
                }
                AgentClass::Obstacle => {
                    saw_obstacle = true;
                    &mut obstacles
                }
            };
            acc.pred.push(f.points);
            acc.truth.push(track.future.clone());
        }
        workers.windows += saw_worker as usize;
        obstacles.windows += saw_obstacle as usize;
    }

    let finish = |acc: &Acc| -> Result<Option<ClassMetrics>> {
        if acc.pred.is_empty() {
            return Ok(None);
        }
        Ok(Some(ClassMetrics {
            ade: ade(&acc.pred, &acc.truth, mode)?,
            fde: fde(&acc.pred, &acc.truth)?,
            n_agents: acc.pred.len(),
            n_windows: acc.windows,
        }))
    };
    Ok(MetricReport {
        predictor: predictor.name(),
        mode,
        worker: finish(&workers)?,
        obstacle: finish(&obstacles)?,
    })
}

/// A comparison table in aligned plain text and CSV.
pub struct ComparisonTable {
    pub text: String,
    pub csv: String,
}

/// Improvement of `ours` over `reference` in percent: (ref − ours)/ref × 100.
pub fn improvement_pct(reference: f64, ours: f64) -> f64 {
    (reference - ours) / reference * 100.0
}

/// Tabulate each report against the reference constants, with percentage
/// improvement columns per reference row.
pub fn comparison_table(
    reports: &[(String, f64, f64)],
    references: &[ReferenceEntry],
) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Config("comparison table needs >= 1 report".into()));
    }
    let mut text = String::new();
    let mut csv = String::from("report,model,ade,fde,ade_improvement_pct,fde_improvement_pct\n");
    for (name, our_ade, our_fde) in reports {
        text.push_str(&format!("== {name} ==\n"));
        text.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>12} {:>12}\n",
            "model", "ADE", "FDE", "ADE impr %", "FDE impr %"
        ));
        for r in references {
            let ai = improvement_pct(r.ade, *our_ade);
            let fi = improvement_pct(r.fde, *our_fde);
            text.push_str(&format!(
                "{:<28} {:>8.3} {:>8.3} {:>12.1} {:>12.1}\n",
                r.name, r.ade, r.fde, ai, fi
            ));
            csv.push_str(&format!(
                "{name},{},{},{},{:.4},{:.4}\n",
                r.name, r.ade, r.fde, ai, fi
            ));
        }
        text.push_str(&format!(
            "{:<28} {:>8.3} {:>8.3} {:>12} {:>12}\n\n",
            format!("{name} (ours)"),
            our_ade,
            our_fde,
            "-",
            "-"
        ));
        csv.push_str(&format!("{name},{name} (ours),{our_ade},{our_fde},,\n"));
    }
    Ok(ComparisonTable { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use crate::trackio::AgentTrack;

    fn points(n: usize, t: usize, rng: &mut SeedRng) -> Vec<Vec<(f64, f64)>> {
        (0..n)
            .map(|_| {
                (0..t)
                    .map(|_| (rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn ade_trivial_and_offset_cases() {
        let truth = vec![vec![(0.0, 0.0); 12]];
        assert_eq!(ade(&truth, &truth, MetricMode::Standard).unwrap(), 0.0);
        assert_eq!(ade(&truth, &truth, MetricMode::PaperLiteral).unwrap(), 0.0);
        let pred = vec![vec![(0.3, 0.4); 12]];
        assert!((ade(&pred, &truth, MetricMode::Standard).unwrap() - 0.5).abs() < 1e-12);
        // Literal denominator 11 for one agent: 12·0.5/11.
        let lit = ade(&pred, &truth, MetricMode::PaperLiteral).unwrap();
        assert!((lit - 12.0 * 0.5 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn fde_trivial_cases() {
        let truth = vec![vec![(1.0, 1.0); 12]];
        assert_eq!(fde(&truth, &truth).unwrap(), 0.0);
        let mut pred = truth.clone();
        pred[0][11] = (4.0, 5.0);
        assert!((fde(&pred, &truth).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_brute_force_loops() {
        let mut rng = SeedRng::new(90);
        for _ in 0..50 {
            let n = 1 + rng.gen_range_usize(5);
            let pred = points(n, 12, &mut rng);
            let truth = points(n, 12, &mut rng);
            let mut total = 0.0;
            let mut last_total = 0.0;
            for i in 0..n {
                for s in 0..12 {
                    let d = ((pred[i][s].0 - truth[i][s].0).powi(2)
                        + (pred[i][s].1 - truth[i][s].1).powi(2))
                    .sqrt();
                    total += d;
                    if s == 11 {
                        last_total += d;
                    }
                }
            }
            let std = ade(&pred, &truth, MetricMode::Standard).unwrap();
            let lit = ade(&pred, &truth, MetricMode::PaperLiteral).unwrap();
            assert!((std - total / (n * 12) as f64).abs() < 1e-12);
            assert!((lit - total / (n * 11) as f64).abs() < 1e-12);
            assert!((lit - std * 12.0 / 11.0).abs() < 1e-12 * lit.max(1.0));
            assert!((fde(&pred, &truth).unwrap() - last_total / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = vec![vec![(0.0, 0.0); 12]];
        let b = vec![vec![(0.0, 0.0); 11]];
        assert!(ade(&a, &b, MetricMode::Standard).is_err());
        assert!(fde(&a, &[]).is_err());
    }

    fn linear_track(class: AgentClass, id: u64, vel: (f64, f64)) -> AgentTrack {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|t| (vel.0 * t as f64, vel.1 * t as f64))
            .collect();
        AgentTrack {
            class,
            id,
            observed: pts[..8].to_vec(),
            future: pts[8..].to_vec(),
        }
    }

    fn linear_windows(n: usize) -> Vec<WindowSample> {
        (0..n as i64)
            .map(|i| WindowSample {
                scene_window_id: i,
                agents: vec![linear_track(AgentClass::Worker, 1, (0.4, 0.1 * i as f64))],
                obstacles: vec![linear_track(AgentClass::Obstacle, 1, (0.0, 0.2))],
            })
            .collect()
    }

    /// Test-only oracle that echoes the ground truth.
    struct TruthOracle;
    impl Predictor for TruthOracle {
        fn name(&self) -> String {
            "truth-oracle".into()
        }
        fn supports_obstacles(&self) -> bool {
            true
        }
        fn predict(&self, window: &WindowSample) -> Result<Vec<AgentForecast>> {
            Ok(window
                .agents
                .iter()
                .chain(&window.obstacles)
                .map(|a| AgentForecast {
                    class: a.class,
                    id: a.id,
                    points: a.future.clone(),
                })
                .collect())
        }
    }

    #[test]
    fn perfect_oracle_scores_zero() {
        let windows = linear_windows(4);
        let report = evaluate(
            &TruthOracle,
            &windows,
            MetricMode::Standard,
            &[AgentClass::Worker, AgentClass::Obstacle],
        )
        .unwrap();
        let w = report.worker.unwrap();
        let o = report.obstacle.unwrap();
        assert_eq!((w.ade, w.fde), (0.0, 0.0));
        assert_eq!((o.ade, o.fde), (0.0, 0.0));
        assert_eq!(w.n_agents, 4);
        assert_eq!(w.n_windows, 4);
    }

    #[test]
    fn constant_velocity_is_exact_on_linear_tracks() {
        let windows = linear_windows(3);
        let report = evaluate(
            &BaselineKind::ConstantVelocity,
            &windows,
            MetricMode::Standard,
            &[AgentClass::Worker, AgentClass::Obstacle],
        )
        .unwrap();
        assert!(report.worker.unwrap().ade < 1e-9);
        assert!(report.obstacle.unwrap().fde < 1e-9);
    }

    #[test]
    fn worker_only_model_rejects_obstacle_request() {
        let cfg = {
            let mut c = crate::model::ModelConfig::reduced(16);
            c.dropout = 0.0;
            c
        };
        let params = ModelParams::zeros(cfg, Variant::WorkerOnly).unwrap();
        let predictor = ModelPredictor {
            params: &params,
            label: "worker_model".into(),
        };
        let windows = linear_windows(2);
        assert!(matches!(
            evaluate(
                &predictor,
                &windows,
                MetricMode::Standard,
                &[AgentClass::Worker, AgentClass::Obstacle],
            ),
            Err(Error::Config(_))
        ));
        // Worker-only request works.
        let report = evaluate(
            &predictor,
            &windows,
            MetricMode::Standard,
            &[AgentClass::Worker],
        )
        .unwrap();
        assert!(report.worker.is_some());
        assert!(report.obstacle.is_none());
    }

    #[test]
    fn comparison_improvements_match_reference_arithmetic() {
        let refs = worker_references();
        let table = comparison_table(&[("ours".into(), 1.250, 2.350)], &refs).unwrap();
        // vs LSTM 1.753: (1.753 - 1.250)/1.753 = 28.69%.
        assert!(table.text.contains("28.7"));
        // The published improvement of the obstacle variant over the
        // worker-only model: (1.250 - 1.030)/1.250 = 17.6%.
        let i = improvement_pct(1.250, 1.030);
        assert!((i - 17.6).abs() < 0.05, "improvement {i}");
        // Single report, no references: header and ours row only.
        let solo = comparison_table(&[("solo".into(), 1.0, 2.0)], &[]).unwrap();
        assert!(solo.text.contains("solo (ours)"));
        assert!(!solo.text.contains("LSTM"));
    }
}
