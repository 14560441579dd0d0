//! Command-line workflow: calibrate → ingest → train → eval → analyze, plus
//! the synthetic-data generator. The binary in `main.rs` is a thin wrapper
//! around [`run`]; every command is an ordinary library function.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{analyze_scene, emit_plot, PlotKind, PlotSpec, Series};
use crate::config::{parse_metric_mode, FileConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_table, evaluate, panel_references, worker_references, BaselineKind, ModelPredictor,
};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::rng::SeedRng;
use crate::synth::{generate, Profile, SynthOptions};
use crate::trackio::{
    build_windows, estimate_homography, load_dataset, parse_track_file, save_dataset,
    split_dataset, AgentClass, Homography, Scene, Unit,
};
use crate::training::{fit, transfer_init, write_training_log, Checkpoint, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "trajgatformer",
    about = "Trajectory forecasting for workers and moving obstacles",
    version
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for everything stochastic.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for generated files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the pixel→world homography from four correspondences.
    Calibrate(CalibrateArgs),
    /// Parse a track file, map to world units, window, and split.
    Ingest(IngestArgs),
    /// Train a model variant on an ingested dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint or baseline with ADE/FDE.
    Eval(EvalArgs),
    /// Dataset statistics: mean walking speed and stop fraction.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic track file.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Correspondence file: 4 lines of `px,py,wx,wy`.
    #[arg(long)]
    pub points: PathBuf,
    /// Output homography JSON (default `homography.json` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Track file: `frame,class,id,x,y` per line.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Homography JSON for pixel-unit input.
    #[arg(long)]
    pub homography: Option<PathBuf>,
    /// Unit of the input positions.
    #[arg(long, default_value = "world")]
    pub unit: String,
    #[arg(long, default_value_t = 2.5)]
    pub fps: f64,
    #[arg(long, default_value_t = 8)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 12)]
    pub t_pred: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Train/val/test ratios.
    #[arg(long, default_value = "0.7,0.2,0.1")]
    pub ratios: String,
    /// Output dataset JSON (default `dataset.json` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Ingested dataset JSON.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model variant: `worker-only` or `with-obstacle`.
    #[arg(long, default_value = "worker-only")]
    pub variant: String,
    /// Base checkpoint for transfer initialization.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub factor: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Output checkpoint JSON (default `checkpoint.json` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Training log CSV (default `training_log.csv` in the out dir).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print per-epoch progress.
    #[arg(long, default_value_t = false)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ingested dataset JSON; evaluation runs on its test split.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Baseline predictor: `constant-velocity` or `kalman-cv`.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Metric mode: `standard` or `paper-literal`.
    #[arg(long, default_value = "standard")]
    pub mode: String,
    /// Classes to report, comma separated (`worker`, `obstacle`).
    #[arg(long, default_value = "worker")]
    pub classes: String,
    /// Include the published reference constants in the comparison table.
    #[arg(long, default_value_t = false)]
    pub refs: bool,
    /// Output report JSON (default `metrics.json` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comparison table base path (default `comparison` in the out dir,
    /// writing `.txt` and `.csv`).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Track file in world units.
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Stop-speed threshold in m/s.
    #[arg(long, default_value_t = crate::analysis::DEFAULT_STOP_THRESHOLD)]
    pub threshold: f64,
    /// Output stats JSON (default `speed_stats.json` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Worker motion profile: `linear`, `turning`, or `workstation`.
    #[arg(long)]
    pub profile: String,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub obstacles: usize,
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.15)]
    pub turn_rate: f64,
    #[arg(long, default_value_t = 0.7)]
    pub stop_target: f64,
    #[arg(long, default_value_t = 0.93)]
    pub mean_speed: f64,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Output track file (default `tracks.txt` in the out dir).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Fully resolved global settings (config file merged with flags).
pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub fps: f64,
}

impl Context {
    fn resolve(cli: &Cli) -> Result<Context> {
        let file = match &cli.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let out_dir = cli
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        let fps = file.fps.unwrap_or(2.5);
        Ok(Context {
            file,
            seed,
            out_dir,
            fps,
        })
    }

    fn out_path(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match explicit {
            Some(p) => p.clone(),
            None => self.out_dir.join(default_name),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::resolve(&cli)?;
    match &cli.command {
        Command::Calibrate(args) => cmd_calibrate(&ctx, args),
        Command::Ingest(args) => cmd_ingest(&ctx, args),
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Eval(args) => cmd_eval(&ctx, args),
        Command::Analyze(args) => cmd_analyze(&ctx, args),
        Command::Synth(args) => cmd_synth(&ctx, args),
    }
}

/// Parse a correspondence file: 4 data lines of `px,py,wx,wy`.
pub fn parse_correspondences(text: &str) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 4 fields px,py,wx,wy, got {}", fields.len()),
            });
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("'{f}' is not numeric"),
                })
            })
            .collect::<Result<_>>()?;
        src.push((nums[0], nums[1]));
        dst.push((nums[2], nums[3]));
    }
    if src.len() != 4 {
        return Err(Error::InsufficientData(format!(
            "calibration needs exactly 4 correspondences, got {}",
            src.len()
        )));
    }
    Ok((src, dst))
}

pub fn cmd_calibrate(ctx: &Context, args: &CalibrateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.points)
        .map_err(|e| Error::io(args.points.display().to_string(), e))?;
    let (src, dst) = parse_correspondences(&text)?;
    let h = estimate_homography(&src, &dst)?;
    let out = ctx.out_path(&args.output, "homography.json");
    h.save(&out)?;
    println!("homography written to {}", out.display());
    Ok(())
}

fn parse_unit(s: &str) -> Result<Unit> {
    match s.to_ascii_lowercase().as_str() {
        "pixel" | "px" => Ok(Unit::Pixel),
        "world" | "m" | "meters" => Ok(Unit::World),
        other => Err(Error::Config(format!(
            "unknown unit '{other}' (expected pixel or world)"
        ))),
    }
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("ratio '{p}' is not numeric")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "expected 3 ratios, got {}",
            parts.len()
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

pub fn cmd_ingest(ctx: &Context, args: &IngestArgs) -> Result<()> {
    let unit = parse_unit(&args.unit)?;
    let fps = if args.fps != 2.5 { args.fps } else { ctx.fps };
    let scene = parse_track_file(&args.tracks, unit, fps)?;
    let scene: Scene = match (unit, &args.homography) {
        (Unit::Pixel, Some(hpath)) => {
            let h = Homography::load(hpath)?;
            scene.to_world(&h)?
        }
        (Unit::Pixel, None) => {
            return Err(Error::Config(
                "pixel-unit input requires --homography for the pixel→world mapping".into(),
            ));
        }
        (Unit::World, Some(_)) => {
            return Err(Error::Config(
                "input is already in world units; drop --homography".into(),
            ));
        }
        (Unit::World, None) => scene,
    };
    let windows = build_windows(&scene, args.t_obs, args.t_pred, args.stride)?;
    let ratios = parse_ratios(&args.ratios)?;
    let split = split_dataset(&windows, ratios, ctx.seed, scene.fps)?;
    let out = ctx.out_path(&args.output, "dataset.json");
    save_dataset(&split, &out)?;
    let agents: usize = windows.iter().map(|w| w.agents.len()).sum();
    let obstacles: usize = windows.iter().map(|w| w.obstacles.len()).sum();
    println!(
        "{} windows (train {} / val {} / test {}), {} worker tracks, {} obstacle tracks -> {}",
        windows.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        agents,
        obstacles,
        out.display()
    );
    Ok(())
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "worker-only" | "worker" => Ok(Variant::WorkerOnly),
        "with-obstacle" | "obstacle" => Ok(Variant::WithObstacle),
        other => Err(Error::Config(format!(
            "unknown variant '{other}' (expected worker-only or with-obstacle)"
        ))),
    }
}

pub fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let variant = parse_variant(&args.variant)?;
    let split = load_dataset(&args.dataset)?;

    let mut model_cfg = ctx.file.model.apply(ModelConfig::default())?;
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = args.$field {
                model_cfg.$field = v;
            }
        };
    }
    flag!(d_model);
    flag!(d_k);
    flag!(ffn_hidden);
    flag!(dropout);
    model_cfg.validate()?;

    let base_tc = match variant {
        Variant::WorkerOnly => TrainConfig::default(),
        Variant::WithObstacle => TrainConfig::obstacle_default(),
    };
    let mut tc = ctx.file.train.apply(base_tc)?;
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(n) = args.batch_size {
        tc.batch = crate::training::BatchSpec::Uniform(n);
    }
    if let Some(v) = args.warmup {
        tc.warmup = v;
    }
    if let Some(v) = args.factor {
        tc.factor = v;
    }
    tc.seed = ctx.seed;
    tc.validate()?;

    let params = match &args.base {
        Some(base_path) => {
            let base = Checkpoint::load(base_path)?;
            transfer_init(model_cfg.clone(), variant, &base)?
        }
        None => {
            let mut rng = SeedRng::new(ctx.seed).split("init");
            ModelParams::init(model_cfg.clone(), variant, &mut rng)?
        }
    };

    if args.verbose {
        println!(
            "training {variant} model: {} parameters, {} epochs",
            params.num_parameters(),
            tc.epochs
        );
    }
    let ckpt = fit(params, &split, &tc)?;
    let out = ctx.out_path(&args.output, "checkpoint.json");
    ckpt.save(&out)?;
    let log = ctx.out_path(&args.log, "training_log.csv");
    write_training_log(&ckpt.loss_history, &log)?;
    let best = &ckpt.loss_history[ckpt.best_epoch - 1];
    println!(
        "best epoch {} (train {:.6}, val {:.6}) -> {} (log {})",
        ckpt.best_epoch,
        best.train_loss,
        best.val_loss,
        out.display(),
        log.display()
    );
    Ok(())
}

fn parse_classes(s: &str) -> Result<Vec<AgentClass>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.trim().to_ascii_lowercase().as_str() {
            "worker" | "workers" => out.push(AgentClass::Worker),
            "obstacle" | "obstacles" | "panel" | "panels" => out.push(AgentClass::Obstacle),
            other => {
                return Err(Error::Config(format!(
                    "unknown class '{other}' (expected worker or obstacle)"
                )))
            }
        }
    }
    Ok(out)
}

pub fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let split = load_dataset(&args.dataset)?;
    let mode = match &ctx.file.metric_mode {
        Some(m) if args.mode == "standard" => parse_metric_mode(m)?,
        _ => parse_metric_mode(&args.mode)?,
    };
    let classes = parse_classes(&args.classes)?;

    let model_params: Option<ModelParams>;
    let report = match (&args.checkpoint, &args.baseline) {
        (Some(ckpt_path), None) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            model_params = Some(ckpt.model()?);
            let predictor = ModelPredictor {
                params: model_params.as_ref().unwrap(),
                label: ckpt.variant.to_string(),
            };
            evaluate(&predictor, &split.test, mode, &classes)?
        }
        (None, Some(name)) => {
            let baseline: BaselineKind = name.parse()?;
            evaluate(&baseline, &split.test, mode, &classes)?
        }
        _ => {
            return Err(Error::Config(
                "eval needs exactly one of --checkpoint or --baseline".into(),
            ))
        }
    };
    let out = ctx.out_path(&args.output, "metrics.json");
    report.save(&out)?;

    let mut rows = Vec::new();
    if let Some(w) = &report.worker {
        rows.push((format!("{} [worker]", report.predictor), w.ade, w.fde));
    }
    if let Some(o) = &report.obstacle {
        rows.push((format!("{} [obstacle]", report.predictor), o.ade, o.fde));
    }
    let references = if args.refs {
        let mut r = worker_references();
        if report.obstacle.is_some() {
            r.extend(panel_references());
        }
        r
    } else {
        Vec::new()
    };
    let table = comparison_table(&rows, &references)?;
    let table_base = ctx.out_path(&args.table, "comparison");
    crate::write_atomic(&table_base.with_extension("txt"), table.text.as_bytes())?;
    crate::write_atomic(&table_base.with_extension("csv"), table.csv.as_bytes())?;
    print!("{}", table.text);
    println!("report -> {}", out.display());
    Ok(())
}

pub fn cmd_analyze(ctx: &Context, args: &AnalyzeArgs) -> Result<()> {
    let fps = args.fps.unwrap_or(ctx.fps);
    let scene = parse_track_file(&args.tracks, Unit::World, fps)?;
    let stats = analyze_scene(&scene, args.threshold)?;
    let out = ctx.out_path(&args.output, "speed_stats.json");
    stats.save(&out)?;

    let speed_series: Vec<Series> = stats
        .agents
        .iter()
        .map(|a| Series {
            name: format!("{} {}", a.class, a.id),
            points: vec![(a.id as f64, a.mean_speed)],
        })
        .collect();
    let stop_series: Vec<Series> = stats
        .agents
        .iter()
        .map(|a| Series {
            name: format!("{} {}", a.class, a.id),
            points: vec![(a.id as f64, a.stop_fraction)],
        })
        .collect();
    emit_plot(&PlotSpec {
        kind: PlotKind::SpeedBars,
        title: "mean walking speed".into(),
        x_label: "agent".into(),
        y_label: "m/s".into(),
        series: speed_series,
        out: out.with_file_name("mean_speed"),
    })?;
    emit_plot(&PlotSpec {
        kind: PlotKind::SpeedBars,
        title: format!("stop fraction (threshold {} m/s)", stats.threshold),
        x_label: "agent".into(),
        y_label: "fraction".into(),
        series: stop_series,
        out: out.with_file_name("stop_fraction"),
    })?;
    for a in &stats.agents {
        println!(
            "{} {}: mean speed {:.3} m/s, stop fraction {:.3} ({} points)",
            a.class, a.id, a.mean_speed, a.stop_fraction, a.n_points
        );
    }
    println!("stats -> {}", out.display());
    Ok(())
}

pub fn cmd_synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let profile: Profile = args.profile.parse()?;
    let opts = SynthOptions {
        frames: args.frames,
        workers: args.workers,
        obstacles: args.obstacles,
        fps: args.fps.unwrap_or(ctx.fps),
        speed: args.speed,
        noise_sigma: args.noise,
        turn_rate: args.turn_rate,
        stop_target: args.stop_target,
        mean_speed: args.mean_speed,
        seed: ctx.seed,
    };
    let scene = generate(profile, &opts)?;
    let out = ctx.out_path(&args.output, "tracks.txt");
    crate::write_atomic(&out, crate::trackio::format_track_file(&scene).as_bytes())?;
    println!(
        "{} records ({} workers, {} obstacles, {} frames) -> {}",
        scene.records.len(),
        args.workers,
        args.obstacles,
        args.frames,
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correspondence_parser_handles_comments_and_arity() {
        let text = "# px,py,wx,wy\n0,0,0,0\n640,0,10,0\n640,640,10,10\n0,640,0,10\n";
        let (src, dst) = parse_correspondences(text).unwrap();
        assert_eq!(src.len(), 4);
        assert_eq!(dst[1], (10.0, 0.0));
        assert!(parse_correspondences("1,2,3\n").is_err());
        assert!(parse_correspondences("1,2,3,4\n").is_err());
    }

    #[test]
    fn class_and_variant_parsers() {
        assert_eq!(
            parse_classes("worker,obstacle").unwrap(),
            vec![AgentClass::Worker, AgentClass::Obstacle]
        );
        assert!(parse_classes("robot").is_err());
        assert_eq!(parse_variant("worker-only").unwrap(), Variant::WorkerOnly);
        assert_eq!(parse_variant("obstacle").unwrap(), Variant::WithObstacle);
        assert!(parse_variant("both").is_err());
    }

    #[test]
    fn ratio_parser() {
        assert_eq!(parse_ratios("0.7,0.2,0.1").unwrap(), (0.7, 0.2, 0.1));
        assert!(parse_ratios("0.7,0.3").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }
}
