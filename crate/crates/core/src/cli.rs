//! The `nsp` command line: train, predict, simulate, evaluate, gradcheck.
//!
//! Errors end the run with exit code 1 and one line on stderr:
//! `error kind=<Kind> message="<text>"`. Usage errors exit with 2.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use glam::DVec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::ForceSwitches;
use crate::error::{NspError, Result};
use crate::eval::{self, min_of_k, CollisionSpec, Protocol};
use crate::io::{self, Checkpoint, Direction, Homography, Record, RunConfig};
use crate::model::ModelParams;
use crate::rollout::{rollout_window, Cohort, RolloutOptions};
use crate::synthetic::{generate_cohorts, SyntheticSpec};
use crate::training::{self, progressive_train, residual_samples, Stage};
use crate::types::{NspConfig, SceneGrid, OBS_LEN, PRED_LEN};

/// Simulation frame rate of the `simulate` command.
pub const SIMULATION_FPS: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "nsp", version, about = "Neural social-force crowd model")]
pub struct Cli {
    /// Worker threads (defaults to NSP_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to trajectory files.
    Train(TrainArgs),
    /// Predict the future frames of every window in a trajectory file.
    Predict(PredictArgs),
    /// Simulate a crowd crossing a scene at 10 FPS.
    Simulate(SimulateArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare backprop with finite differences on a checkpoint.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

impl StageArg {
    fn stages(self) -> Vec<Stage> {
        match self {
            StageArg::One => vec![Stage::GoalOnly],
            StageArg::Two => vec![Stage::AddRepulsion],
            StageArg::Three => vec![Stage::CvaeOnly],
            StageArg::All => Stage::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Det,
    Sto,
    Ultra,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set goal_lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Trajectory files; defaults to the config's `train` list.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Scene grid; without one the scene has no obstacles.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sto")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub agents: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Goal force only, the ablation baseline.
    #[arg(long)]
    pub goal_only: bool,
    #[arg(long, default_value_t = 20.0)]
    pub min_speed: f64,
    #[arg(long, default_value_t = 50.0)]
    pub max_speed: f64,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Pixel-to-world matrix; errors are then reported in world units.
    #[arg(long)]
    pub homography: Option<PathBuf>,
    #[arg(long, default_value_t = CollisionSpec::PIXEL_RADIUS)]
    pub collision_r: f64,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Trajectory file for the check; defaults to a generated scene.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Elements probed per tensor.
    #[arg(long, default_value_t = 8)]
    pub per_tensor: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = if e.use_stderr() { e.render().to_string() } else { e.to_string() };
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error kind={} message={:?}", e.kind(), e.to_string());
            1
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => std::env::var("NSP_THREADS").ok().map(|v| v.parse().map_err(|_| NspError::config("NSP_THREADS", "expected an integer"))).transpose()?,
    };
    if let Some(n) = threads {
        // a pool from an earlier call in the same process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| NspError::io("<stdout>", e))
}

/// File config, then checkpoint settings when `from_ckpt` has them, then
/// `--set` overrides.
fn resolve_config(args: &ConfigArgs, from_ckpt: Option<&Checkpoint>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let (None, Some(ckpt)) = (&args.config, from_ckpt) {
        if let Some(d) = ckpt.meta("dataset") {
            cfg.set("dataset", d)?;
        }
        for (k, v) in &ckpt.meta {
            if let Some(key) = k.strip_prefix("cfg.") {
                cfg.nsp.set(key, v)?;
            }
        }
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| NspError::config(kv, "expected KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_grid(path: Option<&Path>) -> Result<SceneGrid> {
    path.map_or_else(|| Ok(SceneGrid::empty()), io::load_scene_grid)
}

fn load_cohorts(paths: &[PathBuf], cfg: &RunConfig) -> Result<Vec<Cohort>> {
    let mut cohorts = Vec::new();
    for path in paths {
        cohorts.extend(io::build_cohorts(&io::load_trajectories(path)?, cfg.stride, cfg.nsp.dt));
    }
    Ok(cohorts)
}

fn checkpoint_for(model: &ModelParams, cfg: &RunConfig, stage: Option<Stage>) -> Checkpoint {
    let mut ckpt = Checkpoint::new(model.clone());
    if let Some(d) = cfg.dataset {
        ckpt.set_meta("dataset", d.name());
    }
    if let Some(s) = stage {
        ckpt.set_meta("stage", s.number().to_string());
    }
    for (k, v) in cfg.nsp.entries() {
        ckpt.set_meta(&format!("cfg.{k}"), format!("{v:?}"));
    }
    ckpt
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let init = a.init.as_deref().map(io::load_checkpoint).transpose()?;
    let mut cfg = resolve_config(&a.cfg, init.as_ref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let files = if a.data.is_empty() { cfg.train_files.clone() } else { a.data.clone() };
    if files.is_empty() {
        return Err(NspError::config("data", "no trajectory files given (use --data or `train =` in the config)"));
    }
    let data = load_cohorts(&files, &cfg)?;
    if data.is_empty() {
        return Err(NspError::config("data", "no complete 20-frame windows in the training files"));
    }
    let grid = load_grid(a.scene.as_deref())?;
    let mut model = match init {
        Some(c) => c.model,
        None => ModelParams::new(cfg.dims, cfg.train.k_env_init, cfg.train.seed),
    };
    let out_path = a.out.clone();
    let cfg_ref = &cfg;
    let mut hook = |stage: Stage, m: &ModelParams| io::save_checkpoint(&out_path, &checkpoint_for(m, cfg_ref, Some(stage)));
    let records = progressive_train(&data, &grid, &mut model, &cfg.nsp, &cfg.train, &a.stage.stages(), &mut hook)?;
    for r in &records {
        emit(out, r.to_line())?;
    }
    Ok(0)
}

fn sample_id(id: &str, k: usize) -> String {
    format!("{id}#{k}")
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = io::load_checkpoint(&a.ckpt)?;
    let cfg = resolve_config(&a.cfg, Some(&ckpt))?;
    let grid = load_grid(a.scene.as_deref())?;
    let data = load_cohorts(std::slice::from_ref(&a.data), &cfg)?;
    let model = &ckpt.model;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records = Vec::new();
    for c in &data {
        let frames = &c.windows[0].frame_ids[OBS_LEN..];
        let samples: Vec<Vec<Vec<DVec2>>> = match a.mode {
            ModeArg::Det => {
                let r = rollout_window(c, &grid, model, &cfg.nsp, &RolloutOptions::default(), &mut rng)?;
                r.agents.into_iter().map(|p| vec![p.positions]).collect()
            }
            ModeArg::Sto => eval::predict_samples(c, &grid, model, &cfg.nsp, Protocol::Standard { k: a.samples }, &mut rng)?,
            ModeArg::Ultra => eval::predict_samples(c, &grid, model, &cfg.nsp, Protocol::Ultra { k: a.samples }, &mut rng)?,
        };
        for (w, rows) in c.windows.iter().zip(samples) {
            for (k, row) in rows.into_iter().enumerate() {
                let id = if a.mode == ModeArg::Det { w.agent_id.clone() } else { sample_id(&w.agent_id, k) };
                records.extend(frames.iter().zip(row).map(|(f, p)| Record { frame_id: *f, agent_id: id.clone(), p }));
            }
        }
    }
    io::save_trajectories(&a.out, &records)?;
    emit(out, format!("windows {} records {}", data.iter().map(|c| c.windows.len()).sum::<usize>(), records.len()))?;
    Ok(0)
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = io::load_checkpoint(&a.ckpt)?;
    let cfg = resolve_config(&a.cfg, Some(&ckpt))?;
    let nsp = NspConfig { dt: 1.0 / SIMULATION_FPS, ..cfg.nsp.clone() };
    let frames = (a.seconds * SIMULATION_FPS).round() as usize;
    let grid = io::load_scene_grid(&a.scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scenario = eval::generate_scenario(&grid, a.agents, &mut rng, (a.min_speed, a.max_speed))?;
    let switches = if a.goal_only { ForceSwitches::GOAL_ONLY } else { ForceSwitches::ALL };
    let paths = eval::run_scenario(&scenario, frames, &grid, &ckpt.model, &nsp, switches, &mut rng)?;
    let records: Vec<Record> = paths
        .iter()
        .enumerate()
        .flat_map(|(i, path)| path.iter().enumerate().map(move |(f, p)| Record { frame_id: f as i64, agent_id: format!("{i:04}"), p: *p }))
        .collect();
    io::save_trajectories(&a.out, &records)?;
    emit(out, format!("agents {} frames {frames}", paths.len()))?;
    if paths.len() >= 2 {
        if let Ok(rates) = eval::interval_collision_rates(&paths, cfg.collision_radius) {
            let text: Vec<String> = rates.iter().map(|r| format!("{r:.6}")).collect();
            emit(out, format!("collision_rate {}", text.join(" ")))?;
        }
    }
    Ok(0)
}

/// Splits a track into runs of evenly spaced frames, then into chunks of
/// at most `PRED_LEN` frames.
fn prediction_chunks(track: &io::RawTrack) -> Vec<Vec<(i64, DVec2)>> {
    let step = track.records.windows(2).map(|w| w[1].0 - w[0].0).min().unwrap_or(1);
    let mut runs: Vec<Vec<(i64, DVec2)>> = Vec::new();
    for r in &track.records {
        match runs.last_mut() {
            Some(run) if r.0 - run.last().expect("non-empty").0 == step && run.len() < PRED_LEN => run.push(*r),
            _ => runs.push(vec![*r]),
        }
    }
    runs
}

/// Per-window minimum ADE/FDE and the mean collision rate of first
/// samples, for predictions against truth tracks.
pub fn score_predictions(
    pred: &[io::RawTrack],
    truth: &[io::RawTrack],
    homography: Option<&Homography>,
    collision_r: f64,
) -> Result<(f64, f64, usize, Option<f64>)> {
    let to_world = |p: DVec2| homography.map_or(Ok(p), |h| io::apply_homography(h, p, Direction::PixelToWorld));
    let truth: BTreeMap<&str, &io::RawTrack> = truth.iter().map(|t| (t.agent_id.as_str(), t)).collect();
    let mut windows: BTreeMap<(String, i64), (Vec<DVec2>, Vec<Vec<DVec2>>)> = BTreeMap::new();
    let mut scenes: BTreeMap<(i64, usize), Vec<Vec<DVec2>>> = BTreeMap::new();
    for track in pred {
        let (base, sample) = match track.agent_id.split_once('#') {
            Some((b, k)) => (b, k.parse::<usize>().unwrap_or(0)),
            None => (track.agent_id.as_str(), 0),
        };
        let t = truth.get(base).ok_or_else(|| NspError::ShapeMismatch(format!("no ground truth for agent `{base}`")))?;
        for chunk in prediction_chunks(track) {
            let mut gt = Vec::with_capacity(chunk.len());
            let mut pts = Vec::with_capacity(chunk.len());
            for (f, p) in &chunk {
                let i = t.records.binary_search_by_key(f, |r| r.0).map_err(|_| {
                    NspError::ShapeMismatch(format!("no ground truth for agent `{base}` at frame {f}"))
                })?;
                gt.push(to_world(t.records[i].1)?);
                pts.push(to_world(*p)?);
            }
            if sample == 0 {
                scenes.entry((chunk[0].0, chunk.len())).or_default().push(pts.clone());
            }
            let slot = windows.entry((base.to_string(), chunk[0].0)).or_insert_with(|| (gt, Vec::new()));
            slot.1.push(pts);
        }
    }
    if windows.is_empty() {
        return Err(NspError::EmptySampleSet);
    }
    let (mut ade, mut fde) = (0.0, 0.0);
    for (gt, samples) in windows.values() {
        let (a, f) = min_of_k(samples, gt)?;
        ade += a;
        fde += f;
    }
    let n = windows.len();
    let rates: Vec<f64> = scenes
        .values()
        .filter(|rows| rows.len() >= 2)
        .map(|rows| {
            let spec = CollisionSpec::new(collision_r, 0..rows[0].len())?;
            eval::collision_rate(rows, &spec)
        })
        .collect::<Result<_>>()?;
    let rate = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    Ok((ade / n as f64, fde / n as f64, n, rate))
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let pred = io::load_trajectories(&a.pred)?;
    let truth = io::load_trajectories(&a.truth)?;
    let h = a.homography.as_deref().map(io::load_homography).transpose()?;
    let (ade, fde, n, rate) = score_predictions(&pred, &truth, h.as_ref(), a.collision_r)?;
    emit(out, format!("ADE {ade:.6}"))?;
    emit(out, format!("FDE {fde:.6}"))?;
    emit(out, format!("windows {n}"))?;
    if let Some(r) = rate {
        emit(out, format!("collision_rate {r:.6}"))?;
    }
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = io::load_checkpoint(&a.ckpt)?;
    let cfg = resolve_config(&a.cfg, Some(&ckpt))?;
    let grid = load_grid(a.scene.as_deref())?;
    let cohort = match &a.data {
        Some(path) => load_cohorts(std::slice::from_ref(path), &cfg)?
            .into_iter()
            .next()
            .ok_or_else(|| NspError::config("data", "no complete 20-frame windows"))?,
        None => {
            let spec = SyntheticSpec { scenes: 1, agents_per_scene: 3, extent: 120.0, ..Default::default() };
            generate_cohorts(&spec, &cfg.nsp, &grid)?.remove(0)
        }
    };
    let model = &ckpt.model;
    let mut checks = training::trajectory_grad_check(&cohort, &grid, model, &cfg.nsp, a.eps, a.per_tensor)?;
    let samples = residual_samples(&cohort, &grid, model, &cfg.nsp)?;
    checks.extend(training::cvae_grad_check(&samples[..samples.len().min(8)], model, &cfg.nsp, a.eps, a.per_tensor, 0)?);
    let mut worst: f64 = 0.0;
    for c in &checks {
        worst = worst.max(c.max_rel_error);
        emit(out, format!("{} {:.3e}", model.store.name(c.id), c.max_rel_error))?;
    }
    let verdict = if worst < a.tolerance { "pass" } else { "fail" };
    emit(out, format!("max_rel_error {worst:.3e} {verdict}"))?;
    Ok(if worst < a.tolerance { 0 } else { 1 })
}
