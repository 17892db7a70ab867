//! Displacement errors, collision rate, sampling protocols and the
//! density-scaling scenario.

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::ForceSwitches;
use crate::error::{NspError, Result};
use crate::model::ModelParams;
use crate::rollout::{rollout_window, simulate, Cohort, RolloutMode, RolloutOptions, RolloutResult, Track};
use crate::types::{AgentState, CellClass, NspConfig, SceneGrid};

/// `(ade, fde)` of one predicted trajectory.
pub fn displacement_errors(pred: &[DVec2], truth: &[DVec2]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(NspError::ShapeMismatch(format!("{} predicted points, {} true", pred.len(), truth.len())));
    }
    let d: Vec<f64> = pred.iter().zip(truth).map(|(p, q)| (*p - *q).length()).collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1]))
}

/// Independent minima of ADE and FDE over samples.
pub fn min_of_k(samples: &[Vec<DVec2>], truth: &[DVec2]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(NspError::EmptySampleSet);
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for s in samples {
        let (a, f) = displacement_errors(s, truth)?;
        best = (best.0.min(a), best.1.min(f));
    }
    Ok(best)
}

/// Agent disc radius and the frames over which contacts count.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSpec {
    pub radius: f64,
    pub frames: std::ops::Range<usize>,
}

impl CollisionSpec {
    /// Radius used for pixel scenes.
    pub const PIXEL_RADIUS: f64 = 15.0;
    /// Radius used for metric scenes.
    pub const METRIC_RADIUS: f64 = 0.2;

    pub fn new(radius: f64, frames: std::ops::Range<usize>) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(NspError::Config { key: "collision_r".into(), reason: "must be positive".into() });
        }
        Ok(Self { radius, frames })
    }
}

/// Fraction of agent pairs that come closer than `2r` at any sampled frame.
/// Each row is one agent; frames are clipped to the spec's range.
pub fn collision_rate(trajectories: &[Vec<DVec2>], spec: &CollisionSpec) -> Result<f64> {
    let n = trajectories.len();
    if n < 2 {
        return Err(NspError::TooFewAgents(n));
    }
    let len = trajectories[0].len();
    if trajectories.iter().any(|t| t.len() != len) {
        return Err(NspError::ShapeMismatch("agents cover different frames".into()));
    }
    let frames = spec.frames.start.min(len)..spec.frames.end.min(len);
    let threshold = 2.0 * spec.radius;
    let mut hits = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let close = frames.clone().any(|t| (trajectories[i][t] - trajectories[j][t]).length() < threshold);
            hits += usize::from(close);
        }
    }
    Ok(hits as f64 / (n * (n - 1) / 2) as f64)
}

/// `k` goals drawn from an isotropic Gaussian around `true_goal`, rounded to
/// pixel centers.
pub fn standard_sample_goals(true_goal: DVec2, sigma_goal: f64, k: usize, rng: &mut impl Rng) -> Vec<DVec2> {
    if !(sigma_goal > 0.0) {
        return vec![true_goal.round(); k];
    }
    let normal = Normal::new(0.0, sigma_goal).expect("positive std");
    (0..k).map(|_| (true_goal + DVec2::new(normal.sample(rng), normal.sample(rng))).round()).collect()
}

/// How predicted samples are produced for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// One sampled goal, α = 0.
    Deterministic,
    /// `k` sampled goals, one stochastic rollout each.
    Standard { k: usize },
    /// `k` sampled goals, per-step best-of-20 residuals against the truth.
    Ultra { k: usize },
}

/// Prediction samples for every window of a cohort: `out[agent][sample]`.
pub fn predict_samples(
    cohort: &Cohort,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    protocol: Protocol,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Vec<DVec2>>>> {
    let (k, mode) = match protocol {
        Protocol::Deterministic => (1, RolloutMode::Deterministic),
        Protocol::Standard { k } => (k, RolloutMode::Stochastic),
        Protocol::Ultra { k } => (k, RolloutMode::ultra()),
    };
    if k == 0 {
        return Err(NspError::EmptySampleSet);
    }
    let truth = cohort.futures();
    let goal_sets: Vec<Vec<DVec2>> =
        cohort.windows.iter().map(|w| standard_sample_goals(w.goal, cfg.sigma_goal, k, rng)).collect();
    let mut out = vec![Vec::with_capacity(k); cohort.windows.len()];
    for s in 0..k {
        let goals: Vec<DVec2> = goal_sets.iter().map(|g| g[s]).collect();
        let opts = RolloutOptions { mode, switches: ForceSwitches::ALL, goals: Some(&goals), oracle: Some(&truth) };
        let r = rollout_window(cohort, grid, model, cfg, &opts, rng)?;
        for (row, a) in out.iter_mut().zip(r.agents) {
            row.push(a.positions);
        }
    }
    Ok(out)
}

/// Mean of per-window minimum ADE and FDE under a protocol.
pub fn protocol_errors(
    data: &[Cohort],
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    protocol: Protocol,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ade, mut fde, mut n) = (0.0, 0.0, 0usize);
    for c in data {
        let samples = predict_samples(c, grid, model, cfg, protocol, &mut rng)?;
        for (s, truth) in samples.iter().zip(c.futures()) {
            let (a, f) = min_of_k(s, &truth)?;
            ade += a;
            fde += f;
            n += 1;
        }
    }
    if n == 0 {
        return Err(NspError::EmptySampleSet);
    }
    Ok((ade / n as f64, fde / n as f64))
}

/// Initial states and goals of a generated crowd.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub starts: Vec<AgentState>,
    pub goals: Vec<DVec2>,
}

/// Which side of the scene a boundary-band point belongs to.
fn side_of(p: DVec2, h: f64, w: f64) -> usize {
    let d = [p.y, w - 1.0 - p.x, h - 1.0 - p.y, p.x];
    (0..4).min_by(|a, b| d[*a].total_cmp(&d[*b])).expect("four sides")
}

/// Random crowd on `grid`: distinct walkable starts inside the boundary
/// band (10% of the shorter side), goals in the band on a different side,
/// initial speeds uniform in `speed_range` aimed at the goal.
pub fn generate_scenario(grid: &SceneGrid, n_agents: usize, rng: &mut impl Rng, speed_range: (f64, f64)) -> Result<Scenario> {
    if n_agents == 0 {
        return Err(NspError::InfeasibleScene("need at least one agent".into()));
    }
    if !(speed_range.0 > 0.0 && speed_range.1 >= speed_range.0) {
        return Err(NspError::Config { key: "speed_range".into(), reason: "need 0 < min <= max".into() });
    }
    let (h, w) = (grid.height(), grid.width());
    let band = ((h.min(w) as f64) * 0.1).floor().max(1.0) as usize;
    let mut cells = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let in_band = row < band || col < band || row + band >= h || col + band >= w;
            if in_band && grid.get(row, col) == CellClass::Walkable {
                cells.push(SceneGrid::cell_center(row, col));
            }
        }
    }
    let sides: Vec<usize> = cells.iter().map(|c| side_of(*c, h as f64, w as f64)).collect();
    if cells.len() < n_agents + 1 || sides.iter().all(|s| *s == sides[0]) {
        return Err(NspError::InfeasibleScene(format!("{} walkable boundary cells for {n_agents} agents", cells.len())));
    }
    let mut used = std::collections::HashSet::new();
    let mut starts = Vec::with_capacity(n_agents);
    let mut goals = Vec::with_capacity(n_agents);
    while starts.len() < n_agents {
        let i = rng.random_range(0..cells.len());
        if !used.insert(i) {
            continue;
        }
        let goal = loop {
            let j = rng.random_range(0..cells.len());
            if sides[j] != sides[i] {
                break cells[j];
            }
        };
        let speed = rng.random_range(speed_range.0..=speed_range.1);
        let dir = (goal - cells[i]).normalize();
        starts.push(AgentState::new(cells[i], dir * speed));
        goals.push(goal);
    }
    Ok(Scenario { starts, goals })
}

/// Runs a scenario for `frames` frames (the first is the initial state).
pub fn run_scenario(
    scenario: &Scenario,
    frames: usize,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    switches: ForceSwitches,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<DVec2>>> {
    if frames < 2 {
        return Err(NspError::ShapeMismatch("a scenario needs at least two frames".into()));
    }
    let tracks: Vec<Track> = scenario
        .starts
        .iter()
        .zip(&scenario.goals)
        .enumerate()
        .map(|(i, (s, g))| Track {
            agent_id: format!("{i:04}"),
            observed: vec![*s],
            goal: *g,
            future_frames: (1..frames as i64).collect(),
        })
        .collect();
    let opts = RolloutOptions { mode: RolloutMode::Deterministic, switches, goals: None, oracle: None };
    let r: RolloutResult = simulate(&tracks, &[], grid, model, cfg, &opts, rng)?;
    Ok(r.agents.into_iter().zip(&scenario.starts).map(|(a, s)| std::iter::once(s.p).chain(a.positions).collect()).collect())
}

/// Collision rates of a 10-FPS run subsampled to 2.5 FPS, over the 0–8 s,
/// 4–12 s and 8–16 s intervals, each scored on its last 12 frames.
pub fn interval_collision_rates(trajectories: &[Vec<DVec2>], radius: f64) -> Result<Vec<f64>> {
    let sub: Vec<Vec<DVec2>> = trajectories.iter().map(|t| t.iter().step_by(4).copied().collect()).collect();
    let mut out = Vec::new();
    for start in [0usize, 10, 20] {
        let spec = CollisionSpec::new(radius, start + 8..start + 20)?;
        if sub.first().map_or(0, Vec::len) < start + 20 {
            return Err(NspError::ShapeMismatch("run too short for the scoring intervals".into()));
        }
        out.push(collision_rate(&sub, &spec)?);
    }
    Ok(out)
}
