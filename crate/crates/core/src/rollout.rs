//! Time integration: the semi-implicit step and multi-agent rollouts.

use glam::DVec2;
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{agent_forces, net_acceleration, Body, Diagnostics, ForceSwitches, GoalMemory, StepContext};
use crate::error::{NspError, Result};
use crate::forces::ForceBreakdown;
use crate::model::ModelParams;
use crate::nets::{Recurrent, StateVars};
use crate::neural::{Graph, Var};
use crate::types::{validate_window, AgentState, NspConfig, SceneGrid, TrajectoryWindow, OBS_LEN};

/// Candidates drawn per agent-step in ultra mode.
pub const ULTRA_CANDIDATES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// α = 0.
    Deterministic,
    /// One CVAE draw per agent-step.
    Stochastic,
    /// `candidates` draws per agent-step; the one landing closest to the
    /// ground truth is kept.
    Ultra { candidates: usize },
}

impl RolloutMode {
    pub fn ultra() -> Self {
        Self::Ultra { candidates: ULTRA_CANDIDATES }
    }
}

/// A scene participant that is not predicted but still repels: its states
/// are read from data. Indexed by frame offset from the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    pub agent_id: String,
    pub states: Vec<Option<AgentState>>,
}

impl ObstacleTrack {
    fn at(&self, t: usize) -> Option<AgentState> {
        self.states.get(t).copied().flatten()
    }
}

/// Windows sharing the same frames, predicted jointly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub windows: Vec<TrajectoryWindow>,
    pub obstacles: Vec<ObstacleTrack>,
}

impl Cohort {
    pub fn new(windows: Vec<TrajectoryWindow>) -> Self {
        Self { windows, obstacles: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for w in &self.windows {
            validate_window(w)?;
        }
        if let Some(first) = self.windows.first() {
            if self.windows.iter().any(|w| w.frame_ids != first.frame_ids) {
                return Err(NspError::ShapeMismatch("cohort windows cover different frames".into()));
            }
        }
        Ok(())
    }

    /// Ground-truth future positions, one row per window.
    pub fn futures(&self) -> Vec<Vec<DVec2>> {
        self.windows.iter().map(TrajectoryWindow::future_positions).collect()
    }

    fn tracks(&self, goals: Option<&[DVec2]>) -> Result<Vec<Track>> {
        if let Some(goals) = goals {
            if goals.len() != self.windows.len() {
                return Err(NspError::ShapeMismatch(format!("{} goals for {} agents", goals.len(), self.windows.len())));
            }
        }
        Ok(self
            .windows
            .iter()
            .enumerate()
            .map(|(i, w)| Track {
                agent_id: w.agent_id.clone(),
                observed: w.observed().to_vec(),
                goal: goals.map_or(w.goal, |g| g[i]),
                future_frames: w.frame_ids[w.observed_len..].to_vec(),
            })
            .collect())
    }
}

/// An agent to be advanced: its observed states up to the current frame,
/// its goal, and the frame ids to assign to predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub agent_id: String,
    pub observed: Vec<AgentState>,
    pub goal: DVec2,
    pub future_frames: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    pub agent_id: String,
    pub frame_ids: Vec<i64>,
    pub positions: Vec<DVec2>,
    /// Forces that produced each predicted frame.
    pub forces: Vec<ForceBreakdown>,
    /// Observed frames fed to the goal network before the first prediction.
    pub observed_consumed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// In the order the agents were given.
    pub agents: Vec<AgentPrediction>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions<'a> {
    pub mode: RolloutMode,
    pub switches: ForceSwitches,
    /// Replaces each window's own goal, in agent order.
    pub goals: Option<&'a [DVec2]>,
    /// Ground-truth future positions in agent order; required by ultra mode.
    pub oracle: Option<&'a [Vec<DVec2>]>,
}

impl Default for RolloutOptions<'_> {
    fn default() -> Self {
        Self { mode: RolloutMode::Deterministic, switches: ForceSwitches::ALL, goals: None, oracle: None }
    }
}

/// `v' = v + dt·a`, then `p' = p + dt·v' + α`.
pub fn semi_implicit_step(state: AgentState, accel: DVec2, alpha: DVec2, dt: f64) -> Result<AgentState> {
    if !(state.is_finite() && accel.is_finite() && alpha.is_finite() && dt.is_finite() && dt > 0.0) {
        return Err(NspError::NonFiniteInput);
    }
    let v = state.v + accel * dt;
    let p = state.p + v * dt + alpha;
    Ok(AgentState { p, v })
}

/// Predicts the unobserved frames of every window in the cohort.
pub fn rollout_window(
    cohort: &Cohort,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    opts: &RolloutOptions<'_>,
    rng: &mut impl Rng,
) -> Result<RolloutResult> {
    cohort.validate()?;
    let tracks = cohort.tracks(opts.goals)?;
    simulate(&tracks, &cohort.obstacles, grid, model, cfg, opts, rng)
}

fn check_tracks(tracks: &[Track]) -> Result<(usize, usize)> {
    let first = tracks.first().ok_or_else(|| NspError::ShapeMismatch("no agents to roll out".into()))?;
    let (observed, steps) = (first.observed.len(), first.future_frames.len());
    if observed == 0 || steps == 0 {
        return Err(NspError::ShapeMismatch("tracks need at least one observed and one future frame".into()));
    }
    if tracks.iter().any(|t| t.observed.len() != observed || t.future_frames.len() != steps) {
        return Err(NspError::ShapeMismatch("tracks disagree on observed or future length".into()));
    }
    for t in tracks {
        if !t.observed.iter().all(AgentState::is_finite) || !t.goal.is_finite() {
            return Err(NspError::NonFiniteInput);
        }
    }
    Ok((observed - 1, observed - 1 + steps))
}

/// Agents in ascending id order; ties keep the given order.
fn canonical_order<T>(items: &[T], id: impl Fn(&T) -> &str) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| id(&items[a]).cmp(id(&items[b])));
    order
}

/// CVAE conditioning: the last `OBS_LEN` positions, front-padded with the
/// earliest one when fewer exist.
fn history_tail(positions: &[DVec2]) -> Vec<DVec2> {
    let mut h: Vec<DVec2> = positions.iter().rev().take(OBS_LEN).rev().copied().collect();
    while h.len() < OBS_LEN {
        h.insert(0, h[0]);
    }
    h
}

/// Generic rollout. Forces for a step are computed from every agent's state
/// at that step, then all agents move together.
pub fn simulate(
    tracks: &[Track],
    obstacles: &[ObstacleTrack],
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    opts: &RolloutOptions<'_>,
    rng: &mut impl Rng,
) -> Result<RolloutResult> {
    let (m, horizon) = check_tracks(tracks)?;
    let oracle = match (opts.mode, opts.oracle) {
        (RolloutMode::Ultra { .. }, None) => return Err(NspError::MissingOracle),
        (_, Some(o)) if o.len() != tracks.len() || o.iter().any(|r| r.len() != horizon - m) => {
            return Err(NspError::ShapeMismatch("oracle rows must match agents and predicted frames".into()))
        }
        (_, o) => o,
    };

    let order = canonical_order(tracks, |t| t.agent_id.as_str());
    let obstacle_order = canonical_order(obstacles, |o| o.agent_id.as_str());
    let agents: Vec<&Track> = order.iter().map(|&i| &tracks[i]).collect();
    let n = agents.len();

    let mut memories: Vec<GoalMemory> = Vec::with_capacity(n);
    for a in &agents {
        let mut mem = GoalMemory::new(model);
        for s in &a.observed[..m] {
            mem.observe(model, *s)?;
        }
        memories.push(mem);
    }
    let mut states: Vec<AgentState> = agents.iter().map(|a| a.observed[m]).collect();
    let mut histories: Vec<Vec<DVec2>> = agents.iter().map(|a| a.observed.iter().map(|s| s.p).collect()).collect();
    let mut positions = vec![Vec::with_capacity(horizon - m); n];
    let mut logs = vec![Vec::with_capacity(horizon - m); n];
    let mut diagnostics = Diagnostics::default();

    for t in m..horizon {
        let ctx = StepContext { model, cfg, grid, switches: opts.switches, t, horizon };
        let present: Vec<AgentState> = obstacle_order.iter().filter_map(|&o| obstacles[o].at(t)).collect();
        let snapshot = &states;
        let forces: Vec<(ForceBreakdown, Diagnostics)> = memories
            .par_iter_mut()
            .enumerate()
            .map(|(i, mem)| {
                let others: Vec<AgentState> = snapshot
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| *s)
                    .chain(present.iter().copied())
                    .collect();
                let mut diag = Diagnostics::default();
                let f = net_acceleration(&ctx, snapshot[i], agents[i].goal, &others, mem, &mut diag)?;
                Ok((f, diag))
            })
            .collect::<Result<_>>()?;

        let step = t - m;
        for (i, (f, diag)) in forces.into_iter().enumerate() {
            diagnostics.merge(diag);
            let p_bar = semi_implicit_step(states[i], f.total, DVec2::ZERO, cfg.dt)?.p;
            let alpha = match opts.mode {
                RolloutMode::Deterministic => DVec2::ZERO,
                RolloutMode::Stochastic => {
                    model.nets.cvae.sample(&model.store, &history_tail(&histories[i]), cfg.sigma_latent, cfg, rng)?
                }
                RolloutMode::Ultra { candidates } => {
                    let target = oracle.expect("checked above")[order[i]][step];
                    let hist = history_tail(&histories[i]);
                    let mut best = (f64::INFINITY, DVec2::ZERO);
                    for _ in 0..candidates.max(1) {
                        let a = model.nets.cvae.sample(&model.store, &hist, cfg.sigma_latent, cfg, rng)?;
                        let err = (p_bar + a - target).length();
                        if err < best.0 {
                            best = (err, a);
                        }
                    }
                    best.1
                }
            };
            states[i] = semi_implicit_step(states[i], f.total, alpha, cfg.dt)?;
            histories[i].push(states[i].p);
            positions[i].push(states[i].p);
            logs[i].push(f);
        }
    }

    let mut out: Vec<Option<AgentPrediction>> = vec![None; n];
    for (slot, ((a, pos), log)) in order.iter().zip(agents.iter().zip(positions).zip(logs)) {
        out[*slot] = Some(AgentPrediction {
            agent_id: a.agent_id.clone(),
            frame_ids: a.future_frames.clone(),
            positions: pos,
            forces: log,
            observed_consumed: m + 1,
        });
    }
    Ok(RolloutResult { agents: out.into_iter().map(|a| a.expect("every slot filled")).collect(), diagnostics })
}

/// Deterministic rollout kept on one graph so a loss on the predicted
/// positions can be differentiated through every step.
#[derive(Debug, Clone)]
pub struct GraphRollout {
    /// Predicted position handles, one row per window in cohort order.
    pub positions: Vec<Vec<Var>>,
    pub diagnostics: Diagnostics,
}

pub fn rollout_on_graph(
    g: &mut Graph,
    cohort: &Cohort,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    switches: ForceSwitches,
) -> Result<GraphRollout> {
    cohort.validate()?;
    let tracks = cohort.tracks(None)?;
    let (m, horizon) = check_tracks(&tracks)?;
    let order = canonical_order(&tracks, |t| t.agent_id.as_str());
    let obstacle_order = canonical_order(&cohort.obstacles, |o| o.agent_id.as_str());
    let agents: Vec<&Track> = order.iter().map(|&i| &tracks[i]).collect();
    let goal_net = &model.nets.goal;

    let mut carries: Vec<Option<Recurrent>> = Vec::with_capacity(agents.len());
    for a in &agents {
        let mut carry = Some(goal_net.reset(g));
        for s in &a.observed[..m] {
            let b = Body::constant(g, *s);
            goal_net.observe(g, &model.store, &mut carry, b.vars, &model.nets.dims)?;
        }
        carries.push(carry);
    }
    let mut bodies: Vec<Body> = agents.iter().map(|a| Body::constant(g, a.observed[m])).collect();
    let mut positions = vec![Vec::with_capacity(horizon - m); agents.len()];
    let mut diagnostics = Diagnostics::default();

    for t in m..horizon {
        let ctx = StepContext { model, cfg, grid, switches, t, horizon };
        let present: Vec<Body> = obstacle_order
            .iter()
            .filter_map(|&o| cohort.obstacles[o].at(t))
            .map(|s| Body::constant(g, s))
            .collect();
        let mut accels = Vec::with_capacity(agents.len());
        for (i, a) in agents.iter().enumerate() {
            let others: Vec<Body> = bodies
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| *b)
                .chain(present.iter().copied())
                .collect();
            let f = agent_forces(g, &ctx, bodies[i], a.goal, &mut carries[i], &others, &mut diagnostics)?;
            accels.push(f.total);
        }
        for (i, accel) in accels.into_iter().enumerate() {
            let dv = g.scale(accel, cfg.dt);
            let v = g.add(bodies[i].vars.v, dv);
            let dp = g.scale(v, cfg.dt);
            let p = g.add(bodies[i].vars.p, dp);
            let state = AgentState { p: g.vec2_value(p), v: g.vec2_value(v) };
            if !state.is_finite() {
                return Err(NspError::NonFiniteInput);
            }
            bodies[i] = Body { vars: StateVars { p, v }, state };
            positions[i].push(p);
        }
    }

    let mut out = vec![Vec::new(); agents.len()];
    for (slot, row) in order.into_iter().zip(positions) {
        out[slot] = row;
    }
    Ok(GraphRollout { positions: out, diagnostics })
}
