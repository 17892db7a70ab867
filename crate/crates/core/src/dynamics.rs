//! Composition of the three forces for one agent at one step, recorded on a
//! graph so that the learned coefficients receive gradients.

use glam::DVec2;

use crate::error::{NspError, Result};
use crate::forces::ForceBreakdown;
use crate::geometry::{neighborhood, obstacle_centroids, view_field};
use crate::model::ModelParams;
use crate::nets::{Recurrent, StateVars};
use crate::neural::{Graph, Var};
use crate::types::{AgentState, NspConfig, SceneGrid};

/// Which repulsive terms take part. The goal force is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForceSwitches {
    pub collision: bool,
    pub environment: bool,
}

impl ForceSwitches {
    pub const ALL: Self = Self { collision: true, environment: true };
    pub const GOAL_ONLY: Self = Self { collision: false, environment: false };
}

impl Default for ForceSwitches {
    fn default() -> Self {
        Self::ALL
    }
}

/// Counters collected while composing forces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Coincident agent/agent or agent/centroid pairs replaced by zero force.
    pub degenerate_forces: usize,
}

impl Diagnostics {
    pub fn merge(&mut self, other: Diagnostics) {
        self.degenerate_forces += other.degenerate_forces;
    }
}

/// An agent as seen by the force stage: graph handles plus plain values for
/// the non-differentiable gating.
#[derive(Debug, Clone, Copy)]
pub struct Body {
    pub vars: StateVars,
    pub state: AgentState,
}

impl Body {
    /// Leaf constants carrying `state`.
    pub fn constant(g: &mut Graph, state: AgentState) -> Self {
        Self { vars: StateVars { p: g.vec2(state.p), v: g.vec2(state.v) }, state }
    }
}

/// Graph handles of one agent's forces.
#[derive(Debug, Clone, Copy)]
pub struct ForceVars {
    pub tau: Var,
    pub goal: Var,
    pub col: Var,
    pub env: Var,
    pub total: Var,
}

impl ForceVars {
    pub fn breakdown(&self, g: &Graph) -> ForceBreakdown {
        let (goal, col, env) = (g.vec2_value(self.goal), g.vec2_value(self.col), g.vec2_value(self.env));
        ForceBreakdown { f_goal: goal, f_col: col, f_env: env, total: g.vec2_value(self.total) }
    }
}

/// Everything fixed during one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub model: &'a ModelParams,
    pub cfg: &'a NspConfig,
    pub grid: &'a SceneGrid,
    pub switches: ForceSwitches,
    pub t: usize,
    pub horizon: usize,
}

/// Records `F_goal + F_col + F_env` for `me`. `others` may include agents
/// outside the neighborhood; gating happens here. Advances the goal
/// network's carry by one state.
pub fn agent_forces(
    g: &mut Graph,
    ctx: &StepContext<'_>,
    me: Body,
    goal: DVec2,
    carry: &mut Option<Recurrent>,
    others: &[Body],
    diag: &mut Diagnostics,
) -> Result<ForceVars> {
    if ctx.t >= ctx.horizon {
        return Err(NspError::TimeExhausted { t: ctx.t, horizon: ctx.horizon });
    }
    let nets = &ctx.model.nets;
    let store = &ctx.model.store;
    let cfg = ctx.cfg;

    let goal_var = g.vec2(goal);
    let tau = nets.goal.tau(g, store, carry, me.vars, goal_var, cfg, &nets.dims)?;
    let tau_value = g.scalar_value(tau);
    if !(tau_value > 0.0) {
        return Err(NspError::NonPositiveTau(tau_value));
    }
    let to_goal = g.sub(goal_var, me.vars.p);
    let remaining = g.scalar((ctx.horizon - ctx.t) as f64 * cfg.dt);
    let v_des = g.div(to_goal, remaining);
    let gap = g.sub(v_des, me.vars.v);
    let f_goal = g.div(gap, tau);

    let mut f_col = g.vec2(DVec2::ZERO);
    if ctx.switches.collision {
        let states: Vec<AgentState> = others.iter().map(|b| b.state).collect();
        for j in neighborhood(&me.state, &states, cfg.omega, cfg.r_col, None) {
            let other = others[j];
            if me.state.p == other.state.p {
                diag.degenerate_forces += 1;
                continue;
            }
            let k = nets.collision.k(g, store, me.vars, other.vars, cfg, &nets.dims)?;
            let r = g.sub(me.vars.p, other.vars.p);
            let d = g.norm(r);
            let decay = g.scale(d, -1.0 / cfg.r_col);
            let decay = g.exp(decay);
            let coef = g.mul(k, decay);
            let coef = g.div(coef, d);
            let f = g.mul(r, coef);
            f_col = g.add(f_col, f);
        }
    }

    let mut f_env = g.vec2(DVec2::ZERO);
    if ctx.switches.environment {
        if let Ok(field) = view_field(&me.state, cfg.r_env) {
            let (hard, weak) = obstacle_centroids(ctx.grid, &field);
            let k_env = g.param(store, nets.k_env);
            for (centroid, weight) in [(hard, 1.0), (weak, cfg.lambda_weak)] {
                let Some(c) = centroid else { continue };
                if weight == 0.0 {
                    continue;
                }
                if me.state.p == c {
                    diag.degenerate_forces += 1;
                    continue;
                }
                let cv = g.vec2(c);
                let d = g.sub(me.vars.p, cv);
                let dd = g.dot(d, d);
                let k = g.scale(k_env, weight);
                let coef = g.div(k, dd);
                let f = g.mul(d, coef);
                f_env = g.add(f_env, f);
            }
        }
    }

    let partial = g.add(f_goal, f_col);
    let total = g.add(partial, f_env);
    Ok(ForceVars { tau, goal: f_goal, col: f_col, env: f_env, total })
}

/// Plain-value LSTM carry of the goal network for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMemory {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl GoalMemory {
    pub fn new(model: &ModelParams) -> Self {
        let n = model.nets.goal.lstm.hidden;
        Self { h: vec![0.0; n], c: vec![0.0; n] }
    }

    fn restore(&self, g: &mut Graph, model: &ModelParams) -> Option<Recurrent> {
        Some(model.nets.goal.restore(g, &self.h, &self.c))
    }

    fn save(&mut self, g: &Graph, carry: Option<Recurrent>) {
        if let Some(r) = carry {
            self.h = g.value(r.h).to_vec();
            self.c = g.value(r.c).to_vec();
        }
    }

    /// Feeds one observed state to the goal network without predicting.
    pub fn observe(&mut self, model: &ModelParams, state: AgentState) -> Result<()> {
        let mut g = Graph::new();
        let mut carry = self.restore(&mut g, model);
        let me = Body::constant(&mut g, state);
        model.nets.goal.observe(&mut g, &model.store, &mut carry, me.vars, &model.nets.dims)?;
        self.save(&g, carry);
        Ok(())
    }
}

/// Value-level force composition for one agent: τ from the goal network,
/// per-neighbor k from the collision network summed over the sector, and the
/// view-field environment push. Advances `memory`.
pub fn net_acceleration(
    ctx: &StepContext<'_>,
    state: AgentState,
    goal: DVec2,
    neighbors: &[AgentState],
    memory: &mut GoalMemory,
    diag: &mut Diagnostics,
) -> Result<ForceBreakdown> {
    let mut g = Graph::new();
    let mut carry = memory.restore(&mut g, ctx.model);
    let me = Body::constant(&mut g, state);
    let others: Vec<Body> = neighbors.iter().map(|s| Body::constant(&mut g, *s)).collect();
    let forces = agent_forces(&mut g, ctx, me, goal, &mut carry, &others, diag)?;
    memory.save(&g, carry);
    Ok(forces.breakdown(&g))
}
