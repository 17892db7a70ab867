//! Closed-form goal, inter-agent and environment forces.
//!
//! These are the plain-value reference formulas. The differentiable rollout
//! records the same expressions on a graph (see [`crate::dynamics`]).

use glam::DVec2;

use crate::error::{NspError, Result};

/// Per-agent acceleration split by source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceBreakdown {
    pub f_goal: DVec2,
    pub f_col: DVec2,
    pub f_env: DVec2,
    pub total: DVec2,
}

impl ForceBreakdown {
    pub fn new(f_goal: DVec2, f_col: DVec2, f_env: DVec2) -> Self {
        Self { f_goal, f_col, f_env, total: f_goal + f_col + f_env }
    }
}

/// Velocity that reaches `goal` exactly at frame `horizon`.
pub fn desired_velocity(p: DVec2, goal: DVec2, t: usize, horizon: usize, dt: f64) -> Result<DVec2> {
    if t >= horizon {
        return Err(NspError::TimeExhausted { t, horizon });
    }
    Ok((goal - p) / ((horizon - t) as f64 * dt))
}

pub fn goal_force(tau: f64, v_des: DVec2, v: DVec2) -> Result<DVec2> {
    if !(tau > 0.0) {
        return Err(NspError::NonPositiveTau(tau));
    }
    Ok((v_des - v) / tau)
}

/// Potential `U(r) = r_col · k · exp(-|r| / r_col)`.
pub fn repulsive_potential(k: f64, r: DVec2, r_col: f64) -> f64 {
    r_col * k * (-r.length() / r_col).exp()
}

/// `-∇U` at offset `r = p_n - p_j`; points away from the neighbor.
pub fn collision_force(k: f64, r: DVec2, r_col: f64) -> Result<DVec2> {
    let d = r.length();
    if d == 0.0 {
        return Err(NspError::CoincidentAgents);
    }
    Ok(r * (k * (-d / r_col).exp() / d))
}

/// Inverse-distance push away from the hard and weak obstacle centroids.
pub fn env_force(k_env: f64, p: DVec2, p_obs: Option<DVec2>, p_wobs: Option<DVec2>, lambda_weak: f64) -> Result<DVec2> {
    let push = |c: DVec2, k: f64| -> Result<DVec2> {
        let d = p - c;
        let n = d.length();
        if n == 0.0 {
            return Err(NspError::CoincidentObstacle);
        }
        Ok(d * (k / (n * n)))
    };
    let mut f = DVec2::ZERO;
    if let Some(c) = p_obs {
        f += push(c, k_env)?;
    }
    if let Some(c) = p_wobs {
        f += push(c, lambda_weak * k_env)?;
    }
    Ok(f)
}
