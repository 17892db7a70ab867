//! Domain types shared by every stage of the pipeline.
//!
//! All geometry is in pixel units; time is in seconds.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use glam::DVec2;

use crate::error::{NspError, Result};

/// Frames per sample window (observed + future).
pub const WINDOW_LEN: usize = 20;
/// Observed frames at the head of each window.
pub const OBS_LEN: usize = 8;
/// Frames to predict.
pub const PRED_LEN: usize = WINDOW_LEN - OBS_LEN;

/// Position and velocity of one agent at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub p: DVec2,
    pub v: DVec2,
}

impl AgentState {
    pub fn new(p: DVec2, v: DVec2) -> Self {
        Self { p, v }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.v.is_finite()
    }
}

/// Builds states from a position sequence. The first velocity is a forward
/// difference, every later one a backward difference.
pub fn states_from_positions(positions: &[DVec2], dt: f64) -> Vec<AgentState> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            let v = match (i, n) {
                (_, 0 | 1) => DVec2::ZERO,
                (0, _) => (positions[1] - positions[0]) / dt,
                _ => (positions[i] - positions[i - 1]) / dt,
            };
            AgentState::new(positions[i], v)
        })
        .collect()
}

/// One 20-frame training/evaluation sample for a single agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub agent_id: String,
    pub frame_ids: Vec<i64>,
    pub frames: Vec<AgentState>,
    pub observed_len: usize,
    pub goal: DVec2,
}

impl TrajectoryWindow {
    /// Window from 20 positions; velocities by finite difference, goal = last position.
    pub fn from_positions(agent_id: impl Into<String>, frame_ids: Vec<i64>, positions: &[DVec2], dt: f64) -> Self {
        let frames = states_from_positions(positions, dt);
        let goal = positions.last().copied().unwrap_or_default();
        Self { agent_id: agent_id.into(), frame_ids, frames, observed_len: OBS_LEN, goal }
    }

    pub fn positions(&self) -> Vec<DVec2> {
        self.frames.iter().map(|s| s.p).collect()
    }

    pub fn observed(&self) -> &[AgentState] {
        &self.frames[..self.observed_len]
    }

    /// Ground-truth future positions (frames 8..20).
    pub fn future_positions(&self) -> Vec<DVec2> {
        self.frames[self.observed_len..].iter().map(|s| s.p).collect()
    }

    /// Index of the last observed frame (M).
    pub fn last_observed(&self) -> usize {
        self.observed_len - 1
    }

    /// Index of the final frame (T).
    pub fn horizon(&self) -> usize {
        self.frames.len() - 1
    }
}

/// Checks every window invariant.
pub fn validate_window(w: &TrajectoryWindow) -> Result<()> {
    if w.frames.len() != WINDOW_LEN {
        return Err(NspError::WrongFrameCount { expected: WINDOW_LEN, found: w.frames.len() });
    }
    if w.frame_ids.len() != WINDOW_LEN {
        return Err(NspError::WrongFrameCount { expected: WINDOW_LEN, found: w.frame_ids.len() });
    }
    if w.observed_len != OBS_LEN {
        return Err(NspError::WrongObservedLength { expected: OBS_LEN, found: w.observed_len });
    }
    for (i, s) in w.frames.iter().enumerate() {
        if !s.is_finite() {
            return Err(NspError::NonFiniteValue(format!("frame {i} of agent {}", w.agent_id)));
        }
    }
    if !w.goal.is_finite() {
        return Err(NspError::NonFiniteValue(format!("goal of agent {}", w.agent_id)));
    }
    let last = w.frames[WINDOW_LEN - 1].p;
    if w.goal != last {
        return Err(NspError::GoalMismatch { goal: w.goal.to_array(), last: last.to_array() });
    }
    let step = w.frame_ids[1] - w.frame_ids[0];
    if step <= 0 || w.frame_ids.windows(2).any(|p| p[1] - p[0] != step) {
        return Err(NspError::NonUniformFrames);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Walkable,
    Unwalkable,
    WeakObstacle,
}

impl CellClass {
    pub fn from_label(label: i64) -> Option<Self> {
        match label {
            0 => Some(CellClass::Walkable),
            1 => Some(CellClass::Unwalkable),
            2 => Some(CellClass::WeakObstacle),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        match self {
            CellClass::Walkable => 0,
            CellClass::Unwalkable => 1,
            CellClass::WeakObstacle => 2,
        }
    }
}

/// Per-pixel semantic class map. Cell `(row, col)` is centered on pixel
/// coordinate `(col, row)`: x runs along columns, y along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrid {
    height: usize,
    width: usize,
    cells: Vec<CellClass>,
}

impl SceneGrid {
    pub fn new(height: usize, width: usize, cells: Vec<CellClass>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(NspError::ShapeMismatch(format!(
                "grid {height}x{width} needs {} cells, got {}",
                height * width,
                cells.len()
            )));
        }
        Ok(Self { height, width, cells })
    }

    pub fn walkable(height: usize, width: usize) -> Self {
        Self { height, width, cells: vec![CellClass::Walkable; height * width] }
    }

    /// A 0x0 grid; no environment force anywhere.
    pub fn empty() -> Self {
        Self { height: 0, width: 0, cells: Vec::new() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[CellClass] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> CellClass {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: CellClass) {
        self.cells[row * self.width + col] = class;
    }

    /// Class of the cell containing pixel point `p`, if inside the grid.
    pub fn class_at(&self, p: DVec2) -> Option<CellClass> {
        let (x, y) = ((p.x + 0.5).floor(), (p.y + 0.5).floor());
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (col, row) = (x as usize, y as usize);
        (row < self.height && col < self.width).then(|| self.get(row, col))
    }

    pub fn cell_center(row: usize, col: usize) -> DVec2 {
        DVec2::new(col as f64, row as f64)
    }
}

/// Dataset presets carrying the per-scene hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Eth,
    Hotel,
    Univ,
    Zara1,
    Zara2,
    Sdd,
}

impl Dataset {
    pub const ALL: [Dataset; 6] =
        [Dataset::Eth, Dataset::Hotel, Dataset::Univ, Dataset::Zara1, Dataset::Zara2, Dataset::Sdd];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Eth => "eth",
            Dataset::Hotel => "hotel",
            Dataset::Univ => "univ",
            Dataset::Zara1 => "zara1",
            Dataset::Zara2 => "zara2",
            Dataset::Sdd => "sdd",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = NspError;

    fn from_str(s: &str) -> Result<Self> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NspError::config("dataset", format!("unknown dataset `{s}`")))
    }
}

/// Model and integrator hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NspConfig {
    /// τ = a_tau·sigmoid(raw) + b_tau
    pub a_tau: f64,
    pub b_tau: f64,
    /// k_nj = a_k·sigmoid(raw) + b_k
    pub a_k: f64,
    pub b_k: f64,
    /// Neighborhood sector half-angle (radians).
    pub omega: f64,
    pub r_col: f64,
    pub r_env: f64,
    pub sigma_goal: f64,
    pub sigma_latent: f64,
    pub lambda_weak: f64,
    pub lambda_kl: f64,
    pub dt: f64,
    pub cvae_scale: f64,
}

impl Default for NspConfig {
    fn default() -> Self {
        Self::preset(Dataset::Sdd)
    }
}

impl NspConfig {
    pub fn preset(dataset: Dataset) -> Self {
        let (b_tau, a_k, r_col, r_env, lambda_weak) = match dataset {
            Dataset::Eth => (0.1, 50.0, 75.0, 50.0, 0.0),
            Dataset::Hotel => (0.1, 50.0, 75.0, 50.0, 0.0),
            Dataset::Univ => (2.2, 50.0, 75.0, 50.0, 0.0),
            Dataset::Zara1 => (1.6, 50.0, 75.0, 75.0, 0.0),
            Dataset::Zara2 => (1.4, 50.0, 75.0, 75.0, 0.0),
            Dataset::Sdd => (0.4, 100.0, 100.0, 50.0, 0.2),
        };
        Self {
            a_tau: 1.0,
            b_tau,
            a_k,
            b_k: 0.0,
            omega: PI / 3.0,
            r_col,
            r_env,
            sigma_goal: 4.0,
            sigma_latent: 1.3,
            lambda_weak,
            lambda_kl: 1.0,
            dt: 0.4,
            cvae_scale: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_tau", self.a_tau),
            ("a_k", self.a_k),
            ("r_col", self.r_col),
            ("r_env", self.r_env),
            ("dt", self.dt),
            ("sigma_goal", self.sigma_goal),
            ("sigma_latent", self.sigma_latent),
            ("cvae_scale", self.cvae_scale),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(NspError::config(key, format!("must be positive, got {value}")));
            }
        }
        if !(self.omega > 0.0 && self.omega < PI) {
            return Err(NspError::config("omega", format!("must lie in (0, pi), got {}", self.omega)));
        }
        if !(0.0..=1.0).contains(&self.lambda_weak) {
            return Err(NspError::config("lambda_weak", format!("must lie in [0, 1], got {}", self.lambda_weak)));
        }
        if !(self.lambda_kl >= 0.0) {
            return Err(NspError::config("lambda_kl", "must be non-negative"));
        }
        if !(self.b_tau >= 0.0) || !(self.b_k >= 0.0) {
            return Err(NspError::config("b_tau/b_k", "offsets must be non-negative"));
        }
        Ok(())
    }

    /// Applies a `key = value` override by field name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed: f64 = value
            .trim()
            .parse()
            .map_err(|_| NspError::config(key, format!("not a number: `{value}`")))?;
        let slot = match key {
            "a_tau" => &mut self.a_tau,
            "b_tau" => &mut self.b_tau,
            "a_k" => &mut self.a_k,
            "b_k" => &mut self.b_k,
            "omega" => &mut self.omega,
            "r_col" => &mut self.r_col,
            "r_env" => &mut self.r_env,
            "sigma_goal" => &mut self.sigma_goal,
            "sigma_latent" => &mut self.sigma_latent,
            "lambda_weak" => &mut self.lambda_weak,
            "lambda_kl" => &mut self.lambda_kl,
            "dt" => &mut self.dt,
            "cvae_scale" => &mut self.cvae_scale,
            _ => return Err(NspError::config(key, "unknown key")),
        };
        *slot = parsed;
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_k", self.a_k),
            ("b_k", self.b_k),
            ("omega", self.omega),
            ("r_col", self.r_col),
            ("r_env", self.r_env),
            ("sigma_goal", self.sigma_goal),
            ("sigma_latent", self.sigma_latent),
            ("lambda_weak", self.lambda_weak),
            ("lambda_kl", self.lambda_kl),
            ("dt", self.dt),
            ("cvae_scale", self.cvae_scale),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight_window() -> TrajectoryWindow {
        let positions: Vec<DVec2> = (0..20).map(|i| DVec2::new(i as f64 * 4.0, 10.0)).collect();
        TrajectoryWindow::from_positions("a", (0..20).map(|i| i * 10).collect(), &positions, 0.4)
    }

    #[test]
    fn valid_window_passes() {
        let w = straight_window();
        validate_window(&w).unwrap();
        assert_eq!(w.frames[0].v, DVec2::new(10.0, 0.0));
        assert_eq!(w.frames[5].v, DVec2::new(10.0, 0.0));
    }

    #[test]
    fn short_window_rejected() {
        let mut w = straight_window();
        w.frames.pop();
        assert!(matches!(validate_window(&w), Err(NspError::WrongFrameCount { found: 19, .. })));
    }

    #[test]
    fn nan_rejected() {
        let mut w = straight_window();
        w.frames[3].p.x = f64::NAN;
        assert!(matches!(validate_window(&w), Err(NspError::NonFiniteValue(_))));
    }

    #[test]
    fn goal_mismatch_rejected() {
        let mut w = straight_window();
        w.goal.x += 1.0;
        assert!(matches!(validate_window(&w), Err(NspError::GoalMismatch { .. })));
    }

    #[test]
    fn backward_difference_velocity() {
        let ps = [DVec2::ZERO, DVec2::new(1.0, 0.0), DVec2::new(3.0, 0.0)];
        let s = states_from_positions(&ps, 0.5);
        assert_eq!(s[0].v, DVec2::new(2.0, 0.0));
        assert_eq!(s[1].v, DVec2::new(2.0, 0.0));
        assert_eq!(s[2].v, DVec2::new(4.0, 0.0));
    }

    #[test]
    fn presets_validate() {
        for d in Dataset::ALL {
            NspConfig::preset(d).validate().unwrap();
        }
        let univ = NspConfig::preset(Dataset::Univ);
        assert_eq!((univ.a_tau, univ.b_tau), (1.0, 2.2));
        let sdd = NspConfig::preset(Dataset::Sdd);
        assert_eq!((sdd.a_k, sdd.r_col, sdd.lambda_weak), (100.0, 100.0, 0.2));
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = NspConfig::default();
        c.omega = 4.0;
        assert!(c.validate().is_err());
        let mut c = NspConfig::default();
        c.set("lambda_weak", "1.5").unwrap();
        assert!(c.validate().is_err());
        assert!(c.set("nope", "1").is_err());
    }

    proptest! {
        #[test]
        fn corrupted_window_always_rejected(kind in 0usize..5, idx in 0usize..20, mag in 0.001f64..100.0) {
            let mut w = straight_window();
            match kind {
                0 => { w.frames.truncate(idx); }
                1 => { w.frames[idx].v.y = f64::INFINITY; }
                2 => { w.frames[idx].p.x = f64::NAN; }
                3 => { w.goal.y += mag; }
                _ => { w.frame_ids[idx.max(1)] += 1; w.frame_ids[0] -= 1; }
            }
            prop_assert!(validate_window(&w).is_err());
        }
    }
}
