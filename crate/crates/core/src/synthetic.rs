//! Trajectories from a plain social-force model with constant coefficients.
//! Used as ground truth where the generating τ and k are known.

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NspError, Result};
use crate::forces::{collision_force, desired_velocity, env_force, goal_force};
use crate::geometry::{neighborhood, obstacle_centroids, view_field};
use crate::rollout::{semi_implicit_step, Cohort};
use crate::io::Record;
use crate::types::{AgentState, CellClass, NspConfig, SceneGrid, TrajectoryWindow, OBS_LEN, WINDOW_LEN};

/// Constant coefficients of the reference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceForces {
    pub tau: f64,
    pub k: f64,
    pub k_env: f64,
}

impl Default for ReferenceForces {
    fn default() -> Self {
        Self { tau: 0.5, k: 25.0, k_env: 65.0 }
    }
}

/// Accelerations of all agents at step `t`, computed from their states at
/// `t` only.
pub fn reference_accelerations(
    states: &[AgentState],
    goals: &[DVec2],
    t: usize,
    horizon: usize,
    forces: &ReferenceForces,
    cfg: &NspConfig,
    grid: &SceneGrid,
) -> Result<Vec<DVec2>> {
    let mut out = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let v_des = desired_velocity(s.p, goals[i], t, horizon, cfg.dt)?;
        let mut a = goal_force(forces.tau, v_des, s.v)?;
        for j in neighborhood(s, states, cfg.omega, cfg.r_col, Some(i)) {
            if let Ok(f) = collision_force(forces.k, s.p - states[j].p, cfg.r_col) {
                a += f;
            }
        }
        if let Ok(field) = view_field(s, cfg.r_env) {
            let (hard, weak) = obstacle_centroids(grid, &field);
            if let Ok(f) = env_force(forces.k_env, s.p, hard, weak, cfg.lambda_weak) {
                a += f;
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// Integrates the reference model from frame `from` to `horizon` and
/// returns the positions per agent, starting with the initial ones.
pub fn integrate(
    start: &[AgentState],
    goals: &[DVec2],
    from: usize,
    horizon: usize,
    forces: &ReferenceForces,
    cfg: &NspConfig,
    grid: &SceneGrid,
) -> Result<Vec<Vec<DVec2>>> {
    let mut states = start.to_vec();
    let mut paths: Vec<Vec<DVec2>> = states.iter().map(|s| vec![s.p]).collect();
    for t in from..horizon {
        let acc = reference_accelerations(&states, goals, t, horizon, forces, cfg, grid)?;
        for (i, s) in states.iter_mut().enumerate() {
            *s = semi_implicit_step(*s, acc[i], DVec2::ZERO, cfg.dt)?;
            paths[i].push(s.p);
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub forces: ReferenceForces,
    pub scenes: usize,
    pub agents_per_scene: usize,
    /// Side of the square area agents start in, in pixels.
    pub extent: f64,
    pub speed: (f64, f64),
    /// Largest angle between the initial velocity and the goal direction.
    pub heading_jitter: f64,
    /// Std of Gaussian noise added to positions after integration.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            forces: ReferenceForces::default(),
            scenes: 8,
            agents_per_scene: 4,
            extent: 240.0,
            speed: (20.0, 40.0),
            heading_jitter: 0.6,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Generates one 20-frame cohort per scene. Agents walk in a straight line
/// through the observed frames, off their goal direction by up to
/// `heading_jitter`, and follow the reference model from the last observed
/// frame on. Frame ids advance by 10 per frame; scenes do not overlap.
pub fn generate_cohorts(spec: &SyntheticSpec, cfg: &NspConfig, grid: &SceneGrid) -> Result<Vec<Cohort>> {
    if spec.agents_per_scene == 0 || !(spec.speed.0 > 0.0 && spec.speed.1 >= spec.speed.0) || !(spec.noise >= 0.0) {
        return Err(NspError::Config { key: "synthetic".into(), reason: "need agents, a positive speed range and non-negative noise".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let horizon = WINDOW_LEN - 1;
    let m = OBS_LEN - 1;
    let mut out = Vec::with_capacity(spec.scenes);
    for scene in 0..spec.scenes {
        let mut start = Vec::with_capacity(spec.agents_per_scene);
        let mut goals = Vec::with_capacity(spec.agents_per_scene);
        for _ in 0..spec.agents_per_scene {
            let p = DVec2::new(rng.random_range(0.0..spec.extent), rng.random_range(0.0..spec.extent));
            let target = DVec2::new(rng.random_range(0.0..spec.extent), rng.random_range(0.0..spec.extent));
            let dir = (target - p).try_normalize().unwrap_or(DVec2::X);
            let speed = rng.random_range(spec.speed.0..=spec.speed.1);
            let jitter = rng.random_range(-spec.heading_jitter..=spec.heading_jitter);
            let v = DVec2::from_angle(jitter).rotate(dir) * speed;
            start.push(AgentState::new(p, v));
            goals.push(p + dir * speed * (horizon - m) as f64 * cfg.dt);
        }
        let future = integrate(&start, &goals, m, horizon, &spec.forces, cfg, grid)?;
        let paths: Vec<Vec<DVec2>> = start
            .iter()
            .zip(future)
            .map(|(s, f)| (0..m).map(|k| s.p - s.v * ((m - k) as f64 * cfg.dt)).chain(f).collect())
            .collect();
        let base = (scene * 1000) as i64;
        let frame_ids: Vec<i64> = (0..WINDOW_LEN as i64).map(|i| base + 10 * i).collect();
        let windows = paths
            .into_iter()
            .enumerate()
            .map(|(i, mut path)| {
                if spec.noise > 0.0 {
                    for p in &mut path {
                        *p += DVec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    }
                }
                TrajectoryWindow::from_positions(format!("{scene}_{i}"), frame_ids.clone(), &path, cfg.dt)
            })
            .collect();
        out.push(Cohort::new(windows));
    }
    Ok(out)
}

/// Every window position of the cohorts as trajectory-file records.
pub fn cohort_records(cohorts: &[Cohort]) -> Vec<Record> {
    cohorts
        .iter()
        .flat_map(|c| &c.windows)
        .flat_map(|w| w.frame_ids.iter().zip(&w.frames).map(|(f, s)| Record { frame_id: *f, agent_id: w.agent_id.clone(), p: s.p }))
        .collect()
}

/// A campus-plaza layout: a fountain in the middle, four building blocks
/// between the walkways and lawn strips along them. The outer 10% band is
/// open pavement.
pub fn plaza_grid(height: usize, width: usize) -> SceneGrid {
    let mut grid = SceneGrid::walkable(height, width);
    let (h, w) = (height as f64, width as f64);
    let center = DVec2::new(w / 2.0, h / 2.0);
    let fountain = 0.1 * h.min(w);
    let blocks = [(0.2, 0.18, 0.38, 0.36), (0.62, 0.18, 0.8, 0.36), (0.2, 0.64, 0.38, 0.82), (0.62, 0.64, 0.8, 0.82)];
    let lawns = [(0.2, 0.4, 0.38, 0.44), (0.62, 0.56, 0.8, 0.6), (0.42, 0.18, 0.46, 0.36), (0.54, 0.64, 0.58, 0.82)];
    let inside = |(x0, y0, x1, y1): (f64, f64, f64, f64), p: DVec2| p.x >= x0 * w && p.x < x1 * w && p.y >= y0 * h && p.y < y1 * h;
    for row in 0..height {
        for col in 0..width {
            let p = SceneGrid::cell_center(row, col);
            if (p - center).length() < fountain || blocks.iter().any(|b| inside(*b, p)) {
                grid.set(row, col, CellClass::Unwalkable);
            } else if lawns.iter().any(|l| inside(*l, p)) {
                grid.set(row, col, CellClass::WeakObstacle);
            }
        }
    }
    grid
}
