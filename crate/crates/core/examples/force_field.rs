//! Goal, collision and environment forces on one agent, first from the
//! closed-form functions with fixed coefficients, then from an untrained
//! network model.
//!
//! cargo run --example force_field

use nsp_core::dynamics::{net_acceleration, Diagnostics, ForceSwitches, GoalMemory, StepContext};
use nsp_core::forces::{collision_force, desired_velocity, env_force, goal_force};
use nsp_core::geometry::{neighborhood, obstacle_centroids, view_field};
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::types::{AgentState, CellClass, NspConfig, SceneGrid};
use nsp_core::DVec2;

fn main() -> nsp_core::Result<()> {
    let cfg = NspConfig::default();
    let me = AgentState::new(DVec2::new(50.0, 40.0), DVec2::new(30.0, 0.0));
    let goal = DVec2::new(400.0, 60.0);
    let others = [
        AgentState::new(DVec2::new(90.0, 48.0), DVec2::new(-25.0, 0.0)),
        AgentState::new(DVec2::new(20.0, 40.0), DVec2::new(30.0, 0.0)),
    ];
    let mut grid = SceneGrid::walkable(120, 200);
    for col in 60..120 {
        grid.set(70, col, CellClass::Unwalkable);
        grid.set(71, col, CellClass::WeakObstacle);
    }

    let (t, horizon) = (7, 19);
    let v_des = desired_velocity(me.p, goal, t, horizon, cfg.dt)?;
    println!("desired velocity {v_des:.3}");
    println!("goal force (tau 0.5)      {:.3}", goal_force(0.5, v_des, me.v)?);
    for j in neighborhood(&me, &others, cfg.omega, cfg.r_col, None) {
        println!("collision from #{j} (k 25) {:.3}", collision_force(25.0, me.p - others[j].p, cfg.r_col)?);
    }
    let (hard, weak) = obstacle_centroids(&grid, &view_field(&me, cfg.r_env)?);
    println!("obstacle centroids {hard:?} / {weak:?}");
    println!("environment (k_env 65)    {:.3}", env_force(65.0, me.p, hard, weak, cfg.lambda_weak)?);

    let model = ModelParams::new(ModelDims::default(), 65.0, 0);
    let mut memory = GoalMemory::new(&model);
    for k in 0..t {
        memory.observe(&model, AgentState::new(me.p - me.v * cfg.dt * (t - k) as f64, me.v))?;
    }
    let ctx = StepContext { model: &model, cfg: &cfg, grid: &grid, switches: ForceSwitches::ALL, t, horizon };
    let mut diag = Diagnostics::default();
    let f = net_acceleration(&ctx, me, goal, &others, &mut memory, &mut diag)?;
    println!("untrained model: goal {:.3} collision {:.3} env {:.3} total {:.3}", f.f_goal, f.f_col, f.f_env, f.total);
    Ok(())
}
