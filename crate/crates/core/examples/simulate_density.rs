//! Crowds of growing size crossing a plaza, with and without the learned
//! repulsion, scored by collision rate.
//!
//! cargo run --release --example simulate_density

use nsp_core::dynamics::ForceSwitches;
use nsp_core::eval::{generate_scenario, interval_collision_rates, run_scenario, CollisionSpec};
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::synthetic::{generate_cohorts, plaza_grid, SyntheticSpec};
use nsp_core::training::{progressive_train, Stage, StageConfig, TrainConfig};
use nsp_core::types::{NspConfig, SceneGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nsp_core::Result<()> {
    let cfg = NspConfig::default();
    let spec = SyntheticSpec { scenes: 16, agents_per_scene: 3, extent: 300.0, ..Default::default() };
    let data = generate_cohorts(&spec, &cfg, &SceneGrid::empty())?;
    let mut train = TrainConfig::default();
    train.goal = StageConfig { lr: 1e-2, epochs: 40 };
    train.repulsion = StageConfig { lr: 1e-2, epochs: 40 };
    train.batch_size = 4;
    let mut model = ModelParams::new(ModelDims::small(), train.k_env_init, train.seed);
    progressive_train(&data, &SceneGrid::empty(), &mut model, &cfg, &train, &[Stage::GoalOnly, Stage::AddRepulsion], &mut |_, _| Ok(()))?;

    let grid = plaza_grid(400, 640);
    let sim = NspConfig { dt: 0.1, ..cfg };
    println!("{:>6} {:>12} {:>12}", "agents", "full", "goal only");
    for n in [10, 20, 30, 40, 50] {
        let mut rates = [0.0; 2];
        for seed in 0..5 {
            let scenario = generate_scenario(&grid, n, &mut ChaCha8Rng::seed_from_u64(seed), (20.0, 50.0))?;
            for (slot, switches) in [ForceSwitches::ALL, ForceSwitches::GOAL_ONLY].into_iter().enumerate() {
                let paths = run_scenario(&scenario, 300, &grid, &model, &sim, switches, &mut ChaCha8Rng::seed_from_u64(seed))?;
                let r = interval_collision_rates(&paths, CollisionSpec::PIXEL_RADIUS)?;
                rates[slot] += r.iter().sum::<f64>() / r.len() as f64 / 5.0;
            }
        }
        println!("{n:>6} {:>12.4} {:>12.4}", rates[0], rates[1]);
    }
    Ok(())
}
