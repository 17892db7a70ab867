//! Progressive training on data from a social-force model with known
//! coefficients, checking that the learned relaxation time recovers them.
//!
//! cargo run --release --example train_synthetic

use nsp_core::dynamics::ForceSwitches;
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::synthetic::{generate_cohorts, SyntheticSpec};
use nsp_core::training::{dataset_loss, mean_tau, progressive_train, Stage, StageConfig, TrainConfig};
use nsp_core::types::{NspConfig, SceneGrid};

fn main() -> nsp_core::Result<()> {
    let cfg = NspConfig::default();
    let grid = SceneGrid::empty();
    let spec = SyntheticSpec { scenes: 16, agents_per_scene: 3, extent: 300.0, ..Default::default() };
    let data = generate_cohorts(&spec, &cfg, &grid)?;

    let mut train = TrainConfig::default();
    train.goal = StageConfig { lr: 1e-2, epochs: 60 };
    train.repulsion = StageConfig { lr: 1e-2, epochs: 60 };
    train.cvae = StageConfig { lr: 1e-3, epochs: 30 };
    train.batch_size = 4;

    let mut model = ModelParams::new(ModelDims::small(), train.k_env_init, train.seed);
    println!("untrained l_traj {:.3}, mean tau {:.3}", dataset_loss(&data, &grid, &model, &cfg, ForceSwitches::ALL)?, mean_tau(&data, &model, &cfg)?);
    let mut report = |stage: Stage, m: &ModelParams| {
        let loss = dataset_loss(&data, &grid, m, &cfg, stage.switches())?;
        println!("after stage {stage}: l_traj {loss:.4}, mean tau {:.4}", mean_tau(&data, m, &cfg)?);
        Ok(())
    };
    let log = progressive_train(&data, &grid, &mut model, &cfg, &train, &Stage::ALL, &mut report)?;
    println!("final l_cvae {:.3e}", log.last().map_or(f64::NAN, |r| r.loss));
    println!("reference tau {}", spec.forces.tau);
    Ok(())
}
