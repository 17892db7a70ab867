//! Deterministic, standard-sampling and ultra-sampling predictions on
//! held-out windows, scored by minimum ADE/FDE.
//!
//! cargo run --release --example predict

use nsp_core::eval::{protocol_errors, Protocol};
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::synthetic::{generate_cohorts, SyntheticSpec};
use nsp_core::training::{progressive_train, Stage, StageConfig, TrainConfig};
use nsp_core::types::{NspConfig, SceneGrid};

fn main() -> nsp_core::Result<()> {
    let cfg = NspConfig::default();
    let grid = SceneGrid::empty();
    let spec = SyntheticSpec { scenes: 16, agents_per_scene: 3, extent: 300.0, ..Default::default() };
    let train_set = generate_cohorts(&spec, &cfg, &grid)?;
    let test_set = generate_cohorts(&SyntheticSpec { scenes: 6, seed: 11, noise: 0.5, ..spec }, &cfg, &grid)?;

    let mut train = TrainConfig::default();
    train.goal = StageConfig { lr: 1e-2, epochs: 40 };
    train.repulsion = StageConfig { lr: 1e-2, epochs: 40 };
    train.cvae = StageConfig { lr: 1e-3, epochs: 30 };
    train.batch_size = 4;
    let mut model = ModelParams::new(ModelDims::small(), train.k_env_init, train.seed);
    progressive_train(&train_set, &grid, &mut model, &cfg, &train, &Stage::ALL, &mut |_, _| Ok(()))?;

    for (name, protocol) in [
        ("deterministic", Protocol::Deterministic),
        ("standard x20", Protocol::Standard { k: 20 }),
        ("ultra x20", Protocol::Ultra { k: 20 }),
    ] {
        let (ade, fde) = protocol_errors(&test_set, &grid, &model, &cfg, protocol, 5)?;
        println!("{name:<14} ADE {ade:7.3}  FDE {fde:7.3}");
    }
    Ok(())
}
