//! Backprop against central differences through a full 12-step rollout,
//! per parameter tensor.
//!
//! cargo run --release --example gradcheck

use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::synthetic::{generate_cohorts, SyntheticSpec};
use nsp_core::training::{cvae_grad_check, residual_samples, trajectory_grad_check};
use nsp_core::types::{NspConfig, SceneGrid};

fn main() -> nsp_core::Result<()> {
    let cfg = NspConfig::default();
    let grid = SceneGrid::empty();
    let spec = SyntheticSpec { scenes: 1, agents_per_scene: 3, extent: 120.0, ..Default::default() };
    let cohort = generate_cohorts(&spec, &cfg, &grid)?.remove(0);
    let model = ModelParams::new(ModelDims::small(), 1.0, 0);

    let mut checks = trajectory_grad_check(&cohort, &grid, &model, &cfg, 1e-5, usize::MAX)?;
    let samples = residual_samples(&cohort, &grid, &model, &cfg)?;
    checks.extend(cvae_grad_check(&samples[..6], &model, &cfg, 1e-5, usize::MAX, 0)?);
    println!("{:<36} {:>10} {:>10}", "tensor", "rel. err", "max |g|");
    for c in &checks {
        println!("{:<36} {:>10.2e} {:>10.2e}", model.store.name(c.id), c.max_rel_error, c.max_grad);
    }
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.2e}");
    Ok(())
}
