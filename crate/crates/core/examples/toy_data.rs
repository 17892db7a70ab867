//! Writes the bundled toy dataset: crowd windows from a plain social-force
//! model with known coefficients, and a plaza scene grid for crowd simulation.
//!
//! cargo run --example toy_data -- data/toy

use std::path::PathBuf;

use nsp_core::io::{save_scene_grid, save_trajectories};
use nsp_core::synthetic::{cohort_records, generate_cohorts, plaza_grid, SyntheticSpec};
use nsp_core::types::{NspConfig, SceneGrid};

fn main() -> nsp_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    std::fs::create_dir_all(&dir).map_err(|e| nsp_core::NspError::Io { path: dir.clone(), source: e })?;
    let cfg = NspConfig::default();
    let grid = SceneGrid::walkable(320, 320);
    let base = SyntheticSpec { scenes: 16, agents_per_scene: 3, extent: 300.0, ..Default::default() };
    let train = generate_cohorts(&base, &cfg, &grid)?;
    let test = generate_cohorts(&SyntheticSpec { scenes: 4, seed: 1, ..base }, &cfg, &grid)?;
    save_trajectories(&dir.join("train.txt"), &cohort_records(&train))?;
    save_trajectories(&dir.join("test.txt"), &cohort_records(&test))?;
    save_scene_grid(&dir.join("plaza.grid"), &plaza_grid(400, 640))?;
    println!("wrote {} training and {} test windows to {}", train.len() * 3, test.len() * 3, dir.display());
    Ok(())
}
