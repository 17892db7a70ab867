//! Neural social physics: a social-force crowd model whose relaxation time
//! and pairwise repulsion strengths come from small neural networks, with a
//! conditional VAE for the per-step residual.
//!
//! The crate is organized bottom-up:
//!
//! - [`types`]: agent states, 20-frame windows, scene grids, hyper-parameters
//! - [`geometry`]: neighborhood sectors and forward view fields
//! - [`forces`]: closed-form goal, collision and environment forces
//! - [`neural`]: reverse-mode autodiff, dense layers, LSTM, gradient checks
//! - [`nets`] / [`cvae`]: the learned components
//! - [`dynamics`] / [`rollout`]: force composition and time integration
//! - [`training`]: losses, Adam, the staged training schedule
//! - [`io`]: trajectory, scene-grid, homography, config and checkpoint files
//! - [`eval`]: ADE/FDE, collision rate, scenario generation
//! - [`synthetic`]: ground-truth social-force data and test scenes
//! - [`cli`]: the `nsp` command line
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod cvae;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod forces;
pub mod geometry;
pub mod io;
pub mod model;
pub mod nets;
pub mod rollout;
pub mod synthetic;
pub mod training;
pub mod neural;
pub mod types;

pub use error::{NspError, Result};
pub use glam::DVec2;
