//! File formats: trajectories, scene grids, homographies, checkpoints and
//! flat key/value configs.

mod checkpoint;
mod config;
mod grid;
mod homography;
mod trajectories;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{RunConfig, DEFAULT_STRIDE};
pub use grid::{load_scene_grid, parse_scene_grid, save_scene_grid, format_scene_grid};
pub use homography::{apply_homography, load_homography, Direction, Homography};
pub use trajectories::{
    build_cohorts, format_trajectories, load_trajectories, parse_trajectories, prediction_records, save_trajectories,
    window_split, RawTrack, Record,
};

use std::path::Path;

use crate::error::{NspError, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| NspError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| NspError::io(path, e))
}

pub(crate) fn parse_error(path: &str, line: usize, msg: impl Into<String>) -> NspError {
    NspError::Parse { path: path.to_string(), line, msg: msg.into() }
}
