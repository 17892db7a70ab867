use std::path::Path;

use glam::{DMat3, DVec2, DVec3};

use super::{parse_error, read_text};
use crate::error::{NspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    PixelToWorld,
    WorldToPixel,
}

/// Pixel to world projective map, with its inverse cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: DMat3,
    inv: DMat3,
}

impl Homography {
    /// From row-major entries.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let h = DMat3::from_cols_array_2d(&rows).transpose();
        let det = h.determinant();
        if !(det.abs() > 1e-12) {
            return Err(NspError::SingularHomography(det.abs()));
        }
        Ok(Self { h, inv: h.inverse() })
    }

    pub fn identity() -> Self {
        Self { h: DMat3::IDENTITY, inv: DMat3::IDENTITY }
    }

    pub fn matrix(&self) -> DMat3 {
        self.h
    }
}

pub fn apply_homography(h: &Homography, point: DVec2, direction: Direction) -> Result<DVec2> {
    let m = match direction {
        Direction::PixelToWorld => h.h,
        Direction::WorldToPixel => h.inv,
    };
    let q: DVec3 = m * point.extend(1.0);
    if !(q.z.abs() >= 1e-12) {
        return Err(NspError::DegenerateProjection(q.z));
    }
    Ok(q.truncate() / q.z)
}

/// Three rows of three numbers.
pub fn load_homography(path: &Path) -> Result<Homography> {
    let source = path.display().to_string();
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_error(&source, n + 1, "expected numbers"))?;
        let row: [f64; 3] = row.try_into().map_err(|_| parse_error(&source, n + 1, "expected 3 values"))?;
        rows.push(row);
    }
    let rows: [[f64; 3]; 3] = rows.try_into().map_err(|_| parse_error(&source, 1, "expected 3 rows"))?;
    Homography::new(rows)
}
