//! Which agents and which scene pixels are allowed to push on an agent.

use glam::DVec2;

use crate::error::{NspError, Result};
use crate::types::{AgentState, CellClass, SceneGrid};

/// Indices of `others` inside the forward sector of `me`: within `r_col`
/// and deviating from the heading by at most `omega` (half-angle).
///
/// `skip` excludes the agent's own slot when `others` contains it. A
/// stationary agent has no sector and gets an empty set. Others at exactly
/// the agent's position are kept so the force stage can flag them.
pub fn neighborhood(me: &AgentState, others: &[AgentState], omega: f64, r_col: f64, skip: Option<usize>) -> Vec<usize> {
    if me.v == DVec2::ZERO {
        return Vec::new();
    }
    others
        .iter()
        .enumerate()
        .filter(|&(j, other)| {
            if Some(j) == skip {
                return false;
            }
            let d = other.p - me.p;
            let dist = d.length();
            if dist > r_col {
                return false;
            }
            dist == 0.0 || bearing(me.v, d) <= omega
        })
        .map(|(j, _)| j)
        .collect()
}

/// Unsigned angle between two non-zero vectors, in [0, π].
pub fn bearing(heading: DVec2, d: DVec2) -> f64 {
    heading.perp_dot(d).atan2(heading.dot(d)).abs()
}

/// Forward square with one corner on the agent and its diagonal along the
/// heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewField {
    pub origin: DVec2,
    pub heading: DVec2,
    pub side: f64,
}

impl ViewField {
    /// The two square edges leaving the origin corner.
    fn edges(&self) -> (DVec2, DVec2) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = self.heading;
        let left = DVec2::new(h.x * s - h.y * s, h.x * s + h.y * s);
        let right = DVec2::new(h.x * s + h.y * s, -h.x * s + h.y * s);
        (left, right)
    }

    pub fn contains(&self, x: DVec2) -> bool {
        let (a, b) = self.edges();
        let d = x - self.origin;
        let (u, w) = (d.dot(a), d.dot(b));
        (0.0..=self.side).contains(&u) && (0.0..=self.side).contains(&w)
    }

    pub fn corners(&self) -> [DVec2; 4] {
        let (a, b) = self.edges();
        let o = self.origin;
        [o, o + a * self.side, o + (a + b) * self.side, o + b * self.side]
    }
}

pub fn view_field(me: &AgentState, r_env: f64) -> Result<ViewField> {
    let heading = me.v.try_normalize().ok_or(NspError::ZeroVelocity)?;
    Ok(ViewField { origin: me.p, heading, side: r_env })
}

/// Mean cell-center coordinates of Unwalkable and WeakObstacle cells whose
/// centers fall inside the field.
pub fn obstacle_centroids(grid: &SceneGrid, field: &ViewField) -> (Option<DVec2>, Option<DVec2>) {
    if grid.height() == 0 || grid.width() == 0 {
        return (None, None);
    }
    let corners = field.corners();
    let min = corners.iter().fold(DVec2::splat(f64::INFINITY), |m, c| m.min(*c));
    let max = corners.iter().fold(DVec2::splat(f64::NEG_INFINITY), |m, c| m.max(*c));
    let col_range = clamp_range(min.x, max.x, grid.width());
    let row_range = clamp_range(min.y, max.y, grid.height());

    let (mut hard_sum, mut hard_n) = (DVec2::ZERO, 0usize);
    let (mut weak_sum, mut weak_n) = (DVec2::ZERO, 0usize);
    for row in row_range {
        for col in col_range.clone() {
            let class = grid.get(row, col);
            if class == CellClass::Walkable {
                continue;
            }
            let c = SceneGrid::cell_center(row, col);
            if !field.contains(c) {
                continue;
            }
            if class == CellClass::Unwalkable {
                hard_sum += c;
                hard_n += 1;
            } else {
                weak_sum += c;
                weak_n += 1;
            }
        }
    }
    let mean = |s: DVec2, n: usize| (n > 0).then(|| s / n as f64);
    (mean(hard_sum, hard_n), mean(weak_sum, weak_n))
}

fn clamp_range(lo: f64, hi: f64, len: usize) -> std::ops::Range<usize> {
    let start = lo.ceil().max(0.0) as usize;
    let end = (hi.floor() + 1.0).max(0.0) as usize;
    start.min(len)..end.min(len)
}
