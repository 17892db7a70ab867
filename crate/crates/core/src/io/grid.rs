use std::fmt::Write as _;
use std::path::Path;

use super::{parse_error, read_text, write_bytes};
use crate::error::{NspError, Result};
use crate::types::{CellClass, SceneGrid};

/// Parses `height width` followed by `height` rows of `width` labels
/// (0 walkable, 1 unwalkable, 2 weak obstacle).
pub fn parse_scene_grid(text: &str, source: &str) -> Result<SceneGrid> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, header) = lines.next().ok_or_else(|| parse_error(source, 1, "missing `height width` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_error(source, n + 1, "header must be two non-negative integers"))?;
    let [height, width] = dims[..] else {
        return Err(parse_error(source, n + 1, "header must be `height width`"));
    };
    let mut cells = Vec::with_capacity(height * width);
    let mut rows = 0;
    for (n, line) in lines {
        if rows == height {
            return Err(parse_error(source, n + 1, format!("more than {height} rows")));
        }
        let labels: Vec<&str> = line.split_whitespace().collect();
        if labels.len() != width {
            return Err(parse_error(source, n + 1, format!("expected {width} labels, found {}", labels.len())));
        }
        for s in labels {
            let label: i64 = s.parse().map_err(|_| parse_error(source, n + 1, format!("bad label `{s}`")))?;
            let class = CellClass::from_label(label)
                .ok_or_else(|| NspError::InvalidLabel { path: source.to_string(), line: n + 1, label })?;
            cells.push(class);
        }
        rows += 1;
    }
    if rows != height {
        return Err(parse_error(source, text.lines().count(), format!("expected {height} rows, found {rows}")));
    }
    SceneGrid::new(height, width, cells)
}

pub fn load_scene_grid(path: &Path) -> Result<SceneGrid> {
    parse_scene_grid(&read_text(path)?, &path.display().to_string())
}

pub fn format_scene_grid(grid: &SceneGrid) -> String {
    let mut out = format!("{} {}\n", grid.height(), grid.width());
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            let sep = if col + 1 == grid.width() { "\n" } else { " " };
            let _ = write!(out, "{}{sep}", grid.get(row, col).label());
        }
    }
    out
}

pub fn save_scene_grid(path: &Path, grid: &SceneGrid) -> Result<()> {
    write_bytes(path, format_scene_grid(grid).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_map_to_classes() {
        let g = parse_scene_grid("2 2\n0 0\n1 2\n", "g").unwrap();
        assert_eq!(g.cells(), &[CellClass::Walkable, CellClass::Walkable, CellClass::Unwalkable, CellClass::WeakObstacle]);
        assert_eq!(parse_scene_grid(&format_scene_grid(&g), "g").unwrap(), g);
    }

    #[test]
    fn bad_grids() {
        assert!(matches!(parse_scene_grid("1 2\n0 5\n", "g"), Err(NspError::InvalidLabel { label: 5, line: 2, .. })));
        assert!(matches!(parse_scene_grid("2 2\n0 0\n", "g"), Err(NspError::Parse { .. })));
        assert!(matches!(parse_scene_grid("2 2\n0 0\n0\n", "g"), Err(NspError::Parse { .. })));
        assert!(matches!(parse_scene_grid("1 1\n0\n0\n", "g"), Err(NspError::Parse { .. })));
        assert!(matches!(parse_scene_grid("", "g"), Err(NspError::Parse { .. })));
    }
}
