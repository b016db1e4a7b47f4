//! AprilTag-grid calibration target.
//!
//! The board defines the world frame: it lies in `z = 0`, tag `(r, c)` has
//! its lower-left corner at `(c·s·(1+k), r·s·(1+k), 0)` for tag size `s` and
//! spacing ratio `k`, and tag index `r·cols + c` owns corner ids
//! `4·index + {0, 1, 2, 3}` ordered counter-clockwise from the lower-left.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Board block of the run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardConfig {
    pub rows: usize,
    pub cols: usize,
    pub tag_size_m: f64,
    /// Gap between tags as a fraction of the tag size.
    pub tag_spacing: f64,
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self { rows: 6, cols: 6, tag_size_m: 0.088, tag_spacing: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoardGeometry {
    pub rows: usize,
    pub cols: usize,
    pub tag_size: f64,
    pub tag_spacing: f64,
    corners: Vec<Vector3<f64>>,
}

/// Builds the corner map of a `rows × cols` tag grid.
pub fn build_grid(rows: usize, cols: usize, tag_size: f64, tag_spacing: f64) -> Result<BoardGeometry> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("board needs at least one tag, got {rows}x{cols}")));
    }
    if !(tag_size > 0.0) || !tag_size.is_finite() {
        return Err(Error::Config(format!("tag size must be positive, got {tag_size}")));
    }
    if !(tag_spacing >= 0.0) || !tag_spacing.is_finite() {
        return Err(Error::Config(format!("tag spacing must be non-negative, got {tag_spacing}")));
    }
    let pitch = tag_size * (1.0 + tag_spacing);
    let mut corners = Vec::with_capacity(4 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64 * pitch, r as f64 * pitch);
            corners.push(Vector3::new(x, y, 0.0));
            corners.push(Vector3::new(x + tag_size, y, 0.0));
            corners.push(Vector3::new(x + tag_size, y + tag_size, 0.0));
            corners.push(Vector3::new(x, y + tag_size, 0.0));
        }
    }
    Ok(BoardGeometry { rows, cols, tag_size, tag_spacing, corners })
}

impl BoardGeometry {
    pub fn from_config(cfg: &BoardConfig) -> Result<Self> {
        build_grid(cfg.rows, cfg.cols, cfg.tag_size_m, cfg.tag_spacing)
    }

    pub fn config(&self) -> BoardConfig {
        BoardConfig { rows: self.rows, cols: self.cols, tag_size_m: self.tag_size, tag_spacing: self.tag_spacing }
    }

    pub fn num_corners(&self) -> usize {
        self.corners.len()
    }

    /// World position of a corner, `None` for unknown ids.
    pub fn corner(&self, id: usize) -> Option<&Vector3<f64>> {
        self.corners.get(id)
    }

    pub fn corners(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.corners.iter().enumerate()
    }

    /// Centre of the board in the world frame.
    pub fn center(&self) -> Vector3<f64> {
        let pitch = self.tag_size * (1.0 + self.tag_spacing);
        Vector3::new(
            0.5 * ((self.cols - 1) as f64 * pitch + self.tag_size),
            0.5 * ((self.rows - 1) as f64 * pitch + self.tag_size),
            0.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tag() {
        let b = build_grid(1, 1, 0.1, 0.0).unwrap();
        let got: Vec<_> = b.corners().map(|(_, p)| *p).collect();
        let want = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.1, 0.1, 0.0),
            Vector3::new(0.0, 0.1, 0.0),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn spacing_moves_second_row() {
        let b = build_grid(2, 1, 0.1, 0.3).unwrap();
        let p = b.corner(4).unwrap();
        assert_eq!(p.x, 0.0);
        assert!((p.y - 0.13).abs() < 1e-15);
    }

    #[test]
    fn six_by_six_extent_and_uniqueness() {
        let b = build_grid(6, 6, 0.1, 0.3).unwrap();
        assert_eq!(b.num_corners(), 144);
        let max = b.corners().map(|(_, p)| p.x.max(p.y)).fold(0.0, f64::max);
        assert!((max - (5.0 * 0.13 + 0.1)).abs() < 1e-12);
        for (i, p) in b.corners() {
            assert_eq!(p.z, 0.0);
            for (j, q) in b.corners() {
                if i != j {
                    assert!((p - q).norm() > 1e-9);
                }
            }
        }
        assert!(b.corner(144).is_none());
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_grid(0, 3, 0.1, 0.3).is_err());
        assert!(build_grid(3, 3, 0.0, 0.3).is_err());
        assert!(build_grid(3, 3, 0.1, -0.1).is_err());
    }
}
