//! Orthographic projection and the blob rendering that stands in for an
//! input image.

use serde::{Deserialize, Serialize};

use super::kinematics::Pose3D;
use super::skeleton::NUM_JOINTS;
use crate::error::{Error, Result};

pub const GRID: usize = 32;
pub const GRID_CELLS: usize = GRID * GRID;
/// Half-width of the square world window, millimeters.
pub const WINDOW_HALF: f64 = 120.0;
/// World distance between neighbouring cell centers.
pub const CELL_PITCH: f64 = 2.0 * WINDOW_HALF / GRID as f64;
/// Blob standard deviation, in cells.
pub const BLOB_SIGMA: f64 = 1.5;

pub type Pose2D = [[f64; 2]; NUM_JOINTS];

/// Drops z.
pub fn project_2d(pose: &Pose3D) -> Pose2D {
    pose.0.map(|p| [p[0], p[1]])
}

/// Row-major `32×32` intensity grid, every cell in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rendering(Vec<f64>);

impl Rendering {
    pub fn new(cells: Vec<f64>) -> Result<Self> {
        if cells.len() != GRID_CELLS {
            return Err(Error::Shape(format!("rendering needs {GRID_CELLS} cells, got {}", cells.len())));
        }
        if let Some(v) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("rendering cell {v} outside [0, 1]")));
        }
        Ok(Self(cells))
    }

    pub fn cells(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0[row * GRID + col]
    }
}

/// World coordinate to fractional grid coordinate. Cell `i` is centered on
/// `-WINDOW_HALF + i·CELL_PITCH`, so the window center falls on cell 16.
pub fn to_grid(v: f64) -> f64 {
    (v + WINDOW_HALF) / CELL_PITCH
}

/// Splats one Gaussian blob per joint; each cell keeps the maximum.
/// Column follows x, row follows y.
pub fn render(pose2d: &Pose2D) -> Rendering {
    let mut cells = vec![0.0f64; GRID_CELLS];
    let inv = 1.0 / (2.0 * BLOB_SIGMA * BLOB_SIGMA);
    for p in pose2d {
        let (gx, gy) = (to_grid(p[0]), to_grid(p[1]));
        for r in 0..GRID {
            let dy = r as f64 - gy;
            let ey = dy * dy * inv;
            if ey > 700.0 {
                continue;
            }
            for c in 0..GRID {
                let dx = c as f64 - gx;
                let v = (-(dx * dx * inv + ey)).exp();
                let cell = &mut cells[r * GRID + c];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    Rendering(cells)
}
