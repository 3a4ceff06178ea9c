//! Maps, signed distance fields, time-varying current fields and measurement
//! ingestion.
//!
//! Every gridded quantity shares a [`GridFrame`]: cell `(i, j)` has its center
//! at `origin + ((i + 0.5) * cell_size, (j + 0.5) * cell_size)`, `i` counting
//! along +x and `j` along +y. Continuous queries interpolate bilinearly between
//! cell centers and clamp to the nearest cell outside the covered extent.

mod current;
mod grid;
mod measurements;
mod sdf;
mod synth;

pub use current::CurrentField;
pub use grid::{Circle, OccupancyGrid, Rect};
pub use measurements::{ingest_measurements, read_measurements, write_measurements, MeasurementSet};
pub use sdf::{build_sdf, SignedDistanceField};
pub use synth::{synth_current_field, FlipDisk, PairVariant, SyntheticKind, SyntheticSpec, TidalModulation};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planar point or vector in meters (or m/s for velocities).
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid current field: {0}")]
    InvalidField(String),
    #[error("unknown synthetic field kind `{0}`")]
    UnknownFieldKind(String),
    #[error("measurement file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("map file: {0}")]
    Map(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular grid placement shared by occupancy, distance and current grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

/// Four-cell bilinear interpolation weights for one query point, with their
/// derivatives with respect to the query position.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub cells: [usize; 4],
    pub weights: [f64; 4],
    pub dweights_dx: [f64; 4],
    pub dweights_dy: [f64; 4],
}

impl GridFrame {
    pub fn new(origin: [f64; 2], cell_size: f64, width: usize, height: usize) -> Result<Self, EnvError> {
        let frame = Self {
            origin,
            cell_size,
            width,
            height,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(EnvError::InvalidGrid(format!("cell_size must be > 0, got {}", self.cell_size)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(EnvError::InvalidGrid(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(EnvError::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Lower-left and upper-right corners of the covered area.
    pub fn extent(&self) -> (Vec2, Vec2) {
        let lo = Vec2::new(self.origin[0], self.origin[1]);
        let hi = lo + Vec2::new(self.width as f64, self.height as f64) * self.cell_size;
        (lo, hi)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64) * self.cell_size
    }

    /// Cell containing `p`, clamped into the grid.
    pub fn cell_of(&self, p: &Vec2) -> (usize, usize) {
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        (
            clamp((p.x - self.origin[0]) / self.cell_size, self.width),
            clamp((p.y - self.origin[1]) / self.cell_size, self.height),
        )
    }

    pub(crate) fn stencil(&self, p: &Vec2) -> Stencil {
        let (i0, i1, fx, dfx) = axis_weights((p.x - self.origin[0]) / self.cell_size - 0.5, self.width);
        let (j0, j1, fy, dfy) = axis_weights((p.y - self.origin[1]) / self.cell_size - 0.5, self.height);
        let dfx = dfx / self.cell_size;
        let dfy = dfy / self.cell_size;
        Stencil {
            cells: [self.index(i0, j0), self.index(i1, j0), self.index(i0, j1), self.index(i1, j1)],
            weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
            dweights_dx: [-dfx * (1.0 - fy), dfx * (1.0 - fy), -dfx * fy, dfx * fy],
            dweights_dy: [-(1.0 - fx) * dfy, -fx * dfy, (1.0 - fx) * dfy, fx * dfy],
        }
    }
}

/// Lower/upper sample index, fractional weight of the upper sample, and the
/// derivative of that weight with respect to the continuous coordinate (zero
/// when clamped).
fn axis_weights(u: f64, n: usize) -> (usize, usize, f64, f64) {
    if n == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let max = (n - 1) as f64;
    if !(u > 0.0) {
        return (0, 1, 0.0, 0.0);
    }
    if u >= max {
        return (n - 2, n - 1, 1.0, 0.0);
    }
    let lo = (u.floor() as usize).min(n - 2);
    (lo, lo + 1, u - lo as f64, 1.0)
}

/// Interpolation weights along a strictly increasing axis, clamped at the ends.
pub(crate) fn time_weights(times: &[f64], t: f64) -> (usize, usize, f64) {
    let n = times.len();
    if n == 1 || !(t > times[0]) {
        return (0, 0, 0.0);
    }
    if t >= times[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    // first index with times[k] > t
    let hi = times.partition_point(|&s| s <= t);
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    (lo, hi, w)
}
