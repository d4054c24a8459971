//! Regular voxel grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Vec3;

/// Grid layout in mm, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    /// Grid center; `None` centers the grid on the rotation center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_mm: Option<[f64; 3]>,
}

impl VolumeSpec {
    pub fn desk() -> Self {
        VolumeSpec {
            dims: [128; 3],
            spacing_mm: 1.0,
            center_mm: None,
        }
    }

    pub fn paper() -> Self {
        VolumeSpec {
            dims: [512; 3],
            spacing_mm: 0.5,
            center_mm: None,
        }
    }

    pub fn grid(&self, default_center: &Vec3) -> Result<Grid> {
        if self.dims.contains(&0) {
            return Err(Error::Config("volume dimensions must be positive".into()));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return Err(Error::Config("volume spacing must be positive".into()));
        }
        let center = self
            .center_mm
            .map(|c| Vec3::from(c) * 1e-3)
            .unwrap_or(*default_center);
        Ok(Grid::centered(self.dims, self.spacing_mm * 1e-3, &center))
    }
}

/// Voxel lattice in SI units; `origin` is the center of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
}

impl Grid {
    pub fn centered(dims: [usize; 3], spacing: f64, center: &Vec3) -> Self {
        let half = Vec3::new(
            (dims[0] as f64 - 1.0) * 0.5,
            (dims[1] as f64 - 1.0) * 0.5,
            (dims[2] as f64 - 1.0) * 0.5,
        );
        Grid {
            dims,
            spacing,
            origin: center - half * spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn position(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.spacing
    }

    pub fn center(&self) -> Vec3 {
        self.position(0, 0, 0)
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * (0.5 * self.spacing)
    }

    /// Number of voxels in one z-slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }
}

/// Attenuation volume (1/m).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    /// x-fastest, then y, then z.
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: Grid) -> Self {
        Volume {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn check_same_grid(&self, other: &Volume) -> Result<()> {
        if self.grid.dims != other.grid.dims
            || (self.grid.spacing - other.grid.spacing).abs() > 1e-12
            || (self.grid.origin - other.grid.origin).amax() > 1e-12
        {
            return Err(Error::Shape(format!(
                "volume grids differ: {:?} vs {:?}",
                self.grid.dims, other.grid.dims
            )));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }

    /// Linear map taking `[lo, hi]` to `[0, 1]`, clamped.
    pub fn normalized_with(&self, lo: f64, hi: f64) -> Volume {
        let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
        Volume {
            grid: self.grid,
            data: self
                .data
                .iter()
                .map(|&x| ((x - lo) * scale).clamp(0.0, 1.0))
                .collect(),
        }
    }

    /// Grid index of the largest value.
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        let nx = self.grid.dims[0];
        let ny = self.grid.dims[1];
        [best % nx, (best / nx) % ny, best / (nx * ny)]
    }
}
