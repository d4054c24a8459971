//! Volume similarity (3D SSIM, RMSE) and motion-series error measures.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moco::MotionSeries;
use crate::phantom::RegionMasks;
use crate::rotation::{rotation_of, translation_of, Mat3, Vec3};
use crate::volume::Volume;

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of the scaled volumes.
pub const SSIM_RANGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Whole,
    Shank,
    Thigh,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Whole, Region::Shank, Region::Thigh];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Whole => "whole",
            Region::Shank => "shank",
            Region::Thigh => "thigh",
        }
    }

    pub fn mask<'a>(&self, masks: &'a RegionMasks) -> &'a [bool] {
        match self {
            Region::Whole => &masks.whole,
            Region::Shank => &masks.shank,
            Region::Thigh => &masks.thigh,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub region: Region,
    pub ssim: f64,
    pub rmse: f64,
}

/// Translation (mm) and rotation (deg) errors, each the mean of the three
/// per-axis RMSEs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionError {
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

fn gaussian_window() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect()
}

/// Weighted mean along one axis with the window truncated and renormalized
/// at the volume border.
fn smooth_axis(data: &[f64], dims: [usize; 3], axis: usize, w: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(dims[0] * dims[1]).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z][axis] as i64;
                let base = x + dims[0] * (y + dims[1] * z);
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in (-r).max(-c)..=r.min(n - 1 - c) {
                    let wk = w[(k + r) as usize];
                    let idx = (base as i64 + k * stride as i64) as usize;
                    acc += wk * data[idx];
                    norm += wk;
                }
                slice[x + dims[0] * y] = acc / norm;
            }
        }
    });
    out
}

fn smooth(data: &[f64], dims: [usize; 3], w: &[f64]) -> Vec<f64> {
    let a = smooth_axis(data, dims, 0, w);
    let b = smooth_axis(&a, dims, 1, w);
    smooth_axis(&b, dims, 2, w)
}

fn check_mask(vol: &Volume, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != vol.data.len() {
            return Err(Error::Shape(format!("mask has {} entries for {} voxels", m.len(), vol.data.len())));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
    }
    Ok(())
}

/// Local SSIM at every voxel.
pub fn ssim_map(a: &Volume, b: &Volume) -> Result<Vec<f64>> {
    a.check_same_grid(b)?;
    let dims = a.grid.dims;
    let w = gaussian_window();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let mu_a = smooth(&a.data, dims, &w);
    let mu_b = smooth(&b.data, dims, &w);
    let e_aa = smooth(&sq(&a.data), dims, &w);
    let e_bb = smooth(&sq(&b.data), dims, &w);
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let e_ab = smooth(&ab, dims, &w);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    Ok((0..a.data.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

/// Mean local SSIM over the mask (all voxels when `None`). Both volumes
/// should already be scaled to `[0, 1]`.
pub fn ssim3d(a: &Volume, b: &Volume, mask: Option<&[bool]>) -> Result<f64> {
    a.check_same_grid(b)?;
    check_mask(a, mask)?;
    let map = ssim_map(a, b)?;
    Ok(masked_mean(&map, mask))
}

fn masked_mean(v: &[f64], mask: Option<&[bool]>) -> f64 {
    match mask {
        Some(m) => {
            let (s, n) = v
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
            s / n as f64
        }
        None => v.iter().sum::<f64>() / v.len() as f64,
    }
}

pub fn rmse(a: &Volume, b: &Volume, mask: Option<&[bool]>) -> Result<f64> {
    a.check_same_grid(b)?;
    check_mask(a, mask)?;
    let sq: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).collect();
    if sq.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(masked_mean(&sq, mask).sqrt())
}

/// SSIM and RMSE per region after scaling both volumes with the reference
/// minimum and maximum.
pub fn evaluate_regions(volume: &Volume, reference: &Volume, masks: &RegionMasks) -> Result<Vec<MetricReport>> {
    volume.check_same_grid(reference)?;
    let (lo, hi) = reference.min_max();
    let a = volume.normalized_with(lo, hi);
    let b = reference.normalized_with(lo, hi);
    let map = ssim_map(&a, &b)?;
    Region::ALL
        .iter()
        .map(|&region| {
            let m = region.mask(masks);
            check_mask(&a, Some(m))?;
            Ok(MetricReport {
                region,
                ssim: masked_mean(&map, Some(m)),
                rmse: rmse(&a, &b, Some(m))?,
            })
        })
        .collect()
}

/// Rotation and translation of one motion matrix in reporting units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionComponents {
    pub translation_mm: Vec3,
    /// Angles about x, y, z in degrees with `R = Rz(z) Ry(y) Rx(x)`.
    pub euler_deg: Vec3,
    /// Set when the pitch is within 1e-9 rad of ±90°; then z is reported as 0
    /// and the whole in-plane rotation is assigned to x.
    pub gimbal_lock: bool,
}

pub fn euler_xyz(r: &Mat3) -> (Vec3, bool) {
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sy.asin();
    if (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-9 {
        let x = (-r[(1, 2)]).atan2(r[(1, 1)]);
        return (Vec3::new(x, pitch, 0.0), true);
    }
    let x = r[(2, 1)].atan2(r[(2, 2)]);
    let z = r[(1, 0)].atan2(r[(0, 0)]);
    (Vec3::new(x, pitch, z), false)
}

pub fn decompose_motion(m: &MotionSeries) -> Vec<MotionComponents> {
    m.matrices
        .iter()
        .map(|a| {
            let (e, gimbal_lock) = euler_xyz(&rotation_of(a));
            MotionComponents {
                translation_mm: translation_of(a) * 1e3,
                euler_deg: e.map(f64::to_degrees),
                gimbal_lock,
            }
        })
        .collect()
}

/// Per-axis RMSE over views of the decomposed series, averaged over axes.
pub fn motion_rmse(reference: &MotionSeries, test: &MotionSeries) -> Result<MotionError> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "motion series lengths differ: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let (a, b) = (decompose_motion(reference), decompose_motion(test));
    let n = a.len() as f64;
    let axis_mean = |f: &dyn Fn(&MotionComponents) -> Vec3| {
        let mut sq = Vec3::zeros();
        for (x, y) in a.iter().zip(&b) {
            sq += (f(x) - f(y)).map(|d| d * d);
        }
        sq.map(|s| (s / n).sqrt()).sum() / 3.0
    };
    Ok(MotionError {
        translation_mm: axis_mean(&|c| c.translation_mm),
        rotation_deg: axis_mean(&|c| c.euler_deg),
    })
}
