//! Analytic forward projection and voxelization of the leg phantom.

use rayon::prelude::*;

use crate::geometry::{ProjectionMatrix, ScanGeometry};
use crate::image::{Image2D, ProjectionStack};
use crate::phantom::model::{LegPhantom, Primitive};
use crate::rotation::{pose_inverse, rotation_of, transform_point, translation_of, Affine4, Mat3, Vec3};
use crate::volume::{Grid, Volume};

/// World poses of the two segment frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPose {
    pub thigh: Affine4,
    pub shank: Affine4,
}

impl LegPose {
    /// Applies a world-frame rigid transform to both segments.
    pub fn transformed(&self, t: &Affine4) -> LegPose {
        LegPose {
            thigh: t * self.thigh,
            shank: t * self.shank,
        }
    }
}

struct Placed<'a> {
    prims: &'a [Primitive],
    rot_t: Mat3,
    /// Source position in segment coordinates.
    origin: Vec3,
}

/// Line integral of attenuation along `o + t d` (unit `d`), overlap-aware.
fn line_integral(placed: &[Placed<'_>], dir: &Vec3, scratch: &mut Vec<(f64, f64, (u8, f64))>) -> f64 {
    scratch.clear();
    for seg in placed {
        let d = seg.rot_t * dir;
        for p in seg.prims {
            if let Some((t0, t1)) = p.intersect(&seg.origin, &d) {
                let (t0, t1) = (t0.max(0.0), t1.max(0.0));
                if t1 > t0 && p.mu != 0.0 {
                    scratch.push((t0, t1, p.rank()));
                }
            }
        }
    }
    match scratch.len() {
        0 => 0.0,
        1 => (scratch[0].1 - scratch[0].0) * scratch[0].2 .1,
        _ => {
            let mut cuts: Vec<f64> = scratch.iter().flat_map(|s| [s.0, s.1]).collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut sum = 0.0;
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                let mid = 0.5 * (a + b);
                let mut best: Option<(u8, f64)> = None;
                for s in scratch.iter() {
                    if s.0 <= mid && mid <= s.1 && best.map_or(true, |r| Primitive::outranks(s.2, r)) {
                        best = Some(s.2);
                    }
                }
                if let Some(r) = best {
                    sum += (b - a) * r.1;
                }
            }
            sum
        }
    }
}

/// Renders one projection: every pixel holds the line integral along its ray.
pub fn render_projection(phantom: &LegPhantom, leg: &LegPose, p: &ProjectionMatrix, geom: &ScanGeometry) -> Image2D {
    let (cols, rows) = (geom.det_cols, geom.det_rows);
    let source = p.source();
    let inv = p
        .matrix()
        .fixed_view::<3, 3>(0, 0)
        .into_owned()
        .try_inverse()
        .expect("full-rank projection matrix");
    let third: Vec3 = p.matrix().fixed_view::<1, 3>(2, 0).transpose();
    let placed: Vec<Placed> = [(&phantom.thigh, &leg.thigh), (&phantom.shank, &leg.shank)]
        .into_iter()
        .filter(|(prims, _)| !prims.is_empty())
        .map(|(prims, pose)| {
            let rot_t = rotation_of(pose).transpose();
            Placed {
                prims: prims.as_slice(),
                origin: rot_t * (source - translation_of(pose)),
                rot_t,
            }
        })
        .collect();

    let mut img = Image2D::zeros(cols, rows);
    if placed.is_empty() {
        return img;
    }
    img.data.par_chunks_mut(cols).enumerate().for_each(|(v, row)| {
        let mut scratch = Vec::with_capacity(32);
        for (u, px) in row.iter_mut().enumerate() {
            let mut d = inv * Vec3::new(u as f64, v as f64, 1.0);
            if third.dot(&d) < 0.0 {
                d = -d;
            }
            d /= d.norm();
            *px = line_integral(&placed, &d, &mut scratch);
        }
    });
    img
}

/// Renders view `i` of `geom` with leg pose `poses[i]`.
pub fn render_stack(phantom: &LegPhantom, poses: &[LegPose], geom: &ScanGeometry) -> ProjectionStack {
    assert_eq!(poses.len(), geom.n_proj, "one leg pose per view");
    let images = geom
        .matrices
        .iter()
        .zip(poses)
        .map(|(p, leg)| render_projection(phantom, leg, p, geom))
        .collect();
    ProjectionStack {
        cols: geom.det_cols,
        rows: geom.det_rows,
        pixel: geom.pixel,
        images,
    }
}

/// Point-sampled attenuation at voxel centers; the highest-ranked
/// primitive containing a center sets its value.
pub fn voxelize(phantom: &LegPhantom, leg: &LegPose, grid: &Grid) -> Volume {
    let inv = [pose_inverse(&leg.thigh), pose_inverse(&leg.shank)];
    let segs = [&phantom.thigh, &phantom.shank];
    let mut vol = Volume::zeros(*grid);
    let slice = grid.slice_len();
    vol.data.par_chunks_mut(slice).enumerate().for_each(|(z, out)| {
        for y in 0..grid.dims[1] {
            for x in 0..grid.dims[0] {
                let w = grid.position(x, y, z);
                let mut best: Option<(u8, f64)> = None;
                for (s, prims) in segs.iter().enumerate() {
                    let local = transform_point(&inv[s], &w);
                    for p in prims.iter() {
                        if best.map_or(true, |r| Primitive::outranks(p.rank(), r)) && p.contains(&local) {
                            best = Some(p.rank());
                        }
                    }
                }
                out[x + y * grid.dims[0]] = best.map_or(0.0, |r| r.1);
            }
        }
    });
    vol
}
