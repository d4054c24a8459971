//! Voxel-driven cone-beam back-projection with an optional per-view point
//! deformation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::image::ProjectionStack;
use crate::moco::ControlPoints3;
use crate::rotation::{transform_point, Affine4, Vec3};
use crate::volume::{Grid, Volume};

/// Maps a reference-frame voxel position to where that material sits at a
/// given view, before projection.
pub trait VoxelDeform: Sync {
    fn for_view(&self, view: usize, grid: &Grid) -> Result<ViewMap>;
}

/// Per-view point map, prepared once per view and then queried per voxel.
#[derive(Debug, Clone)]
pub enum ViewMap {
    Identity,
    Rigid(Affine4),
    Lattice(DisplacementLattice),
}

/// Displacements sampled exactly at every `step`-th voxel and trilinearly
/// interpolated in between. With `step == 1` every voxel is exact.
#[derive(Debug, Clone)]
pub struct DisplacementLattice {
    step: usize,
    nodes: [usize; 3],
    disp: Vec<Vec3>,
}

impl DisplacementLattice {
    pub fn build(grid: &Grid, step: usize, f: impl Fn(&Vec3) -> Result<Vec3> + Sync) -> Result<Self> {
        let step = step.max(1);
        let count = |n: usize| (n - 1).div_ceil(step) + 1;
        let nodes = [count(grid.dims[0]), count(grid.dims[1]), count(grid.dims[2])];
        let disp = (0..nodes[0] * nodes[1] * nodes[2])
            .into_par_iter()
            .map(|k| {
                let (i, j, l) = (k % nodes[0], (k / nodes[0]) % nodes[1], k / (nodes[0] * nodes[1]));
                let x = grid.origin + Vec3::new(i as f64, j as f64, l as f64) * (grid.spacing * step as f64);
                f(&x).map(|y| y - x)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DisplacementLattice { step, nodes, disp })
    }

    #[inline]
    fn node(&self, i: usize, j: usize, l: usize) -> Vec3 {
        self.disp[i + self.nodes[0] * (j + self.nodes[1] * l)]
    }

    #[inline]
    pub fn displacement(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let s = self.step;
        if s == 1 {
            return self.node(ix, iy, iz);
        }
        let (i, j, l) = (ix / s, iy / s, iz / s);
        let (fx, fy, fz) = (
            (ix % s) as f64 / s as f64,
            (iy % s) as f64 / s as f64,
            (iz % s) as f64 / s as f64,
        );
        let i1 = (i + 1).min(self.nodes[0] - 1);
        let j1 = (j + 1).min(self.nodes[1] - 1);
        let l1 = (l + 1).min(self.nodes[2] - 1);
        let lerp = |a: Vec3, b: Vec3, t: f64| a + (b - a) * t;
        let c00 = lerp(self.node(i, j, l), self.node(i1, j, l), fx);
        let c10 = lerp(self.node(i, j1, l), self.node(i1, j1, l), fx);
        let c01 = lerp(self.node(i, j, l1), self.node(i1, j, l1), fx);
        let c11 = lerp(self.node(i, j1, l1), self.node(i1, j1, l1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

/// The same rigid transform for every view.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRigid(pub Affine4);

impl VoxelDeform for ConstantRigid {
    fn for_view(&self, _view: usize, _grid: &Grid) -> Result<ViewMap> {
        Ok(ViewMap::Rigid(self.0))
    }
}

/// One rigid transform per view.
#[derive(Debug, Clone)]
pub struct PerViewRigid(pub Vec<Affine4>);

impl VoxelDeform for PerViewRigid {
    fn for_view(&self, view: usize, _grid: &Grid) -> Result<ViewMap> {
        self.0
            .get(view)
            .map(|t| ViewMap::Rigid(*t))
            .ok_or(Error::ViewIndex { index: view, len: self.0.len() })
    }
}

/// Rigid moving-least-squares field per view, from reference (`p`) to
/// current (`q`) joint-derived control points.
#[derive(Debug, Clone)]
pub struct MlsDeform {
    pub control_points: Vec<ControlPoints3>,
    pub epsilon: f64,
    pub grid_step: usize,
}

impl VoxelDeform for MlsDeform {
    fn for_view(&self, view: usize, grid: &Grid) -> Result<ViewMap> {
        let cps = self.control_points.get(view).ok_or(Error::ViewIndex {
            index: view,
            len: self.control_points.len(),
        })?;
        if cps.p == cps.q {
            return Ok(ViewMap::Identity);
        }
        cps.check_non_collinear()?;
        let lattice = DisplacementLattice::build(grid, self.grid_step, |x| Ok(cps.solve(x, self.epsilon)?.apply(x)))?;
        Ok(ViewMap::Lattice(lattice))
    }
}

/// Bilinear read with zero outside the pixel-center lattice.
#[inline(always)]
fn sample(data: &[f64], cols: usize, umax: f64, vmax: f64, u: f64, v: f64) -> f64 {
    if !(u >= 0.0 && v >= 0.0 && u <= umax && v <= vmax) {
        return 0.0;
    }
    // the upper neighbours are clamped so that the last row/column reads
    // its own value with zero fractional weight
    let (u0, v0) = (u as usize, v as usize);
    let (fu, fv) = (u - u0 as f64, v - v0 as f64);
    let du = usize::from((u0 as f64) < umax);
    let dv = if (v0 as f64) < vmax { cols } else { 0 };
    let i = v0 * cols + u0;
    let (a, b, c, d) = (data[i], data[i + du], data[i + dv], data[i + dv + du]);
    let top = a + fu * (b - a);
    let bot = c + fu * (d - c);
    top + fv * (bot - top)
}

/// Accumulates `Δβ (sid/w)² q(u, v)` over views at every voxel center, where
/// `(u, v, w)` is the homogeneous projection of the (optionally deformed)
/// voxel position. Views are summed in index order, so the result does not
/// depend on the thread count.
pub fn backproject(
    filtered: &ProjectionStack,
    geom: &ScanGeometry,
    grid: &Grid,
    deform: Option<&dyn VoxelDeform>,
) -> Result<Volume> {
    if filtered.views() != geom.n_proj || filtered.cols != geom.det_cols || filtered.rows != geom.det_rows {
        return Err(Error::Shape("filtered stack does not match geometry".into()));
    }
    let mut vol = Volume::zeros(*grid);
    let scale = geom.angular_increment * geom.sid * geom.sid;
    let [nx, ny, _] = grid.dims;
    let (cols, umax, vmax) = (filtered.cols, (filtered.cols - 1) as f64, (filtered.rows - 1) as f64);
    let step_x = Vec3::new(grid.spacing, 0.0, 0.0);
    for (i, image) in filtered.images.iter().enumerate() {
        let map = match deform {
            Some(d) => d.for_view(i, grid)?,
            None => ViewMap::Identity,
        };
        let p = geom.matrices[i].matrix();
        let proj = |y: &Vec3| p.fixed_view::<3, 3>(0, 0) * y + p.column(3);
        let data = &image.data[..];
        vol.data
            .par_chunks_mut(grid.slice_len())
            .enumerate()
            .for_each(|(iz, slice)| {
                for iy in 0..ny {
                    let row = &mut slice[nx * iy..nx * (iy + 1)];
                    let x0 = grid.position(0, iy, iz);
                    match &map {
                        ViewMap::Identity | ViewMap::Rigid(_) => {
                            // affine maps keep voxel rows straight: map the row
                            // start and step once, then walk in homogeneous
                            // detector coordinates
                            let (y0, dy) = match &map {
                                ViewMap::Rigid(t) => (transform_point(t, &x0), t.fixed_view::<3, 3>(0, 0) * step_x),
                                _ => (x0, step_x),
                            };
                            let h0 = proj(&y0);
                            let dh = p.fixed_view::<3, 3>(0, 0) * dy;
                            for (ix, acc) in row.iter_mut().enumerate() {
                                let t = ix as f64;
                                let hw = h0.z + t * dh.z;
                                if hw.abs() < 1e-12 {
                                    continue;
                                }
                                let inv = 1.0 / hw;
                                let val = sample(data, cols, umax, vmax, (h0.x + t * dh.x) * inv, (h0.y + t * dh.y) * inv);
                                *acc += scale * inv * inv * val;
                            }
                        }
                        ViewMap::Lattice(l) => {
                            for (ix, acc) in row.iter_mut().enumerate() {
                                let y = grid.position(ix, iy, iz) + l.displacement(ix, iy, iz);
                                let h = proj(&y);
                                if h.z.abs() < 1e-12 {
                                    continue;
                                }
                                let inv = 1.0 / h.z;
                                let val = sample(data, cols, umax, vmax, h.x * inv, h.y * inv);
                                *acc += scale * inv * inv * val;
                            }
                        }
                    }
                }
            });
    }
    Ok(vol)
}
