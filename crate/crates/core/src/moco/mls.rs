//! Rigid moving-least-squares deformations in 2D (detector images) and 3D
//! (voxel positions).
//!
//! Every query point gets its own best-fit rotation and translation under
//! inverse-squared-distance weights `w_j = 1 / (|p_j - x|^2 + eps)`.
//! In 2D the rotation angle has the closed form
//! `θ = arg Σ w_j conj(p̂_j) q̂_j` when points are read as complex numbers;
//! in 3D it comes from the SVD of the weighted cross-covariance.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::rotation::{exp_so3, smallest_index, Mat3, Vec3};

pub type Vec2 = Vector2<f64>;

/// Reference points `p` and their deformed positions `q` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints2 {
    pub p: Vec<Vec2>,
    pub q: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints3 {
    pub p: Vec<Vec3>,
    pub q: Vec<Vec3>,
}

impl ControlPoints2 {
    /// Position that `x` maps to. Returned as `x + offset` so that an
    /// undeformed set (`p == q`) reproduces `x` bit for bit.
    pub fn transform(&self, x: &Vec2, eps: f64) -> Vec2 {
        let m = self.p.len();
        let mut w = [0.0; 8];
        let mut ws: Vec<f64>;
        let w: &mut [f64] = if m <= 8 {
            &mut w[..m]
        } else {
            ws = vec![0.0; m];
            &mut ws
        };
        let mut sw = 0.0;
        let (mut ps, mut qs) = (Vec2::zeros(), Vec2::zeros());
        for j in 0..m {
            w[j] = 1.0 / ((self.p[j] - x).norm_squared() + eps);
            sw += w[j];
            ps += self.p[j] * w[j];
            qs += self.q[j] * w[j];
        }
        ps /= sw;
        qs /= sw;
        // Σ w conj(p̂) q̂
        let (mut re, mut im) = (0.0, 0.0);
        for j in 0..m {
            let (ph, qh) = (self.p[j] - ps, self.q[j] - qs);
            re += w[j] * (ph.x * qh.x + ph.y * qh.y);
            im += w[j] * (ph.x * qh.y - ph.y * qh.x);
        }
        let d = x - ps;
        let shift = qs - ps;
        if re == 0.0 && im == 0.0 {
            return x + shift;
        }
        let r = re.hypot(im);
        let (c, s) = (re / r, im / r);
        let rot_minus_i = Vec2::new((c - 1.0) * d.x - s * d.y, s * d.x + (c - 1.0) * d.y);
        x + rot_minus_i + shift
    }
}

/// Inverse warp: output pixel `x` takes the input value at `f(x)`, with
/// bilinear interpolation and clamp-to-edge outside the image.
pub fn mls_warp_2d(image: &Image2D, cps: &ControlPoints2, eps: f64) -> Image2D {
    let mut out = Image2D::zeros(image.cols, image.rows);
    let cols = image.cols;
    out.data.par_chunks_mut(cols).enumerate().for_each(|(v, row)| {
        for (u, px) in row.iter_mut().enumerate() {
            let src = cps.transform(&Vec2::new(u as f64, v as f64), eps);
            *px = image.bilinear_clamped(src.x, src.y);
        }
    });
    out
}

/// Rigid MLS solution at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mls3 {
    pub rotation: Mat3,
    pub p_star: Vec3,
    pub q_star: Vec3,
}

impl Mls3 {
    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * (x - self.p_star) + self.q_star
    }
}

impl ControlPoints3 {
    pub fn solve(&self, x: &Vec3, eps: f64) -> Result<Mls3> {
        let m = self.p.len();
        if m < 3 || self.q.len() != m {
            return Err(Error::DegenerateRotation);
        }
        let mut w = [0.0; 8];
        let mut ws: Vec<f64>;
        let w: &mut [f64] = if m <= 8 {
            &mut w[..m]
        } else {
            ws = vec![0.0; m];
            &mut ws
        };
        let mut sw = 0.0;
        let (mut ps, mut qs) = (Vec3::zeros(), Vec3::zeros());
        for j in 0..m {
            w[j] = 1.0 / ((self.p[j] - x).norm_squared() + eps);
            sw += w[j];
            ps += self.p[j] * w[j];
            qs += self.q[j] * w[j];
        }
        ps /= sw;
        qs /= sw;
        let mut h = Mat3::zeros();
        for j in 0..m {
            h += (self.p[j] - ps) * (self.q[j] - qs).transpose() * w[j];
        }
        let svd = h.svd(true, true);
        let s = svd.singular_values;
        let mut sorted = [s[0], s[1], s[2]];
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if !(sorted[1] > 1e-12 * sorted[0]) {
            return Err(Error::DegenerateRotation);
        }
        let u = svd.u.expect("svd u");
        let mut v = svd.v_t.expect("svd v_t").transpose();
        let mut r = v * u.transpose();
        if r.determinant() < 0.0 {
            v.column_mut(smallest_index(&s)).neg_mut();
            r = v * u.transpose();
        }
        Ok(Mls3 {
            rotation: polish_rotation(r, &h),
            p_star: ps,
            q_star: qs,
        })
    }

    /// Checks once that the reference points span a plane.
    pub fn check_non_collinear(&self) -> Result<()> {
        if self.p.len() < 3 || self.p.len() != self.q.len() {
            return Err(Error::DegenerateRotation);
        }
        let a = self.p[1] - self.p[0];
        let scale = self.p.iter().map(|x| (x - self.p[0]).norm()).fold(0.0, f64::max);
        let spread = self.p[2..]
            .iter()
            .map(|x| a.cross(&(x - self.p[0])).norm())
            .fold(0.0, f64::max);
        if !(spread > 1e-9 * scale * scale) {
            return Err(Error::DegenerateRotation);
        }
        Ok(())
    }
}

/// One Newton step on `tr(exp(δ) R H)`. The SVD of the rank-deficient
/// covariance that three control points produce leaves the optimality
/// condition (`R H` symmetric) violated at the 1e-12 level; this restores it
/// to rounding.
fn polish_rotation(r: Mat3, h: &Mat3) -> Mat3 {
    let k = r * h;
    let g = Vec3::new(k[(1, 2)] - k[(2, 1)], k[(2, 0)] - k[(0, 2)], k[(0, 1)] - k[(1, 0)]);
    let ks = (k + k.transpose()) * 0.5;
    let hess = Mat3::identity() * k.trace() - ks;
    match hess.try_inverse() {
        Some(inv) => exp_so3(&(inv * g)) * r,
        None => r,
    }
}

/// `f(x) = R (x - p*) + q*` with `R` the weighted Procrustes rotation.
pub fn mls_transform_3d(x: &Vec3, cps: &ControlPoints3, eps: f64) -> Result<Vec3> {
    cps.check_non_collinear()?;
    Ok(cps.solve(x, eps)?.apply(x))
}
