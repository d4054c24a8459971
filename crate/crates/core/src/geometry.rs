//! C-arm scan geometry: circular short-scan trajectories, 3x4 projection
//! matrices, point projection and pixel rays.
//!
//! World frame is right-handed with `y` pointing up; the gantry rotates about
//! the vertical axis through the rotation center. All lengths are meters,
//! angles radians; detector coordinates are pixels. Configuration values are
//! given in mm / degrees and converted once in [`ScanConfig::build`].
//!
//! Detector orientation: `u` (columns) runs tangentially to the trajectory,
//! `v` (rows) runs axially downward, so image row 0 is the top of the leg.

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{rot_y, Affine4, Mat3, Vec3};

/// Scan parameters in the units a C-arm datasheet uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub n_proj: usize,
    pub angular_increment_deg: f64,
    pub sdd_mm: f64,
    pub sid_mm: f64,
    pub det_cols: usize,
    pub det_rows: usize,
    pub pixel_mm: f64,
    pub rotation_center_mm: [f64; 3],
    pub frame_rate_hz: f64,
}

impl ScanConfig {
    /// Full clinical protocol: 248 views at 0.8 deg, 620x480 px detector.
    pub fn paper() -> Self {
        ScanConfig {
            n_proj: 248,
            angular_increment_deg: 0.8,
            sdd_mm: 1198.0,
            sid_mm: 780.0,
            det_cols: 620,
            det_rows: 480,
            pixel_mm: 0.616,
            rotation_center_mm: [0.0; 3],
            frame_rate_hz: 31.0,
        }
    }

    /// Half resolution in every direction; same distances and scan duration.
    pub fn desk() -> Self {
        ScanConfig {
            n_proj: 124,
            angular_increment_deg: 1.6,
            sdd_mm: 1198.0,
            sid_mm: 780.0,
            det_cols: 310,
            det_rows: 240,
            pixel_mm: 1.232,
            rotation_center_mm: [0.0; 3],
            frame_rate_hz: 15.5,
        }
    }

    pub fn with_rotation_center(mut self, center: &Vec3) -> Self {
        self.rotation_center_mm = [center.x * 1e3, center.y * 1e3, center.z * 1e3];
        self
    }

    /// Converts to SI and builds one projection matrix per view.
    pub fn build(&self) -> Result<ScanGeometry> {
        build_circular_trajectory(self)
    }
}

/// 3x4 matrix mapping homogeneous world points (m) to homogeneous pixels.
///
/// Matrices built here are normalized so that the third row is
/// `(d^T, -d.s)` with `d` the unit principal direction; the homogeneous `w`
/// of a point is then its depth along the principal ray in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

/// Intrinsic / extrinsic parameters recovered from a projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Focal lengths in pixels (`sdd / pixel`).
    pub focal_px: (f64, f64),
    pub principal_point: (f64, f64),
    pub skew: f64,
    /// Rows: detector u axis, detector v axis, principal direction.
    pub rotation: Mat3,
    pub source: Vec3,
}

impl ProjectionMatrix {
    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    #[inline]
    pub fn project_homogeneous(&self, x: &Vec3) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(
            m[(0, 0)] * x.x + m[(0, 1)] * x.y + m[(0, 2)] * x.z + m[(0, 3)],
            m[(1, 0)] * x.x + m[(1, 1)] * x.y + m[(1, 2)] * x.z + m[(1, 3)],
            m[(2, 0)] * x.x + m[(2, 1)] * x.y + m[(2, 2)] * x.z + m[(2, 3)],
        )
    }

    /// Projects a world point to pixel coordinates `(u, v)`.
    pub fn project(&self, x: &Vec3) -> Result<(f64, f64)> {
        let h = self.project_homogeneous(x);
        if h.z.abs() < 1e-12 {
            return Err(Error::DegenerateProjection(h.z));
        }
        Ok((h.x / h.z, h.y / h.z))
    }

    fn left(&self) -> Mat3 {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera (X-ray source) center: the right null vector of the matrix.
    pub fn source(&self) -> Vec3 {
        let p4: Vec3 = self.0.column(3).into();
        -(self.left().try_inverse().expect("full-rank projection matrix") * p4)
    }

    /// Ray from the source through pixel `(u, v)`, direction normalized and
    /// oriented toward the detector.
    pub fn ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let inv = self.left().try_inverse().expect("full-rank projection matrix");
        let mut dir = inv * Vec3::new(u, v, 1.0);
        // points in front of the source have w > 0
        let w = self.0.row(2).fixed_columns::<3>(0).transpose().dot(&dir);
        if w < 0.0 {
            dir = -dir;
        }
        (self.source(), dir.normalize())
    }

    /// `P * M`: projects points expressed in a moved frame.
    pub fn compose(&self, m: &Affine4) -> ProjectionMatrix {
        ProjectionMatrix(self.0 * m)
    }

    /// RQ decomposition of the left 3x3 block into intrinsics and rotation.
    pub fn decompose(&self) -> Decomposition {
        let m = self.left();
        // RQ via QR of the row-reversed transpose.
        let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        let qr = (flip * m).transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let mut k = flip * r.transpose() * flip;
        let mut rot = flip * q.transpose();
        // make the diagonal of K positive
        for i in 0..3 {
            if k[(i, i)] < 0.0 {
                k.column_mut(i).neg_mut();
                rot.row_mut(i).neg_mut();
            }
        }
        let scale = k[(2, 2)];
        k /= scale;
        if rot.determinant() < 0.0 {
            rot = -rot;
        }
        Decomposition {
            focal_px: (k[(0, 0)], k[(1, 1)]),
            principal_point: (k[(0, 2)], k[(1, 2)]),
            skew: k[(0, 1)],
            rotation: rot,
            source: self.source(),
        }
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("projection matrix has non-finite entries".into()));
        }
        let p = ProjectionMatrix(Matrix3x4::from_row_slice(v));
        if p.left().determinant().abs() < 1e-12 {
            return Err(Error::Config("projection matrix left 3x3 block is singular".into()));
        }
        Ok(p)
    }
}

/// A circular scan: trajectory description plus one matrix per view.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    pub n_proj: usize,
    /// Radians between consecutive views.
    pub angular_increment: f64,
    /// Source-detector distance (m).
    pub sdd: f64,
    /// Source-isocenter distance (m).
    pub sid: f64,
    pub det_cols: usize,
    pub det_rows: usize,
    /// Isotropic pixel pitch (m).
    pub pixel: f64,
    pub rotation_center: Vec3,
    pub frame_rate_hz: f64,
    pub matrices: Vec<ProjectionMatrix>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Builds the projection matrices of a horizontal circular trajectory.
pub fn build_circular_trajectory(cfg: &ScanConfig) -> Result<ScanGeometry> {
    positive("angular_increment_deg", cfg.angular_increment_deg)?;
    positive("sdd_mm", cfg.sdd_mm)?;
    positive("sid_mm", cfg.sid_mm)?;
    positive("pixel_mm", cfg.pixel_mm)?;
    positive("frame_rate_hz", cfg.frame_rate_hz)?;
    if cfg.n_proj == 0 || cfg.det_cols == 0 || cfg.det_rows == 0 {
        return Err(Error::Config("view and detector pixel counts must be positive".into()));
    }
    if cfg.sdd_mm <= cfg.sid_mm {
        return Err(Error::Config(format!(
            "source-detector distance ({}) must exceed source-isocenter distance ({})",
            cfg.sdd_mm, cfg.sid_mm
        )));
    }
    if cfg.rotation_center_mm.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("rotation center must be finite".into()));
    }

    let mut geom = ScanGeometry {
        n_proj: cfg.n_proj,
        angular_increment: cfg.angular_increment_deg.to_radians(),
        sdd: cfg.sdd_mm * 1e-3,
        sid: cfg.sid_mm * 1e-3,
        det_cols: cfg.det_cols,
        det_rows: cfg.det_rows,
        pixel: cfg.pixel_mm * 1e-3,
        rotation_center: Vec3::from(cfg.rotation_center_mm) * 1e-3,
        frame_rate_hz: cfg.frame_rate_hz,
        matrices: Vec::with_capacity(cfg.n_proj),
    };
    for i in 0..cfg.n_proj {
        let p = geom.ideal_matrix(i);
        geom.matrices.push(p);
    }
    Ok(geom)
}

impl ScanGeometry {
    /// Gantry angle of view `i`.
    pub fn view_angle(&self, i: usize) -> f64 {
        i as f64 * self.angular_increment
    }

    /// Detector axes at view `i`: (u, v, principal direction).
    pub fn detector_axes(&self, i: usize) -> (Vec3, Vec3, Vec3) {
        let r = rot_y(self.view_angle(i));
        let e_u = r * Vec3::z();
        let e_v = -Vec3::y();
        let d = r * Vec3::x();
        (e_u, e_v, d)
    }

    pub fn source_position(&self, i: usize) -> Vec3 {
        let (_, _, d) = self.detector_axes(i);
        self.rotation_center - self.sid * d
    }

    /// Principal point in pixels: the geometric detector center.
    pub fn principal_point(&self) -> (f64, f64) {
        (
            (self.det_cols as f64 - 1.0) * 0.5,
            (self.det_rows as f64 - 1.0) * 0.5,
        )
    }

    fn ideal_matrix(&self, i: usize) -> ProjectionMatrix {
        let (e_u, e_v, d) = self.detector_axes(i);
        let s = self.source_position(i);
        let f = self.sdd / self.pixel;
        let (cu, cv) = self.principal_point();
        let k = Matrix3::new(f, 0.0, cu, 0.0, f, cv, 0.0, 0.0, 1.0);
        let rc = Matrix3::from_rows(&[e_u.transpose(), e_v.transpose(), d.transpose()]);
        let mut ext = Matrix3x4::zeros();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&rc);
        ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rc * s)));
        ProjectionMatrix(k * ext)
    }

    pub fn matrix(&self, i: usize) -> Result<&ProjectionMatrix> {
        self.matrices.get(i).ok_or(Error::ViewIndex {
            index: i,
            len: self.matrices.len(),
        })
    }

    /// Source position and unit direction toward pixel `(u, v)` of view `i`.
    pub fn pixel_ray(&self, i: usize, u: f64, v: f64) -> Result<(Vec3, Vec3)> {
        Ok(self.matrix(i)?.ray(u, v))
    }

    /// Full fan angle in the trajectory plane.
    pub fn fan_angle(&self) -> f64 {
        2.0 * ((self.det_cols as f64 * self.pixel * 0.5) / self.sdd).atan()
    }

    /// Total scanned arc: one angular increment per view.
    pub fn total_arc(&self) -> f64 {
        self.n_proj as f64 * self.angular_increment
    }

    pub fn scan_duration_s(&self) -> f64 {
        self.n_proj as f64 / self.frame_rate_hz
    }

    /// Copy with the projection matrices replaced (e.g. motion-corrected).
    pub fn with_matrices(&self, matrices: Vec<ProjectionMatrix>) -> Result<ScanGeometry> {
        if matrices.len() != self.n_proj {
            return Err(Error::Config(format!(
                "expected {} projection matrices, got {}",
                self.n_proj,
                matrices.len()
            )));
        }
        Ok(ScanGeometry {
            matrices,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> GeometryJson {
        GeometryJson {
            n_proj: self.n_proj,
            angular_increment_deg: self.angular_increment.to_degrees(),
            sdd_mm: self.sdd * 1e3,
            sid_mm: self.sid * 1e3,
            det_cols: self.det_cols,
            det_rows: self.det_rows,
            pixel_mm: self.pixel * 1e3,
            rotation_center_mm: [
                self.rotation_center.x * 1e3,
                self.rotation_center.y * 1e3,
                self.rotation_center.z * 1e3,
            ],
            frame_rate_hz: self.frame_rate_hz,
            world_unit: "m".into(),
            matrices: self.matrices.iter().map(|p| p.to_row_major()).collect(),
        }
    }

    pub fn from_json(doc: &GeometryJson) -> Result<ScanGeometry> {
        if doc.world_unit != "m" {
            return Err(Error::Config(format!(
                "unsupported projection-matrix world unit `{}`",
                doc.world_unit
            )));
        }
        let cfg = ScanConfig {
            n_proj: doc.n_proj,
            angular_increment_deg: doc.angular_increment_deg,
            sdd_mm: doc.sdd_mm,
            sid_mm: doc.sid_mm,
            det_cols: doc.det_cols,
            det_rows: doc.det_rows,
            pixel_mm: doc.pixel_mm,
            rotation_center_mm: doc.rotation_center_mm,
            frame_rate_hz: doc.frame_rate_hz,
        };
        let base = cfg.build()?;
        let matrices = doc
            .matrices
            .iter()
            .map(ProjectionMatrix::from_row_major)
            .collect::<Result<Vec<_>>>()?;
        base.with_matrices(matrices)
    }
}

/// JSON document for a scan geometry. Scalars in mm / degrees; matrices
/// are row-major 12-number arrays mapping world meters to pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryJson {
    pub n_proj: usize,
    pub angular_increment_deg: f64,
    pub sdd_mm: f64,
    pub sid_mm: f64,
    pub det_cols: usize,
    pub det_rows: usize,
    pub pixel_mm: f64,
    pub rotation_center_mm: [f64; 3],
    pub frame_rate_hz: f64,
    pub world_unit: String,
    pub matrices: Vec<[f64; 12]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> ScanGeometry {
        ScanConfig::desk()
            .with_rotation_center(&Vec3::new(0.1, 0.45, -0.02))
            .build()
            .unwrap()
    }

    /// Independent pinhole model: similar triangles on the explicit source /
    /// detector layout, no matrices involved.
    fn pinhole(geom: &ScanGeometry, i: usize, x: &Vec3) -> (f64, f64) {
        let beta = i as f64 * geom.angular_increment;
        let d = Vec3::new(beta.cos(), 0.0, -beta.sin());
        let e_u = Vec3::new(beta.sin(), 0.0, beta.cos());
        let e_v = Vec3::new(0.0, -1.0, 0.0);
        let s = geom.rotation_center - geom.sid * d;
        let rel = x - s;
        let depth = rel.dot(&d);
        let scale = geom.sdd / depth;
        let (cu, cv) = (
            (geom.det_cols as f64 - 1.0) / 2.0,
            (geom.det_rows as f64 - 1.0) / 2.0,
        );
        (
            cu + rel.dot(&e_u) * scale / geom.pixel,
            cv + rel.dot(&e_v) * scale / geom.pixel,
        )
    }

    #[test]
    fn paper_profile_spans_198_4_degrees() {
        let g = ScanConfig::paper().build().unwrap();
        assert_eq!(g.matrices.len(), 248);
        assert!((g.total_arc().to_degrees() - 198.4).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let mut cfg = ScanConfig::desk();
        cfg.pixel_mm = 0.0;
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
        let mut cfg = ScanConfig::desk();
        cfg.sdd_mm = 700.0;
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
        let mut cfg = ScanConfig::desk();
        cfg.n_proj = 0;
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn rotation_center_projects_to_detector_center() {
        let g = desk();
        let (cu, cv) = g.principal_point();
        for p in &g.matrices {
            let (u, v) = p.project(&g.rotation_center).unwrap();
            assert!((u - cu).abs() < 1e-9 && (v - cv).abs() < 1e-9);
        }
    }

    #[test]
    fn axial_offset_at_view_zero_matches_pinhole() {
        let g = desk();
        let x = g.rotation_center + Vec3::new(0.0, 0.0, 0.010);
        let (u, v) = g.matrices[0].project(&x).unwrap();
        let (ou, ov) = pinhole(&g, 0, &x);
        let (cu, cv) = g.principal_point();
        let expected = 10.0 * 1198.0 / (780.0 * 1.232);
        assert!((u - ou).abs() < 1e-9 && (v - ov).abs() < 1e-9);
        assert!((u - cu - expected).abs() < 1e-9);
        assert!((v - cv).abs() < 1e-9);
    }

    #[test]
    fn points_on_central_ray_share_a_pixel() {
        let g = desk();
        let s = g.source_position(5);
        let (cu, cv) = g.principal_point();
        for t in [0.1, 0.37, 0.9] {
            let x = s + t * (g.rotation_center - s);
            let (u, v) = g.matrices[5].project(&x).unwrap();
            assert!((u - cu).abs() < 1e-9 && (v - cv).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_projection_in_principal_plane() {
        let g = desk();
        let s = g.source_position(0);
        let x = s + Vec3::new(0.0, 0.1, 0.3); // d = +x at view 0
        assert!(matches!(
            g.matrices[0].project(&x),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn random_points_agree_with_pinhole_at_view_17() {
        let g = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = g.rotation_center
                + Vec3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                );
            let (u, v) = g.matrices[17].project(&x).unwrap();
            let (ou, ov) = pinhole(&g, 17, &x);
            assert!((u - ou).abs() < 1e-6 && (v - ov).abs() < 1e-6);
        }
    }

    #[test]
    fn center_pixel_ray_hits_rotation_center() {
        let g = desk();
        let (cu, cv) = g.principal_point();
        for i in [0, 40, 123] {
            let (o, d) = g.pixel_ray(i, cu, cv).unwrap();
            let rel = g.rotation_center - o;
            let dist = (rel - rel.dot(&d) * d).norm();
            assert!(dist < 1e-9, "view {i}: {dist}");
        }
        assert!(matches!(g.pixel_ray(124, 0.0, 0.0), Err(Error::ViewIndex { .. })));
    }

    #[test]
    fn corner_pixel_ray_angle() {
        let g = desk();
        let (cu, cv) = g.principal_point();
        let (_, d_center) = g.pixel_ray(3, cu, cv).unwrap();
        let (_, d_corner) = g.pixel_ray(3, 0.0, 0.0).unwrap();
        let angle = d_center.dot(&d_corner).clamp(-1.0, 1.0).acos();
        let half_diag = (cu * cu + cv * cv).sqrt() * g.pixel;
        let expected = (half_diag / g.sdd).atan();
        assert!((angle - expected).abs() < 1e-12);
    }

    #[test]
    fn ray_round_trip_on_random_pixels() {
        let g = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in (0..g.n_proj).step_by(7) {
            for _ in 0..1000 {
                let u = rng.gen_range(0.0..g.det_cols as f64);
                let v = rng.gen_range(0.0..g.det_rows as f64);
                let t = rng.gen_range(0.05..g.sdd);
                let (o, d) = g.pixel_ray(i, u, v).unwrap();
                let (pu, pv) = g.matrices[i].project(&(o + t * d)).unwrap();
                assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn decomposition_recovers_distances() {
        let g = desk();
        for (i, p) in g.matrices.iter().enumerate() {
            let dec = p.decompose();
            let sid = (dec.source - g.rotation_center).norm();
            let sdd = dec.focal_px.0 * g.pixel;
            assert!(((sid - g.sid) / g.sid).abs() < 1e-6, "view {i}");
            assert!(((sdd - g.sdd) / g.sdd).abs() < 1e-6, "view {i}");
            assert!(((dec.focal_px.1 - dec.focal_px.0) / dec.focal_px.0).abs() < 1e-9);
            assert!(dec.skew.abs() < 1e-6);
            let (e_u, e_v, d) = g.detector_axes(i);
            assert!((dec.rotation.row(0).transpose() - e_u).amax() < 1e-9);
            assert!((dec.rotation.row(1).transpose() - e_v).amax() < 1e-9);
            assert!((dec.rotation.row(2).transpose() - d).amax() < 1e-9);
        }
    }

    #[test]
    fn consecutive_views_differ_by_one_increment() {
        let g = desk();
        let c = g.rotation_center;
        // T = translate(c) * rot_y(-inc) * translate(-c) maps view i+1 onto view i
        let rot = rot_y(-g.angular_increment);
        let t = pose(&Mat3::identity(), &c) * pose(&rot, &Vec3::zeros()) * pose(&Mat3::identity(), &(-c));
        for i in 0..g.n_proj - 1 {
            let lhs = g.matrices[i + 1].0;
            let rhs = g.matrices[i].0 * t;
            assert!((lhs - rhs).amax() < 1e-9 * lhs.amax(), "view {i}");
        }
    }

    #[test]
    fn json_round_trip() {
        let g = desk();
        let doc = g.to_json();
        let text = serde_json::to_string(&doc).unwrap();
        let back = ScanGeometry::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.n_proj, g.n_proj);
        for (a, b) in back.matrices.iter().zip(&g.matrices) {
            assert!((a.0 - b.0).amax() < 1e-12);
        }
        assert!((back.sid - g.sid).abs() < 1e-15);
    }
}
