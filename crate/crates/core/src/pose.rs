//! Strapdown pose integration and two-view initialization.
//!
//! The body-frame velocity `v` is carried in the sensor frame of the
//! current sample. Per sample the local change is `Δl = [G d; 0 1]` with
//! `G = exp([ω Δt]x)` and `d = v Δt`, and the pose advances as
//! `S(t+1) = S(t) Δl(t)`, which is the same as applying the global change
//! `Δg = S Δl S⁻¹` from the left.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionMatrix, ScanGeometry};
use crate::imu::{ImuSeries, SyncMap};
use crate::rotation::{
    exp_so3, orthonormalize, pose, pose_inverse, rotation_of, smallest_index, transform_point, translation_of,
    Affine4, Mat3, Vec3,
};

/// Steps between polar re-orthonormalizations of the integrated rotation.
pub const REORTHONORMALIZE_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDelta {
    pub g: Mat3,
    pub d: Vec3,
}

impl LocalDelta {
    pub fn as_affine(&self) -> Affine4 {
        pose(&self.g, &self.d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub rate_hz: f64,
    pub poses: Vec<Affine4>,
    pub deltas: Vec<LocalDelta>,
    pub v0: Vec3,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Dead-reckons sensor poses from IMU samples. The track has one pose per
/// sample; the last sample only contributes the step beyond the track.
pub fn integrate_poses(series: &ImuSeries, s0: &Affine4, v0: &Vec3, g: &Vec3) -> Result<PoseTrack> {
    let n = series.len();
    let dt = series.dt();
    let mut poses = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n.saturating_sub(1));
    if n == 0 {
        return Ok(PoseTrack { rate_hz: series.rate_hz, poses, deltas, v0: *v0 });
    }
    let mut s = *s0;
    let mut v = *v0;
    poses.push(s);
    for t in 0..n - 1 {
        let (a, w) = (series.acc[t], series.gyro[t]);
        if !(a.iter().chain(w.iter()).all(|x| x.is_finite())) {
            return Err(Error::Integration { index: t });
        }
        let r = rotation_of(&s);
        let gm = exp_so3(&(w * dt));
        let g_local = r.transpose() * g;
        let d = v * dt;
        v = gm.transpose() * (v + (a + g_local) * dt);
        let delta = LocalDelta { g: gm, d };
        s *= delta.as_affine();
        if (t + 1) % REORTHONORMALIZE_EVERY == 0 {
            let fixed = orthonormalize(&rotation_of(&s));
            s.fixed_view_mut::<3, 3>(0, 0).copy_from(&fixed);
        }
        deltas.push(delta);
        poses.push(s);
    }
    Ok(PoseTrack {
        rate_hz: series.rate_hz,
        poses,
        deltas,
        v0: *v0,
    })
}

/// Four sensor-fixed points and where they appear in one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialModel {
    /// Sensor-frame coordinates (m); `points[0]` is the reference point.
    pub points: [Vec3; 4],
    pub observed: [(f64, f64); 4],
}

impl FiducialModel {
    /// Sensor origin plus the tips of the three axes at distance `arm`.
    pub fn canonical_points(arm: f64) -> [Vec3; 4] {
        [Vec3::zeros(), Vec3::x() * arm, Vec3::y() * arm, Vec3::z() * arm]
    }

    /// Projects `points` placed at `sensor_pose` to obtain the observations.
    pub fn observe(points: [Vec3; 4], sensor_pose: &Affine4, p: &ProjectionMatrix) -> Result<Self> {
        let mut observed = [(0.0, 0.0); 4];
        for (o, x) in observed.iter_mut().zip(&points) {
            *o = p.project(&transform_point(sensor_pose, x))?;
        }
        Ok(FiducialModel { points, observed })
    }

    fn check_layout(&self) -> Result<f64> {
        let b: Vec<Vec3> = (1..4).map(|j| self.points[j] - self.points[0]).collect();
        let vol = b[0].dot(&b[1].cross(&b[2]));
        let scale = b.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if !(scale > 0.0) || vol.abs() < 1e-9 * scale.powi(3) {
            return Err(Error::Conditioning("fiducial model points are coplanar".into()));
        }
        Ok(scale)
    }
}

/// Solver tolerances.
const MAX_ITERATIONS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-10;

struct Residuals {
    rays: [Vec3; 4],
    source: Vec3,
    /// Model edge vectors from point 0.
    b: [Vec3; 3],
    /// `b1 x b2` expressed in the edge basis.
    cross_coef: Vec3,
    inv_l2: f64,
}

impl Residuals {
    fn eval(&self, lam: &[f64; 4]) -> (DVector<f64>, DMatrix<f64>) {
        let x: Vec<Vec3> = (0..4).map(|j| self.source + self.rays[j] * lam[j]).collect();
        let a = [x[1] - x[0], x[2] - x[0], x[3] - x[0]];
        // da[j][m]: derivative of edge j with respect to depth m
        let da = |j: usize, m: usize| -> Vec3 {
            if m == 0 {
                -self.rays[0]
            } else if m == j + 1 {
                self.rays[m]
            } else {
                Vec3::zeros()
            }
        };
        let mut r = Vec::with_capacity(12);
        let mut jac: Vec<[f64; 4]> = Vec::with_capacity(12);
        let pairs = [(0, 1), (0, 2), (1, 2)];
        for j in 0..3 {
            r.push(a[j].norm_squared() - self.b[j].norm_squared());
            jac.push(std::array::from_fn(|m| 2.0 * a[j].dot(&da(j, m))));
        }
        for &(j, k) in &pairs {
            let e = a[j] - a[k];
            r.push(e.norm_squared() - (self.b[j] - self.b[k]).norm_squared());
            jac.push(std::array::from_fn(|m| 2.0 * e.dot(&(da(j, m) - da(k, m)))));
        }
        for &(j, k) in &pairs {
            r.push(a[j].dot(&a[k]) - self.b[j].dot(&self.b[k]));
            jac.push(std::array::from_fn(|m| da(j, m).dot(&a[k]) + a[j].dot(&da(k, m))));
        }
        let c = &self.cross_coef;
        let cr = a[0].cross(&a[1]) - (a[0] * c[0] + a[1] * c[1] + a[2] * c[2]);
        let dcr: Vec<Vec3> = (0..4)
            .map(|m| {
                da(0, m).cross(&a[1]) + a[0].cross(&da(1, m))
                    - (da(0, m) * c[0] + da(1, m) * c[1] + da(2, m) * c[2])
            })
            .collect();
        for i in 0..3 {
            r.push(cr[i]);
            jac.push(std::array::from_fn(|m| dcr[m][i]));
        }
        let rv = DVector::from_iterator(r.len(), r.iter().map(|v| v * self.inv_l2));
        let jm = DMatrix::from_fn(jac.len(), 4, |i, m| jac[i][m] * self.inv_l2);
        (rv, jm)
    }
}

/// Levenberg-Marquardt over the four ray depths.
fn solve_depths(res: &Residuals, start: [f64; 4]) -> ([f64; 4], f64) {
    let mut lam = start;
    let (mut r, mut j) = res.eval(&lam);
    let mut cost = r.norm();
    let mut mu = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if cost < RESIDUAL_TOL {
            break;
        }
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..4 {
                a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.lu().solve(&g) else {
                mu *= 10.0;
                continue;
            };
            let trial: [f64; 4] = std::array::from_fn(|i| lam[i] - step[i]);
            let (rt, jt2) = res.eval(&trial);
            let ct = rt.norm();
            if ct.is_finite() && ct < cost {
                lam = trial;
                r = rt;
                j = jt2;
                cost = ct;
                mu = (mu * 0.2).max(1e-15);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (lam, cost)
}

/// Least-squares rigid transform `x ≈ R b + t` (Kabsch).
pub fn kabsch(model: &[Vec3], world: &[Vec3]) -> Result<Affine4> {
    let n = model.len() as f64;
    let cb = model.iter().sum::<Vec3>() / n;
    let cx = world.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (b, x) in model.iter().zip(world) {
        h += (b - cb) * (x - cx).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[1] <= 1e-12 * sorted[0].max(1e-300) {
        return Err(Error::DegenerateRotation);
    }
    let mut v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(smallest_index(&s)).neg_mut();
        r = v * u.transpose();
    }
    Ok(pose(&r, &(cx - r * cb)))
}

/// Recovers the sensor pose from the four tracked fiducial projections.
pub fn estimate_initial_pose(fid: &FiducialModel, p: &ProjectionMatrix, geom: &ScanGeometry) -> Result<Affine4> {
    let sid = geom.sid;
    let scale = fid.check_layout()?;
    // collinear image points leave the depths unconstrained
    let pts: Vec<(f64, f64)> = fid.observed.to_vec();
    let (mu, mv) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / 4.0, b + p.1 / 4.0));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(u, v) in &pts {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::Conditioning("non-finite fiducial observation".into()));
        }
        sxx += (u - mu) * (u - mu);
        sxy += (u - mu) * (v - mv);
        syy += (v - mv) * (v - mv);
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let (l_max, l_min) = (0.5 * tr + disc, 0.5 * tr - disc);
    if !(l_max > 0.0) || l_min < 1e-10 * l_max {
        return Err(Error::Conditioning("projected fiducials are collinear".into()));
    }

    let mut rays = [Vec3::zeros(); 4];
    let mut source = Vec3::zeros();
    for (ray, &(u, v)) in rays.iter_mut().zip(&fid.observed) {
        let (o, d) = p.ray(u, v);
        source = o;
        *ray = d;
    }
    let b = [
        fid.points[1] - fid.points[0],
        fid.points[2] - fid.points[0],
        fid.points[3] - fid.points[0],
    ];
    let basis = Mat3::from_columns(&b);
    let cross_coef = basis
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("fiducial model points are coplanar".into()))?
        * b[0].cross(&b[1]);
    let res = Residuals {
        rays,
        source,
        b,
        cross_coef,
        inv_l2: 1.0 / (scale * scale),
    };

    // Start on the isocenter depth; retry with perturbed depth patterns
    // so a mirrored local minimum cannot trap the solver.
    let offsets = [0.0, 1.0, -1.0, 2.0, -2.0];
    let patterns: [[f64; 4]; 5] = [
        [0.0; 4],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -1.0, -1.0, -1.0],
    ];
    let mut best: Option<([f64; 4], f64)> = None;
    'search: for off in offsets {
        for pat in &patterns {
            let start: [f64; 4] = std::array::from_fn(|i| sid + off * 0.1 * sid + pat[i] * scale * 0.5);
            let (lam, cost) = solve_depths(&res, start);
            if best.map_or(true, |(_, c)| cost < c) {
                best = Some((lam, cost));
            }
            if cost < RESIDUAL_TOL {
                break 'search;
            }
        }
    }
    let (lam, cost) = best.expect("at least one start");
    if !(cost < RESIDUAL_TOL) {
        return Err(Error::InitializationFailed {
            iterations: MAX_ITERATIONS,
            residual: cost,
        });
    }
    let world: Vec<Vec3> = (0..4).map(|j| source + rays[j] * lam[j]).collect();
    kabsch(&fid.points, &world)
}

/// Velocity at sample 0 from the pose observed at projection 1.
///
/// Integrating with zero initial velocity displaces the pose at sample `n`
/// by exactly `n Δt` times the velocity error (expressed in the initial
/// sensor frame); the observed pose removes that displacement.
pub fn estimate_initial_velocity(
    s0: &Affine4,
    s_n_observed: &Affine4,
    series: &ImuSeries,
    sync: &SyncMap,
    g: &Vec3,
) -> Result<Vec3> {
    let n = sync.n();
    if n < 1 {
        return Err(Error::Sync("fewer than one IMU sample between the first two projections".into()));
    }
    if series.len() < n + 1 {
        return Err(Error::Coverage { needed: n, len: series.len() });
    }
    let track = integrate_poses(&series.prefix(n + 1), s0, &Vec3::zeros(), g)?;
    let inv0 = pose_inverse(s0);
    let t_prime = translation_of(&(inv0 * track.poses[n]));
    let t_obs = translation_of(&(inv0 * s_n_observed));
    Ok(-(t_prime - t_obs) / (n as f64 * series.dt()))
}

/// Writes `t,tx,ty,tz,qw,qx,qy,qz` rows (meters, unit quaternion).
pub fn write_pose_csv<W: Write>(track: &PoseTrack, mut w: W) -> Result<()> {
    writeln!(w, "t,tx,ty,tz,qw,qx,qy,qz")?;
    for (k, s) in track.poses.iter().enumerate() {
        let t = translation_of(s);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation_of(s)));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            k as f64 / track.rate_hz,
            t.x,
            t.y,
            t.z,
            q.w,
            q.i,
            q.j,
            q.k
        )?;
    }
    Ok(())
}

pub fn save_pose_csv(track: &PoseTrack, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pose_csv(track, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanConfig;
    use crate::imu::{gravity, simulate_imu, SensorMount, STANDARD_GRAVITY};
    use crate::phantom::SegmentKinematics;
    use crate::rotation::{angle_between, orthonormality_error, rot_x, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_series_keeps_initial_pose() {
        let r0 = rot_x(0.3) * rot_z(-0.2);
        let s0 = pose(&r0, &Vec3::new(0.1, 0.2, 0.3));
        let n = 500;
        let series = ImuSeries {
            rate_hz: 120.0,
            acc: vec![r0.transpose() * Vec3::new(0.0, STANDARD_GRAVITY, 0.0); n],
            gyro: vec![Vec3::zeros(); n],
        };
        let track = integrate_poses(&series, &s0, &Vec3::zeros(), &gravity()).unwrap();
        assert_eq!(track.len(), n);
        for s in &track.poses {
            assert!((s - s0).amax() < 1e-12);
        }
    }

    #[test]
    fn constant_acceleration_double_sum() {
        let (alpha, n) = (0.3, 50usize);
        let series = ImuSeries {
            rate_hz: 100.0,
            acc: vec![Vec3::new(alpha, STANDARD_GRAVITY, 0.0); n + 1],
            gyro: vec![Vec3::zeros(); n + 1],
        };
        let track = integrate_poses(&series, &Affine4::identity(), &Vec3::zeros(), &gravity()).unwrap();
        let dt = 0.01;
        let expected = alpha * dt * dt * (n * (n - 1)) as f64 / 2.0;
        assert!((translation_of(&track.poses[n]).x - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_sample_reports_index() {
        let mut series = ImuSeries {
            rate_hz: 100.0,
            acc: vec![Vec3::zeros(); 10],
            gyro: vec![Vec3::zeros(); 10],
        };
        series.gyro[4].y = f64::NAN;
        assert!(matches!(
            integrate_poses(&series, &Affine4::identity(), &Vec3::zeros(), &gravity()),
            Err(Error::Integration { index: 4 })
        ));
    }

    #[test]
    fn chained_local_deltas_equal_relative_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let series = ImuSeries {
            rate_hz: 50.0,
            acc: (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0))).collect(),
            gyro: (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-2.0..2.0))).collect(),
        };
        let s0 = pose(&exp_so3(&Vec3::new(0.5, -1.0, 0.2)), &Vec3::new(1.0, 2.0, 3.0));
        let track = integrate_poses(&series, &s0, &Vec3::new(0.1, 0.0, -0.2), &gravity()).unwrap();
        let mut prod = Affine4::identity();
        for d in &track.deltas {
            prod *= d.as_affine();
        }
        let rel = pose_inverse(&s0) * track.poses[n - 1];
        assert!((rel - prod).amax() < 1e-12);
    }

    #[test]
    fn orthonormality_over_2400_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 2400;
        let series = ImuSeries {
            rate_hz: 120.0,
            acc: vec![Vec3::zeros(); n],
            gyro: (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0))).collect(),
        };
        let track = integrate_poses(&series, &Affine4::identity(), &Vec3::zeros(), &gravity()).unwrap();
        for s in &track.poses {
            let r = rotation_of(s);
            assert!(orthonormality_error(&r) < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    /// Sensor following an analytic trajectory with fast rotation.
    fn analytic_kin(rate: f64, duration: f64) -> SegmentKinematics {
        let n = (duration * rate).round() as usize + 1;
        let mut rs = Vec::with_capacity(n);
        let mut os = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 / rate;
            rs.push(rot_z(3.0 * t) * rot_x((2.0 * t).sin()));
            os.push(Vec3::new(0.1 * t.sin(), 0.05 * (1.5 * t).cos(), 0.02 * t * t));
        }
        SegmentKinematics::from_frames(rate, rs, os)
    }

    fn end_errors(rate: f64) -> (f64, f64) {
        let kin = analytic_kin(rate, 2.0);
        let mount = SensorMount {
            p_sen: Vec3::new(0.01, -0.05, 0.02),
            ..SensorMount::shank_default()
        };
        let series = simulate_imu(&kin, &mount, &gravity());
        let (r0, p0) = mount.world_pose(&kin, 0);
        let (_, p1) = mount.world_pose(&kin, 1);
        let v0 = r0.transpose() * (p1 - p0) * rate;
        let track = integrate_poses(&series, &pose(&r0, &p0), &v0, &gravity()).unwrap();
        let k = kin.len() - 1;
        let (rk, pk) = mount.world_pose(&kin, k);
        (
            (translation_of(&track.poses[k]) - pk).norm(),
            angle_between(&rotation_of(&track.poses[k]), &rk),
        )
    }

    #[test]
    fn halving_the_step_reduces_error_quadratically() {
        let (p60, r60) = end_errors(60.0);
        let (p120, r120) = end_errors(120.0);
        assert!(p60 / p120 >= 3.5, "position {p60} -> {p120}");
        assert!(r60 / r120 >= 3.5, "rotation {r60} -> {r120}");
    }

    fn paper() -> (ScanGeometry, ProjectionMatrix) {
        let g = ScanConfig::paper().build().unwrap();
        let p = g.matrices[0];
        (g, p)
    }

    #[test]
    fn identity_pose_at_isocenter() {
        let (geom, p) = paper();
        let fid = FiducialModel::observe(FiducialModel::canonical_points(0.02), &Affine4::identity(), &p).unwrap();
        let s = estimate_initial_pose(&fid, &p, &geom).unwrap();
        assert!((s - Affine4::identity()).amax() < 1e-6);
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Affine4 {
        let r = exp_so3(&Vec3::from_fn(|_, _| rng.gen_range(-1.5..1.5)));
        let t = Vec3::from_fn(|_, _| rng.gen_range(-0.06..0.06));
        pose(&r, &t)
    }

    #[test]
    fn random_poses_round_trip() {
        let (geom, p) = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let truth = random_pose(&mut rng);
            let fid = FiducialModel::observe(FiducialModel::canonical_points(0.02), &truth, &p).unwrap();
            let s = estimate_initial_pose(&fid, &p, &geom).unwrap();
            assert!((translation_of(&s) - translation_of(&truth)).norm() < 1e-6);
            assert!(angle_between(&rotation_of(&s), &rotation_of(&truth)) < 1e-6);
        }
    }

    #[test]
    fn depth_shift_along_principal_ray_is_resolved() {
        let (geom, p) = paper();
        let (_, _, d) = geom.detector_axes(0);
        let base = pose(&exp_so3(&Vec3::new(0.2, 0.4, -0.1)), &Vec3::zeros());
        let shifted = pose(&rotation_of(&base), &(d * 0.01));
        for truth in [base, shifted] {
            let fid = FiducialModel::observe(FiducialModel::canonical_points(0.02), &truth, &p).unwrap();
            let s = estimate_initial_pose(&fid, &p, &geom).unwrap();
            let depth = (translation_of(&s) - translation_of(&truth)).dot(&d).abs();
            assert!(depth < 1e-4);
        }
    }

    #[test]
    fn collinear_observations_are_ill_conditioned() {
        let (geom, p) = paper();
        let fid = FiducialModel {
            points: FiducialModel::canonical_points(0.02),
            observed: [(10.0, 10.0), (20.0, 20.0), (30.0, 30.0), (40.0, 40.0)],
        };
        assert!(matches!(estimate_initial_pose(&fid, &p, &geom), Err(Error::Conditioning(_))));
    }

    fn velocity_setup(v_true_world: Vec3) -> (Affine4, ImuSeries, Vec<Affine4>, SyncMap) {
        // straight-line motion with constant rotation rate
        let rate = 120.0;
        let n = 40;
        let mut rs = vec![];
        let mut os = vec![];
        for k in 0..n {
            let t = k as f64 / rate;
            rs.push(rot_z(0.5 * t) * rot_x(0.2));
            os.push(Vec3::new(0.0, 0.5, 0.0) + v_true_world * t + Vec3::new(0.0, 0.0, 0.3 * t * t));
        }
        let kin = SegmentKinematics::from_frames(rate, rs, os);
        let mount = SensorMount::shank_default();
        let series = simulate_imu(&kin, &mount, &gravity());
        let truth: Vec<Affine4> = (0..n)
            .map(|k| {
                let (r, p) = mount.world_pose(&kin, k);
                pose(&r, &p)
            })
            .collect();
        let sync = crate::imu::build_sync_map(120.0, 31.0, 5).unwrap();
        (truth[0], series, truth, sync)
    }

    #[test]
    fn zero_true_velocity_gives_zero() {
        let rate = 120.0;
        let n = 20;
        let r0 = rot_x(0.4);
        let series = ImuSeries {
            rate_hz: rate,
            acc: vec![r0.transpose() * Vec3::new(0.0, STANDARD_GRAVITY, 0.0); n],
            gyro: vec![Vec3::zeros(); n],
        };
        let s0 = pose(&r0, &Vec3::new(0.0, 0.3, 0.0));
        let sync = crate::imu::build_sync_map(120.0, 31.0, 3).unwrap();
        let v = estimate_initial_velocity(&s0, &s0, &series, &sync, &gravity()).unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn velocity_error_enters_translation_n_times() {
        let (s0, series, _, _) = velocity_setup(Vec3::new(0.02, -0.01, 0.03));
        let e = Vec3::new(1e-3, -2e-3, 0.5e-3);
        let base = integrate_poses(&series, &s0, &Vec3::zeros(), &gravity()).unwrap();
        let off = integrate_poses(&series, &s0, &e, &gravity()).unwrap();
        let inv = pose_inverse(&s0);
        let n = 4;
        let diff = translation_of(&(inv * off.poses[n])) - translation_of(&(inv * base.poses[n]));
        assert!((diff - e * (n as f64 / 120.0)).amax() < 1e-12);
    }

    #[test]
    fn recovers_nonzero_initial_velocity() {
        let (s0, series, truth, sync) = velocity_setup(Vec3::new(0.02, -0.01, 0.03));
        let v = estimate_initial_velocity(&s0, &truth[sync.n()], &series, &sync, &gravity()).unwrap();
        let r0 = rotation_of(&s0);
        let expected = r0.transpose() * (translation_of(&truth[1]) - translation_of(&truth[0])) * 120.0;
        assert!((v - expected).amax() < 1e-9, "{v} vs {expected}");
    }

    #[test]
    fn kabsch_recovers_rigid_transform() {
        let t = pose(&exp_so3(&Vec3::new(0.3, -0.8, 1.9)), &Vec3::new(0.1, -0.2, 0.3));
        let model = FiducialModel::canonical_points(0.05);
        let world: Vec<Vec3> = model.iter().map(|x| transform_point(&t, x)).collect();
        assert!((kabsch(&model, &world).unwrap() - t).amax() < 1e-12);
    }
}
