//! Inertial sensor simulation: ideal signals from segment kinematics,
//! white Gaussian noise, and IMU / projection time synchronization.
//!
//! Sample `k` describes the interval from frame `k` to frame `k + 1`:
//! the angular rate is evaluated at the interval midpoint and the specific
//! force uses the second difference centered on frame `k + 1`, resolved in
//! the sensor frame at `k`. With this convention the strapdown recursion in
//! [`crate::pose`] reproduces the sampled trajectory up to the rotation
//! exponential's third-order term. The final sample has no successor; it
//! repeats the previous rate and uses one-sided differences.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::SegmentKinematics;
use crate::rotation::{exp_so3, log_so3, vee, Mat3, Vec3};

/// Standard gravity (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Gravity in the world frame (y up).
pub fn gravity() -> Vec3 {
    Vec3::new(0.0, -STANDARD_GRAVITY, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Thigh,
    Shank,
}

/// Rigid attachment of an IMU to a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorMount {
    pub segment: Segment,
    /// Sensor origin in segment coordinates (m).
    pub p_sen: Vec3,
    /// Sensor axes in segment coordinates.
    pub r_off: Mat3,
}

impl SensorMount {
    /// On the tibia axis, 14 cm below the knee.
    pub fn shank_default() -> Self {
        SensorMount {
            segment: Segment::Shank,
            p_sen: Vec3::new(0.0, -0.14, 0.0),
            r_off: Mat3::identity(),
        }
    }

    /// On the femur axis, 25 cm below the hip.
    pub fn thigh_default() -> Self {
        SensorMount {
            segment: Segment::Thigh,
            p_sen: Vec3::new(0.0, -0.25, 0.0),
            r_off: Mat3::identity(),
        }
    }

    /// Sensor orientation and position at frame `k`.
    pub fn world_pose(&self, kin: &SegmentKinematics, k: usize) -> (Mat3, Vec3) {
        (kin.rotation[k] * self.r_off, kin.origin[k] + kin.rotation[k] * self.p_sen)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSeries {
    pub rate_hz: f64,
    /// Specific force in sensor coordinates (m/s^2).
    pub acc: Vec<Vec3>,
    /// Angular rate in sensor coordinates (rad/s).
    pub gyro: Vec<Vec3>,
}

impl ImuSeries {
    pub fn len(&self) -> usize {
        self.acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// First `n` samples.
    pub fn prefix(&self, n: usize) -> ImuSeries {
        ImuSeries {
            rate_hz: self.rate_hz,
            acc: self.acc[..n.min(self.len())].to_vec(),
            gyro: self.gyro[..n.min(self.len())].to_vec(),
        }
    }
}

/// Ideal accelerometer and gyroscope signals of a mounted sensor.
pub fn simulate_imu(kin: &SegmentKinematics, mount: &SensorMount, g: &Vec3) -> ImuSeries {
    let n = kin.len();
    let dt = kin.dt();
    let rs: Vec<Mat3> = kin.rotation.iter().map(|r| r * mount.r_off).collect();
    let mut acc = Vec::with_capacity(n);
    let mut gyro = Vec::with_capacity(n);
    for k in 0..n {
        let j = (k + 1).min(n - 1);
        let p_ddot = kin.origin_ddot[j] + kin.rotation_ddot[j] * mount.p_sen;
        acc.push(rs[k].transpose() * (p_ddot - g));
        if k + 1 < n {
            let half = exp_so3(&(0.5 * log_so3(&(rs[k].transpose() * rs[k + 1]))));
            let r_mid = rs[k] * half;
            let r_dot = (rs[k + 1] - rs[k]) / dt;
            gyro.push(vee(&(r_mid.transpose() * r_dot)));
        } else {
            let last = gyro.last().copied().unwrap_or_else(Vec3::zeros);
            gyro.push(last);
        }
    }
    ImuSeries {
        rate_hz: kin.rate_hz,
        acc,
        gyro,
    }
}

/// Accelerometer noise RMS of the reference sensor: 1.8 milli-g per axis.
pub const RMS_ACC_BASE: f64 = 1.8e-3 * STANDARD_GRAVITY;
/// Gyroscope noise RMS of the reference sensor: 0.07 deg/s per axis.
pub const RMS_GYRO_BASE_DEG: f64 = 0.07;

/// White-noise levels as powers of ten below the reference sensor. `None`
/// leaves that channel noise-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub f_a: Option<u32>,
    pub f_g: Option<u32>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(f_a: u32, f_g: u32, seed: u64) -> Self {
        NoiseSpec {
            f_a: Some(f_a),
            f_g: Some(f_g),
            seed,
        }
    }

    pub fn sigma_acc(&self) -> Option<f64> {
        self.f_a.map(|f| RMS_ACC_BASE / 10f64.powi(f as i32))
    }

    /// Gyroscope sigma in rad/s.
    pub fn sigma_gyro(&self) -> Option<f64> {
        self.f_g
            .map(|f| RMS_GYRO_BASE_DEG.to_radians() / 10f64.powi(f as i32))
    }
}

fn add_channel(samples: &mut [Vec3], sigma: f64, seed: u64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for s in samples {
        for i in 0..3 {
            s[i] += normal.sample(&mut rng);
        }
    }
}

/// Returns a copy with i.i.d. zero-mean Gaussian noise on every axis.
/// Accelerometer and gyroscope draw from independent streams of the seed.
pub fn add_noise(series: &ImuSeries, spec: &NoiseSpec) -> ImuSeries {
    let mut out = series.clone();
    if let Some(s) = spec.sigma_acc() {
        add_channel(&mut out.acc, s, spec.seed, 0);
    }
    if let Some(s) = spec.sigma_gyro() {
        add_channel(&mut out.gyro, s, spec.seed, 1);
    }
    out
}

/// Projection index to IMU sample index mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncMap {
    pub imu_rate_hz: f64,
    pub proj_rate_hz: f64,
    pub indices: Vec<usize>,
}

impl SyncMap {
    /// IMU samples between the first two projections.
    pub fn n(&self) -> usize {
        self.indices.get(1).copied().unwrap_or(0) - self.indices[0]
    }

    pub fn last(&self) -> usize {
        *self.indices.last().expect("non-empty sync map")
    }

    /// Fails unless every mapped sample exists in a series of length `len`.
    pub fn check_coverage(&self, len: usize) -> Result<()> {
        let needed = self.last();
        if needed >= len {
            return Err(Error::Coverage { needed, len });
        }
        Ok(())
    }
}

/// Nearest-sample mapping `t_i = round(i * imu_rate / proj_rate)`.
pub fn build_sync_map(imu_rate_hz: f64, proj_rate_hz: f64, n_proj: usize) -> Result<SyncMap> {
    if !(proj_rate_hz > 0.0 && imu_rate_hz.is_finite() && proj_rate_hz.is_finite()) {
        return Err(Error::Sync(format!("invalid rates {imu_rate_hz} / {proj_rate_hz} Hz")));
    }
    if imu_rate_hz < proj_rate_hz {
        return Err(Error::Sync(format!(
            "IMU rate {imu_rate_hz} Hz below projection rate {proj_rate_hz} Hz"
        )));
    }
    if n_proj == 0 {
        return Err(Error::Sync("no projections".into()));
    }
    let ratio = imu_rate_hz / proj_rate_hz;
    Ok(SyncMap {
        imu_rate_hz,
        proj_rate_hz,
        indices: (0..n_proj).map(|i| (i as f64 * ratio).round() as usize).collect(),
    })
}

const IMU_HEADER: &str = "t,ax,ay,az,gx,gy,gz";

pub fn write_imu_csv<W: Write>(series: &ImuSeries, mut w: W) -> Result<()> {
    writeln!(w, "{IMU_HEADER}")?;
    for k in 0..series.len() {
        let (a, g) = (series.acc[k], series.gyro[k]);
        let t = k as f64 / series.rate_hz;
        writeln!(w, "{t},{},{},{},{},{},{}", a.x, a.y, a.z, g.x, g.y, g.z)?;
    }
    Ok(())
}

pub fn save_imu_csv(series: &ImuSeries, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_imu_csv(series, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

pub fn read_imu_csv<R: BufRead>(r: R) -> Result<ImuSeries> {
    let rows = crate::io::read_numeric_csv(r, IMU_HEADER)?;
    if rows.len() < 2 {
        return Err(Error::Format {
            line: 0,
            message: "IMU series needs at least 2 samples".into(),
        });
    }
    let dt = (rows[rows.len() - 1][0] - rows[0][0]) / (rows.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format {
            line: 0,
            message: "time column must increase".into(),
        });
    }
    Ok(ImuSeries {
        rate_hz: 1.0 / dt,
        acc: rows.iter().map(|r| Vec3::new(r[1], r[2], r[3])).collect(),
        gyro: rows.iter().map(|r| Vec3::new(r[4], r[5], r[6])).collect(),
    })
}

pub fn load_imu_csv(path: &Path) -> Result<ImuSeries> {
    read_imu_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{forward_kinematics, synthesize_sway_tracks, SwayParams};
    use crate::rotation::{exp_so3, rot_z};

    fn static_kin(r: Mat3, n: usize) -> SegmentKinematics {
        SegmentKinematics::from_frames(120.0, vec![r; n], vec![Vec3::new(0.1, 0.5, -0.2); n])
    }

    #[test]
    fn static_identity_sensor_measures_gravity_reaction() {
        let s = simulate_imu(&static_kin(Mat3::identity(), 10), &SensorMount::shank_default(), &gravity());
        for k in 0..10 {
            assert!((s.acc[k] - Vec3::new(0.0, STANDARD_GRAVITY, 0.0)).amax() < 1e-12);
            assert_eq!(s.gyro[k], Vec3::zeros());
        }
    }

    #[test]
    fn static_sensor_rotated_about_z() {
        let s = simulate_imu(
            &static_kin(rot_z(std::f64::consts::FRAC_PI_2), 5),
            &SensorMount::shank_default(),
            &gravity(),
        );
        assert!((s.acc[2] - Vec3::new(STANDARD_GRAVITY, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn gravity_magnitude_invariant_for_static_poses() {
        for seed in 0..5u64 {
            let r = exp_so3(&Vec3::new(0.3 * seed as f64, -0.7, 1.1));
            let s = simulate_imu(&static_kin(r, 4), &SensorMount::thigh_default(), &gravity());
            for k in 0..4 {
                assert!((s.acc[k].norm() - STANDARD_GRAVITY).abs() < 1e-9);
                assert!(s.gyro[k].norm() < 1e-15);
            }
        }
    }

    fn sway() -> (SegmentKinematics, SegmentKinematics) {
        let p = SwayParams {
            duration_s: 8.0,
            seed: 4,
            flexion_drift_deg: 3.0,
            ..SwayParams::default()
        };
        forward_kinematics(&synthesize_sway_tracks(&p).unwrap()).unwrap()
    }

    #[test]
    fn sway_signals_match_direct_differentiation() {
        let (_, shank) = sway();
        let mount = SensorMount::shank_default();
        let s = simulate_imu(&shank, &mount, &gravity());
        let dt = shank.dt();
        for k in 1..shank.len() - 1 {
            let (r0, p0) = mount.world_pose(&shank, k - 1);
            let (r1, p1) = mount.world_pose(&shank, k);
            let (r2, p2) = mount.world_pose(&shank, k + 1);
            let acc = r1.transpose() * ((p2 - 2.0 * p1 + p0) / (dt * dt) - gravity());
            let w = vee(&(r1.transpose() * (r2 - r0) / (2.0 * dt)));
            assert!((s.acc[k] - acc).amax() < 1e-3, "k={k}");
            assert!((s.gyro[k] - w).amax() < 1e-4, "k={k}");
        }
    }

    #[test]
    fn mount_rotation_rotates_samples() {
        let (thigh, _) = sway();
        let q = exp_so3(&Vec3::new(0.4, -0.2, 0.9));
        let base = SensorMount::thigh_default();
        let rotated = SensorMount { r_off: base.r_off * q, ..base };
        let a = simulate_imu(&thigh, &base, &gravity());
        let b = simulate_imu(&thigh, &rotated, &gravity());
        for k in 0..a.len() {
            assert!((b.acc[k] - q.transpose() * a.acc[k]).amax() < 1e-9);
            assert!((b.gyro[k] - q.transpose() * a.gyro[k]).amax() < 1e-9);
        }
    }

    fn zeros(n: usize) -> ImuSeries {
        ImuSeries {
            rate_hz: 120.0,
            acc: vec![Vec3::zeros(); n],
            gyro: vec![Vec3::zeros(); n],
        }
    }

    fn rms(v: &[Vec3], axis: usize) -> f64 {
        (v.iter().map(|x| x[axis] * x[axis]).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn reference_noise_levels() {
        let spec = NoiseSpec::new(0, 0, 1);
        assert!((spec.sigma_acc().unwrap() - 0.0176517).abs() < 1e-6);
        assert!((spec.sigma_gyro().unwrap().to_degrees() - 0.07).abs() < 1e-12);
        let noisy = add_noise(&zeros(1_000_000), &spec);
        for axis in 0..3 {
            let a = rms(&noisy.acc, axis);
            let g = rms(&noisy.gyro, axis).to_degrees();
            assert!((a / spec.sigma_acc().unwrap() - 1.0).abs() < 0.01);
            assert!((g / 0.07 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn exponent_divides_sigma() {
        let spec = NoiseSpec::new(3, 2, 0);
        assert!((spec.sigma_acc().unwrap() - RMS_ACC_BASE * 1e-3).abs() < 1e-18);
        assert!((spec.sigma_gyro().unwrap() - 0.07f64.to_radians() * 1e-2).abs() < 1e-18);
    }

    #[test]
    fn disabled_noise_is_identity_and_seeded_noise_is_reproducible() {
        let clean = zeros(100);
        let off = NoiseSpec { f_a: None, f_g: None, seed: 5 };
        assert_eq!(add_noise(&clean, &off), clean);
        let spec = NoiseSpec::new(1, 1, 42);
        assert_eq!(add_noise(&clean, &spec), add_noise(&clean, &spec));
        assert_ne!(add_noise(&clean, &spec), add_noise(&clean, &NoiseSpec::new(1, 1, 43)));
        // enabling the gyro channel leaves the accelerometer draw unchanged
        let acc_only = NoiseSpec { f_g: None, ..spec };
        assert_eq!(add_noise(&clean, &acc_only).acc, add_noise(&clean, &spec).acc);
    }

    #[test]
    fn sync_map_paper_rates() {
        let m = build_sync_map(120.0, 31.0, 248).unwrap();
        assert_eq!(m.indices[0], 0);
        assert_eq!(m.n(), 4);
        assert!(m.indices.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(m.last(), (247.0f64 * 120.0 / 31.0).round() as usize);
        assert!(m.check_coverage(m.last()).is_err());
        assert!(m.check_coverage(m.last() + 1).is_ok());
    }

    #[test]
    fn sync_map_equal_rates_and_errors() {
        let m = build_sync_map(30.0, 30.0, 5).unwrap();
        assert_eq!(m.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(m.n(), 1);
        assert!(matches!(build_sync_map(10.0, 30.0, 5), Err(Error::Sync(_))));
    }

    #[test]
    fn imu_csv_round_trip() {
        let (_, shank) = sway();
        let s = simulate_imu(&shank, &SensorMount::shank_default(), &gravity());
        let mut buf = Vec::new();
        write_imu_csv(&s, &mut buf).unwrap();
        let back = read_imu_csv(buf.as_slice()).unwrap();
        assert_eq!(back.acc, s.acc);
        assert_eq!(back.gyro, s.gyro);
        assert!((back.rate_hz - 120.0).abs() < 1e-9);
    }
}
