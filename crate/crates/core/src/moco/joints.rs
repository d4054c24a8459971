//! Joint positions from IMU poses and the control points derived from them.

use nalgebra::Vector2;

use crate::error::Result;
use crate::geometry::ProjectionMatrix;
use crate::imu::SensorMount;
use crate::moco::mls::{ControlPoints2, ControlPoints3};
use crate::rotation::{transform_point, Affine4, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joints {
    pub ankle: Vec3,
    pub knee: Vec3,
    pub hip: Vec3,
}

/// Sensor mounts together with the segment lengths, which fix where the
/// joints sit relative to each sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointMounts {
    pub shank: SensorMount,
    pub thigh: SensorMount,
    pub shank_length: f64,
    pub thigh_length: f64,
}

impl JointMounts {
    pub fn new(shank: SensorMount, thigh: SensorMount, shank_length: f64, thigh_length: f64) -> Self {
        JointMounts {
            shank,
            thigh,
            shank_length,
            thigh_length,
        }
    }

    fn offset(mount: &SensorMount, joint_in_segment: Vec3) -> Vec3 {
        mount.r_off.transpose() * (joint_in_segment - mount.p_sen)
    }

    /// Knee in shank-sensor coordinates.
    pub fn knee_from_shank(&self) -> Vec3 {
        Self::offset(&self.shank, Vec3::zeros())
    }

    pub fn ankle_from_shank(&self) -> Vec3 {
        Self::offset(&self.shank, Vec3::new(0.0, -self.shank_length, 0.0))
    }

    pub fn hip_from_thigh(&self) -> Vec3 {
        Self::offset(&self.thigh, Vec3::zeros())
    }

    pub fn knee_from_thigh(&self) -> Vec3 {
        Self::offset(&self.thigh, Vec3::new(0.0, -self.thigh_length, 0.0))
    }
}

/// Ankle and knee from the tibia sensor pose, hip from the femur sensor pose.
pub fn joints_from_imu_poses(tibia: &Affine4, femur: &Affine4, mounts: &JointMounts) -> Joints {
    Joints {
        ankle: transform_point(tibia, &mounts.ankle_from_shank()),
        knee: transform_point(tibia, &mounts.knee_from_shank()),
        hip: transform_point(femur, &mounts.hip_from_thigh()),
    }
}

/// `[a', k, h']` with `a' = (1-α)a + αk` and `h' = (1-α)h + αk`.
pub fn shrink_toward_knee(j: &Joints, alpha: f64) -> [Vec3; 3] {
    [
        j.ankle * (1.0 - alpha) + j.knee * alpha,
        j.knee,
        j.hip * (1.0 - alpha) + j.knee * alpha,
    ]
}

/// Reference (`p`, projection 0) and current (`q`) 3D control points.
pub fn control_points_3d(current: &Joints, reference: &Joints, alpha: f64) -> ControlPoints3 {
    ControlPoints3 {
        p: shrink_toward_knee(reference, alpha).to_vec(),
        q: shrink_toward_knee(current, alpha).to_vec(),
    }
}

/// Both point sets forward projected with the same matrix. The flag is
/// true when any point falls outside the detector; such points are kept.
pub fn control_points_2d(
    current: &Joints,
    reference: &Joints,
    p: &ProjectionMatrix,
    alpha: f64,
    cols: usize,
    rows: usize,
) -> Result<(ControlPoints2, bool)> {
    let proj = |x: &Vec3| p.project(x).map(|(u, v)| Vector2::new(u, v));
    let ps = shrink_toward_knee(reference, alpha)
        .iter()
        .map(proj)
        .collect::<Result<Vec<_>>>()?;
    let qs = shrink_toward_knee(current, alpha)
        .iter()
        .map(proj)
        .collect::<Result<Vec<_>>>()?;
    let inside = |x: &Vector2<f64>| x.x >= 0.0 && x.y >= 0.0 && x.x <= (cols - 1) as f64 && x.y <= (rows - 1) as f64;
    let off = !ps.iter().chain(qs.iter()).all(inside);
    Ok((ControlPoints2 { p: ps, q: qs }, off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanConfig;
    use crate::imu::SensorMount;
    use crate::phantom::{forward_kinematics, synthesize_sway_tracks, SwayParams};
    use crate::rotation::{exp_so3, pose, Mat3};

    fn mounts() -> JointMounts {
        JointMounts::new(SensorMount::shank_default(), SensorMount::thigh_default(), 0.40, 0.42)
    }

    #[test]
    fn knee_sits_14_cm_above_shank_sensor() {
        let j = joints_from_imu_poses(&Affine4::identity(), &Affine4::identity(), &mounts());
        assert!((j.knee - Vec3::new(0.0, 0.14, 0.0)).amax() < 1e-15);
        assert!((j.ankle - Vec3::new(0.0, -0.26, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn knee_from_either_sensor_agrees() {
        let p = SwayParams { duration_s: 3.0, seed: 2, flexion_drift_deg: 5.0, ..Default::default() };
        let tracks = synthesize_sway_tracks(&p).unwrap();
        let (th, sh) = forward_kinematics(&tracks).unwrap();
        let m = JointMounts {
            shank: SensorMount { r_off: exp_so3(&Vec3::new(0.1, 0.5, -0.3)), ..SensorMount::shank_default() },
            ..mounts()
        };
        for k in (0..tracks.len()).step_by(17) {
            let (rs, ps) = m.shank.world_pose(&sh, k);
            let (rt, pt) = m.thigh.world_pose(&th, k);
            let tib = pose(&rs, &ps);
            let fem = pose(&rt, &pt);
            let j = joints_from_imu_poses(&tib, &fem, &m);
            let knee_thigh = transform_point(&fem, &m.knee_from_thigh());
            assert!((j.knee - knee_thigh).norm() < 1e-6);
            assert!((j.knee - tracks.knee[k]).norm() < 1e-9);
            assert!((j.hip - tracks.hip[k]).norm() < 1e-9);
            assert!((j.ankle - tracks.ankle[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn translating_poses_translates_joints() {
        let d = Vec3::new(0.01, -0.02, 0.03);
        let tib = pose(&exp_so3(&Vec3::new(0.2, 0.0, 0.1)), &Vec3::new(0.0, -0.1, 0.0));
        let fem = pose(&exp_so3(&Vec3::new(-0.1, 0.3, 0.0)), &Vec3::new(0.0, 0.2, 0.0));
        let shift = pose(&Mat3::identity(), &d);
        let a = joints_from_imu_poses(&tib, &fem, &mounts());
        let b = joints_from_imu_poses(&(shift * tib), &(shift * fem), &mounts());
        assert!((b.ankle - a.ankle - d).amax() < 1e-15);
        assert!((b.knee - a.knee - d).amax() < 1e-15);
        assert!((b.hip - a.hip - d).amax() < 1e-15);
    }

    #[test]
    fn shrink_factor_example() {
        let j = Joints { ankle: Vec3::new(0.0, -1.0, 0.0), knee: Vec3::zeros(), hip: Vec3::new(0.0, 1.0, 0.0) };
        let [a, k, h] = shrink_toward_knee(&j, 0.8);
        assert!((h - Vec3::new(0.0, 0.2, 0.0)).amax() < 1e-15);
        assert!((a - Vec3::new(0.0, -0.2, 0.0)).amax() < 1e-15);
        assert_eq!(k, Vec3::zeros());
    }

    #[test]
    fn projected_control_points() {
        let geom = ScanConfig::desk().build().unwrap();
        let j = Joints {
            ankle: Vec3::new(-0.1, -0.38, 0.0),
            knee: Vec3::zeros(),
            hip: Vec3::new(-0.1, 0.4, 0.01),
        };
        let (cp, off) = control_points_2d(&j, &j, &geom.matrices[9], 0.8, geom.det_cols, geom.det_rows).unwrap();
        assert_eq!(cp.p, cp.q);
        assert!(!off);
        // pinhole oracle on the hip proxy
        let beta = 9.0 * geom.angular_increment;
        let d = Vec3::new(beta.cos(), 0.0, -beta.sin());
        let e_u = Vec3::new(beta.sin(), 0.0, beta.cos());
        let s = -geom.sid * d;
        let h = shrink_toward_knee(&j, 0.8)[2];
        let rel = h - s;
        let scale = geom.sdd / rel.dot(&d) / geom.pixel;
        let u = (geom.det_cols as f64 - 1.0) / 2.0 + rel.dot(&e_u) * scale;
        let v = (geom.det_rows as f64 - 1.0) / 2.0 - rel.y * scale;
        assert!((cp.p[2].x - u).abs() < 1e-6 && (cp.p[2].y - v).abs() < 1e-6);
    }
}
