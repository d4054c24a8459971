//! Motion correction: rigid projection-matrix updates from IMU poses and
//! moving-least-squares deformations driven by joint positions.

pub mod joints;
pub mod mls;

pub use joints::{
    control_points_2d, control_points_3d, joints_from_imu_poses, shrink_toward_knee, JointMounts, Joints,
};
pub use mls::{mls_transform_3d, mls_warp_2d, ControlPoints2, ControlPoints3, Mls3};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::imu::SyncMap;
use crate::pose::PoseTrack;
use crate::rotation::{pose_inverse, Affine4};

/// Tuning of the joint-driven corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MocoConfig {
    /// Fraction of the way hip and ankle control points move toward the knee.
    pub alpha: f64,
    /// Added to squared distances in the MLS weights (px^2 in 2D, m^2 in 3D).
    pub epsilon: f64,
    /// Voxel stride of the per-view grid on which the 3D MLS field is
    /// evaluated exactly; 1 evaluates every voxel.
    pub mls3d_grid_step: usize,
}

impl Default for MocoConfig {
    fn default() -> Self {
        MocoConfig {
            alpha: 0.8,
            epsilon: 1e-8,
            mls3d_grid_step: 4,
        }
    }
}

impl MocoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.mls3d_grid_step == 0 {
            return Err(Error::Config("mls3d_grid_step must be at least 1".into()));
        }
        Ok(())
    }
}

/// World-frame rigid motion of the imaged object per projection, relative
/// to projection 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeries {
    pub matrices: Vec<Affine4>,
}

impl MotionSeries {
    pub fn identity(n: usize) -> Self {
        MotionSeries {
            matrices: vec![Affine4::identity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// `M(i) = S(t_i) S(t_0)⁻¹`: the transform carrying the sensor, and with it
/// the rigid segment, from its pose at projection 0 to projection `i`.
pub fn rigid_motion_series(track: &PoseTrack, sync: &SyncMap) -> Result<MotionSeries> {
    sync.check_coverage(track.len())?;
    let inv0 = pose_inverse(&track.poses[sync.indices[0]]);
    let matrices = sync
        .indices
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == 0 {
                Affine4::identity()
            } else {
                track.poses[t] * inv0
            }
        })
        .collect();
    Ok(MotionSeries { matrices })
}

/// `P̂(i) = P(i) M(i)`.
pub fn correct_projection_matrices(geom: &ScanGeometry, motion: &MotionSeries) -> Result<ScanGeometry> {
    if motion.len() != geom.n_proj {
        return Err(Error::Config(format!(
            "motion series has {} entries for {} views",
            motion.len(),
            geom.n_proj
        )));
    }
    let matrices = geom
        .matrices
        .iter()
        .zip(&motion.matrices)
        .map(|(p, m)| p.compose(m))
        .collect();
    geom.with_matrices(matrices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanConfig;
    use crate::imu::build_sync_map;
    use crate::pose::PoseTrack;
    use crate::rotation::{exp_so3, pose, rotation_of, transform_point, translation_of, Mat3, Vec3};

    fn track(poses: Vec<Affine4>) -> PoseTrack {
        PoseTrack {
            rate_hz: 120.0,
            deltas: vec![],
            poses,
            v0: Vec3::zeros(),
        }
    }

    #[test]
    fn static_track_gives_identity() {
        let s = pose(&exp_so3(&Vec3::new(0.1, 0.2, 0.3)), &Vec3::new(0.0, 0.3, 0.0));
        let sync = build_sync_map(120.0, 31.0, 10).unwrap();
        let m = rigid_motion_series(&track(vec![s; 40]), &sync).unwrap();
        assert_eq!(m.matrices[0], Affine4::identity());
        for mi in &m.matrices {
            assert!((mi - Affine4::identity()).amax() < 1e-15);
        }
    }

    #[test]
    fn constant_translation_per_interval() {
        let d = Vec3::new(0.001, -0.0005, 0.002);
        let sync = build_sync_map(30.0, 30.0, 12).unwrap();
        let r = exp_so3(&Vec3::new(0.4, 0.0, -0.3));
        let poses = (0..12).map(|k| pose(&r, &(Vec3::new(0.0, 0.4, 0.0) + d * k as f64))).collect();
        let m = rigid_motion_series(&track(poses), &sync).unwrap();
        for (i, mi) in m.matrices.iter().enumerate() {
            assert!((rotation_of(mi) - Mat3::identity()).amax() < 1e-15);
            assert!((translation_of(mi) - d * i as f64).amax() < 1e-15);
        }
    }

    #[test]
    fn matches_chained_global_pose_changes() {
        let sync = build_sync_map(120.0, 31.0, 8).unwrap();
        let poses: Vec<Affine4> = (0..40)
            .map(|k| {
                let t = k as f64 * 0.01;
                pose(&exp_so3(&Vec3::new(t, -0.5 * t, 0.2 * t * t)), &Vec3::new(t.sin(), t * t, 0.1))
            })
            .collect();
        let m = rigid_motion_series(&track(poses.clone()), &sync).unwrap();
        let mut chained = Affine4::identity();
        for i in 0..sync.indices.len() {
            assert!((m.matrices[i] - chained).amax() < 1e-12);
            if i + 1 < sync.indices.len() {
                let (a, b) = (sync.indices[i], sync.indices[i + 1]);
                chained = poses[b] * pose_inverse(&poses[a]) * chained;
            }
        }
    }

    #[test]
    fn coverage_error_for_short_track() {
        let sync = build_sync_map(120.0, 31.0, 10).unwrap();
        assert!(matches!(
            rigid_motion_series(&track(vec![Affine4::identity(); 5]), &sync),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn corrected_matrices_project_moved_points() {
        let geom = ScanConfig::desk().build().unwrap();
        let same = correct_projection_matrices(&geom, &MotionSeries::identity(geom.n_proj)).unwrap();
        assert_eq!(same.matrices, geom.matrices);

        let motion = MotionSeries {
            matrices: (0..geom.n_proj)
                .map(|i| {
                    let s = i as f64 * 1e-3;
                    pose(&exp_so3(&Vec3::new(s, -s, 0.5 * s)), &Vec3::new(s * 0.01, 0.0, -s * 0.02))
                })
                .collect(),
        };
        let corrected = correct_projection_matrices(&geom, &motion).unwrap();
        let x0 = Vec3::new(0.02, -0.03, 0.01);
        for i in 0..geom.n_proj {
            let moved = transform_point(&motion.matrices[i], &x0);
            let (u1, v1) = geom.matrices[i].project(&moved).unwrap();
            let (u2, v2) = corrected.matrices[i].project(&x0).unwrap();
            assert!((u1 - u2).abs() < 1e-9 && (v1 - v2).abs() < 1e-9);
        }
        assert!(correct_projection_matrices(&geom, &MotionSeries::identity(3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MocoConfig::default().validate().is_ok());
        assert!(MocoConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(MocoConfig { mls3d_grid_step: 0, ..Default::default() }.validate().is_err());
    }
}
