//! Segment frames from joint positions, with finite-difference derivatives.

use crate::error::{Error, Result};
use crate::phantom::tracks::JointTracks;
use crate::rotation::{pose, Affine4, Mat3, Vec3};

/// Orientation and origin of one rigid segment per frame, plus time
/// derivatives by central differences (one-sided at the ends).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentKinematics {
    pub rate_hz: f64,
    pub rotation: Vec<Mat3>,
    pub rotation_dot: Vec<Mat3>,
    pub rotation_ddot: Vec<Mat3>,
    pub origin: Vec<Vec3>,
    pub origin_dot: Vec<Vec3>,
    pub origin_ddot: Vec<Vec3>,
}

impl SegmentKinematics {
    pub fn len(&self) -> usize {
        self.rotation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotation.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn pose(&self, k: usize) -> Affine4 {
        pose(&self.rotation[k], &self.origin[k])
    }

    pub fn from_frames(rate_hz: f64, rotation: Vec<Mat3>, origin: Vec<Vec3>) -> Self {
        let dt = 1.0 / rate_hz;
        SegmentKinematics {
            rate_hz,
            rotation_dot: first_derivative(&rotation, dt),
            rotation_ddot: second_derivative(&rotation, dt),
            origin_dot: first_derivative(&origin, dt),
            origin_ddot: second_derivative(&origin, dt),
            rotation,
            origin,
        }
    }
}

fn first_derivative<T>(x: &[T], dt: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = x.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                (x[1] - x[0]) * (1.0 / dt)
            } else if k == n - 1 {
                (x[n - 1] - x[n - 2]) * (1.0 / dt)
            } else {
                (x[k + 1] - x[k - 1]) * (0.5 / dt)
            }
        })
        .collect()
}

/// Second central difference; end frames reuse their neighbor's stencil.
/// Two-frame inputs have no curvature information and yield zero.
fn second_derivative<T>(x: &[T], dt: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = x.len();
    let inv = 1.0 / (dt * dt);
    if n < 3 {
        return x.iter().map(|&v| v * 0.0).collect();
    }
    (0..n)
        .map(|k| {
            let c = k.clamp(1, n - 2);
            (x[c + 1] - x[c] - (x[c] - x[c - 1])) * inv
        })
        .collect()
}

/// Segment frame with origin at `proximal`: local y points from the distal
/// to the proximal joint, local x is world x with the axis component removed.
pub fn segment_frame(proximal: &Vec3, distal: &Vec3, frame: usize) -> Result<Mat3> {
    let axis = proximal - distal;
    let len = axis.norm();
    if !(len > 1e-9) {
        return Err(Error::DegenerateKinematics {
            frame,
            message: "zero-length segment".into(),
        });
    }
    let y = axis / len;
    let x_raw = Vec3::x() - y * y.x;
    let xn = x_raw.norm();
    if xn < 1e-6 {
        return Err(Error::DegenerateKinematics {
            frame,
            message: "segment axis parallel to the world x axis; roll undefined".into(),
        });
    }
    let x = x_raw / xn;
    let z = x.cross(&y);
    Ok(Mat3::from_columns(&[x, y, z]))
}

/// Thigh (hip to knee) and shank (knee to ankle) kinematics.
pub fn forward_kinematics(tracks: &JointTracks) -> Result<(SegmentKinematics, SegmentKinematics)> {
    tracks.validate()?;
    let n = tracks.len();
    let mut thigh_r = Vec::with_capacity(n);
    let mut shank_r = Vec::with_capacity(n);
    for k in 0..n {
        thigh_r.push(segment_frame(&tracks.hip[k], &tracks.knee[k], k)?);
        shank_r.push(segment_frame(&tracks.knee[k], &tracks.ankle[k], k)?);
    }
    let rate = tracks.sample_rate_hz;
    Ok((
        SegmentKinematics::from_frames(rate, thigh_r, tracks.hip.clone()),
        SegmentKinematics::from_frames(rate, shank_r, tracks.knee.clone()),
    ))
}
