//! Rotation and rigid-pose helpers on top of nalgebra.
//!
//! Poses are plain 4x4 homogeneous matrices (`Affine4`) with an orthonormal
//! rotation block and last row `(0, 0, 0, 1)`.

use nalgebra::{Matrix3, Matrix4, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Affine4 = Matrix4<f64>;

/// Below this angle the exponential / logarithm use their series expansions.
const SMALL_ANGLE: f64 = 1e-12;

/// `[v]x` such that `[v]x u = v x u`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    #[rustfmt::skip]
    let m = Mat3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    );
    m
}

/// Inverse of [`skew`] applied to the skew-symmetric part of `m`.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map of so(3), Rodrigues' closed form.
pub fn exp_so3(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + a * k + b * k * k
}

/// Logarithm of a rotation matrix, returned as a rotation vector.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = vee(r);
    if theta < 1e-6 {
        // sin(theta)/theta ~ 1 - theta^2/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the skew part vanishes; recover the axis from the symmetric part.
        let b = (r + Mat3::identity()) * 0.5;
        let (mut best, mut col) = (0.0, 0);
        for i in 0..3 {
            if b[(i, i)] > best {
                best = b[(i, i)];
                col = i;
            }
        }
        let mut axis: Vec3 = b.column(col).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / theta.sin())
}

/// Closest rotation in the Frobenius sense (orthogonal polar factor).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u = u;
        let k = smallest_index(&svd.singular_values);
        u.column_mut(k).neg_mut();
        q = u * v_t;
    }
    q
}

pub(crate) fn smallest_index(s: &Vector3<f64>) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if s[i] < s[k] {
            k = i;
        }
    }
    k
}

/// Maximum absolute entry of `R^T R - I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).amax()
}

pub fn pose(rotation: &Mat3, translation: &Vec3) -> Affine4 {
    let mut m = Affine4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

#[inline]
pub fn rotation_of(m: &Affine4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

#[inline]
pub fn translation_of(m: &Affine4) -> Vec3 {
    m.fixed_view::<3, 1>(0, 3).into_owned()
}

/// Inverse of a rigid pose without a general 4x4 inversion.
pub fn pose_inverse(m: &Affine4) -> Affine4 {
    let rt = rotation_of(m).transpose();
    pose(&rt, &(-(rt * translation_of(m))))
}

#[inline]
pub fn transform_point(m: &Affine4, x: &Vec3) -> Vec3 {
    rotation_of(m) * x + translation_of(m)
}

/// Rotation about the world y (vertical) axis.
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    #[rustfmt::skip]
    let m = Mat3::new(
        c, 0.0, s,
        0.0, 1.0, 0.0,
        -s, 0.0, c,
    );
    m
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    #[rustfmt::skip]
    let m = Mat3::new(
        1.0, 0.0, 0.0,
        0.0, c, -s,
        0.0, s, c,
    );
    m
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    #[rustfmt::skip]
    let m = Mat3::new(
        c, -s, 0.0,
        s, c, 0.0,
        0.0, 0.0, 1.0,
    );
    m
}

/// Rotation angle (radians) of `a^T b`.
pub fn angle_between(a: &Mat3, b: &Mat3) -> f64 {
    log_so3(&(a.transpose() * b)).norm()
}
