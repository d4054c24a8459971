//! Analytic leg phantom built from ellipsoids and finite cylinders.
//!
//! Each primitive lives in the frame of the segment it is attached to
//! (origin at the proximal joint, local y toward the proximal joint).
//! Where primitives overlap, the one with the higher material priority
//! wins; equal priorities resolve toward the larger attenuation. This
//! gives nested marrow / bone / tissue without double counting.

use serde::{Deserialize, Serialize};

use crate::rotation::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Material {
    SoftTissue,
    Bone,
    Marrow,
}

impl Material {
    pub fn priority(self) -> u8 {
        match self {
            Material::SoftTissue => 0,
            Material::Bone => 1,
            Material::Marrow => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Axis-aligned in the segment frame.
    Ellipsoid { center: [f64; 3], semi_axes: [f64; 3] },
    /// Flat-capped cylinder whose axis is the local y direction.
    Cylinder { center: [f64; 3], radius: f64, half_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
    /// Linear attenuation (1/m).
    pub mu: f64,
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, material: Material, mu: f64) -> Self {
        Primitive {
            shape: Shape::Ellipsoid {
                center: center.into(),
                semi_axes: [radius; 3],
            },
            material,
            mu,
        }
    }

    pub fn ellipsoid(center: Vec3, semi_axes: Vec3, material: Material, mu: f64) -> Self {
        Primitive {
            shape: Shape::Ellipsoid {
                center: center.into(),
                semi_axes: semi_axes.into(),
            },
            material,
            mu,
        }
    }

    /// Cylinder spanning local y in `[y0, y1]`, axis through `(x, z)`.
    pub fn cylinder(x: f64, z: f64, y0: f64, y1: f64, radius: f64, material: Material, mu: f64) -> Self {
        Primitive {
            shape: Shape::Cylinder {
                center: [x, 0.5 * (y0 + y1), z],
                radius,
                half_length: 0.5 * (y1 - y0).abs(),
            },
            material,
            mu,
        }
    }

    /// Ranking used to pick the winning primitive inside overlaps.
    #[inline]
    pub fn rank(&self) -> (u8, f64) {
        (self.material.priority(), self.mu)
    }

    /// True if `rank` beats `other`.
    #[inline]
    pub fn outranks(a: (u8, f64), b: (u8, f64)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self.shape {
            Shape::Ellipsoid { center, semi_axes } => {
                let mut s = 0.0;
                for i in 0..3 {
                    let d = (p[i] - center[i]) / semi_axes[i];
                    s += d * d;
                }
                s <= 1.0
            }
            Shape::Cylinder { center, radius, half_length } => {
                let dx = p.x - center[0];
                let dz = p.z - center[2];
                (p.y - center[1]).abs() <= half_length && dx * dx + dz * dz <= radius * radius
            }
        }
    }

    /// Parameter interval `[t0, t1]` where the ray `o + t d` is inside.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Ellipsoid { center, semi_axes } => {
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = -1.0;
                for i in 0..3 {
                    let inv = 1.0 / semi_axes[i];
                    let oi = (o[i] - center[i]) * inv;
                    let di = d[i] * inv;
                    a += di * di;
                    b += oi * di;
                    c += oi * oi;
                }
                solve_quadratic(a, b, c)
            }
            Shape::Cylinder { center, radius, half_length } => {
                let (ox, oz) = (o.x - center[0], o.z - center[2]);
                let a = d.x * d.x + d.z * d.z;
                let b = ox * d.x + oz * d.z;
                let c = ox * ox + oz * oz - radius * radius;
                let (mut t0, mut t1) = if a < 1e-300 {
                    if c > 0.0 {
                        return None;
                    }
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    solve_quadratic(a, b, c)?
                };
                let oy = o.y - center[1];
                if d.y.abs() < 1e-300 {
                    if oy.abs() > half_length {
                        return None;
                    }
                } else {
                    let ta = (-half_length - oy) / d.y;
                    let tb = (half_length - oy) / d.y;
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                (t1 > t0).then_some((t0, t1))
            }
        }
    }
}

/// Roots of `a t^2 + 2 b t + c = 0` as an interval, if real and distinct.
#[inline]
fn solve_quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pair
    let q = if b >= 0.0 { -(b + s) } else { -(b - s) };
    let (r0, r1) = (q / a, c / q);
    Some(if r0 < r1 { (r0, r1) } else { (r1, r0) })
}

/// Attenuation values (1/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attenuation {
    pub soft_tissue: f64,
    pub bone: f64,
    pub marrow: f64,
}

impl Default for Attenuation {
    fn default() -> Self {
        Attenuation {
            soft_tissue: 20.0,
            bone: 50.0,
            marrow: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegPhantom {
    pub thigh: Vec<Primitive>,
    pub shank: Vec<Primitive>,
}

impl LegPhantom {
    pub fn empty() -> Self {
        LegPhantom {
            thigh: vec![],
            shank: vec![],
        }
    }

    /// Femur with condyles and patella inside a thigh cylinder; tibia with
    /// plateau and fibula inside a shank cylinder that is rounded at the knee.
    pub fn standard(thigh_length: f64, shank_length: f64, mu: &Attenuation) -> Self {
        use Material::*;
        let lt = thigh_length;
        let ls = shank_length;
        let thigh = vec![
            Primitive::cylinder(0.0, 0.0, -lt, 0.0, 0.055, SoftTissue, mu.soft_tissue),
            Primitive::cylinder(0.0, 0.0, -lt + 0.03, -0.03, 0.014, Bone, mu.bone),
            Primitive::cylinder(0.0, 0.0, -lt + 0.04, -0.05, 0.008, Marrow, mu.marrow),
            Primitive::ellipsoid(
                Vec3::new(0.0, -lt + 0.025, 0.0),
                Vec3::new(0.03, 0.022, 0.038),
                Bone,
                mu.bone,
            ),
            Primitive::ellipsoid(
                Vec3::new(0.0, -lt + 0.03, 0.0),
                Vec3::new(0.018, 0.014, 0.026),
                Marrow,
                mu.marrow,
            ),
            Primitive::ellipsoid(
                Vec3::new(0.04, -lt + 0.03, 0.0),
                Vec3::new(0.01, 0.02, 0.018),
                Bone,
                mu.bone,
            ),
        ];
        let shank = vec![
            Primitive::cylinder(0.0, 0.0, -ls, 0.0, 0.045, SoftTissue, mu.soft_tissue),
            Primitive::sphere(Vec3::zeros(), 0.05, SoftTissue, mu.soft_tissue),
            Primitive::cylinder(0.0, 0.0, -ls + 0.03, -0.03, 0.013, Bone, mu.bone),
            Primitive::cylinder(0.0, 0.0, -ls + 0.04, -0.05, 0.007, Marrow, mu.marrow),
            Primitive::ellipsoid(
                Vec3::new(0.0, -0.022, 0.0),
                Vec3::new(0.032, 0.016, 0.036),
                Bone,
                mu.bone,
            ),
            Primitive::ellipsoid(
                Vec3::new(0.0, -0.025, 0.0),
                Vec3::new(0.022, 0.009, 0.026),
                Marrow,
                mu.marrow,
            ),
            Primitive::cylinder(-0.01, 0.025, -ls + 0.04, -0.03, 0.007, Bone, mu.bone),
        ];
        LegPhantom { thigh, shank }
    }
}
