//! Filtered back-projection and the per-method reconstruction dispatcher.

pub mod backproject;
pub mod filter;

pub use backproject::{backproject, ConstantRigid, DisplacementLattice, MlsDeform, PerViewRigid, ViewMap, VoxelDeform};
pub use filter::{
    column_fan_angle, cosine_weights, parker_row, parker_weight, preweight_and_filter, shepp_logan_kernel, FilterConfig,
    RampFilter, RampPlan,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::image::ProjectionStack;
use crate::moco::{
    control_points_2d, control_points_3d, correct_projection_matrices, mls_warp_2d, Joints, MocoConfig, MotionSeries,
};
use crate::volume::{Grid, Volume};

/// Correction strategy applied during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(alias = "none")]
    Uncorrected,
    Rigid,
    Mls2d,
    Mls3d,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Uncorrected, Method::Rigid, Method::Mls2d, Method::Mls3d];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Uncorrected => "uncorrected",
            Method::Rigid => "rigid",
            Method::Mls2d => "mls2d",
            Method::Mls3d => "mls3d",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "uncorrected" => Ok(Method::Uncorrected),
            "rigid" => Ok(Method::Rigid),
            "mls2d" => Ok(Method::Mls2d),
            "mls3d" => Ok(Method::Mls3d),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Everything a reconstruction may need. `motion` is required by the rigid
/// method and `joints` (one entry per view, view 0 being the reference) by
/// the MLS methods.
#[derive(Debug, Clone, Copy)]
pub struct ReconInputs<'a> {
    pub stack: &'a ProjectionStack,
    pub geom: &'a ScanGeometry,
    pub grid: &'a Grid,
    pub filter: &'a FilterConfig,
    pub moco: &'a MocoConfig,
    pub motion: Option<&'a MotionSeries>,
    pub joints: Option<&'a [Joints]>,
}

/// Plain FBP: filter, then back-project with the given matrices.
pub fn fbp(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    grid: &Grid,
    filter: &FilterConfig,
    deform: Option<&dyn VoxelDeform>,
) -> Result<Volume> {
    let filtered = preweight_and_filter(stack, geom, filter)?;
    backproject(&filtered, geom, grid, deform)
}

fn joints_for<'a>(inputs: &ReconInputs<'a>, method: Method) -> Result<&'a [Joints]> {
    let joints = inputs
        .joints
        .ok_or_else(|| Error::MissingPrerequisite(format!("{method} needs per-view joint positions")))?;
    if joints.len() != inputs.geom.n_proj {
        return Err(Error::MissingPrerequisite(format!(
            "{method} needs {} joint sets, got {}",
            inputs.geom.n_proj,
            joints.len()
        )));
    }
    Ok(joints)
}

/// Warps every projection so that the joint-derived control points move
/// back to their reference positions. Returns the warped stack and the
/// number of views with control points outside the detector.
pub fn warp_projections(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    joints: &[Joints],
    moco: &MocoConfig,
) -> Result<(ProjectionStack, usize)> {
    if joints.len() != stack.views() || stack.views() != geom.n_proj {
        return Err(Error::Shape("joint series, stack and geometry disagree in length".into()));
    }
    let results = stack
        .images
        .par_iter()
        .enumerate()
        .map(|(i, im)| {
            let (cps, off) = control_points_2d(
                &joints[i],
                &joints[0],
                &geom.matrices[i],
                moco.alpha,
                geom.det_cols,
                geom.det_rows,
            )?;
            Ok((mls_warp_2d(im, &cps, moco.epsilon), off))
        })
        .collect::<Result<Vec<_>>>()?;
    let off = results.iter().filter(|(_, off)| *off).count();
    let images = results.into_iter().map(|(im, _)| im).collect();
    Ok((ProjectionStack::from_images(images, stack.pixel)?, off))
}

/// The 3D deformation hook for the MLS-3D method.
pub fn mls_deform(joints: &[Joints], moco: &MocoConfig) -> MlsDeform {
    MlsDeform {
        control_points: joints.iter().map(|j| control_points_3d(j, &joints[0], moco.alpha)).collect(),
        epsilon: moco.epsilon,
        grid_step: moco.mls3d_grid_step,
    }
}

pub fn reconstruct(method: Method, inputs: &ReconInputs<'_>) -> Result<Volume> {
    inputs.moco.validate()?;
    let ReconInputs {
        stack,
        geom,
        grid,
        filter,
        moco,
        ..
    } = *inputs;
    match method {
        Method::Uncorrected => fbp(stack, geom, grid, filter, None),
        Method::Rigid => {
            let motion = inputs
                .motion
                .ok_or_else(|| Error::MissingPrerequisite("rigid needs a motion series".into()))?;
            let corrected = correct_projection_matrices(geom, motion)?;
            fbp(stack, &corrected, grid, filter, None)
        }
        Method::Mls2d => {
            let joints = joints_for(inputs, method)?;
            let (warped, _) = warp_projections(stack, geom, joints, moco)?;
            fbp(&warped, geom, grid, filter, None)
        }
        Method::Mls3d => {
            let joints = joints_for(inputs, method)?;
            let hook = mls_deform(joints, moco);
            fbp(stack, geom, grid, filter, Some(&hook))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanConfig;
    use crate::image::Image2D;
    use crate::rotation::Vec3;

    fn tiny() -> (ScanGeometry, Grid, ProjectionStack) {
        let geom = ScanConfig {
            n_proj: 30,
            angular_increment_deg: 7.0,
            det_cols: 36,
            det_rows: 24,
            pixel_mm: 10.0,
            ..ScanConfig::desk()
        }
        .build()
        .unwrap();
        let grid = Grid::centered([10, 10, 6], 0.012, &geom.rotation_center);
        let images = (0..geom.n_proj)
            .map(|i| Image2D::from_fn(36, 24, |u, v| ((u * 7 + v * 3 + 2 * i) % 13) as f64 * 0.1))
            .collect();
        (geom.clone(), grid, ProjectionStack::from_images(images, geom.pixel).unwrap())
    }

    fn joints() -> Joints {
        Joints {
            ankle: Vec3::new(-0.05, -0.38, 0.0),
            knee: Vec3::zeros(),
            hip: Vec3::new(-0.05, 0.4, 0.0),
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert_eq!("none".parse::<Method>().unwrap(), Method::Uncorrected);
        assert_eq!(serde_json::from_str::<Method>("\"none\"").unwrap(), Method::Uncorrected);
        assert!("affine".parse::<Method>().is_err());
    }

    #[test]
    fn zero_motion_makes_all_methods_agree() {
        let (geom, grid, stack) = tiny();
        let motion = MotionSeries::identity(geom.n_proj);
        let js = vec![joints(); geom.n_proj];
        let inputs = ReconInputs {
            stack: &stack,
            geom: &geom,
            grid: &grid,
            filter: &FilterConfig::default(),
            moco: &MocoConfig::default(),
            motion: Some(&motion),
            joints: Some(&js),
        };
        let base = reconstruct(Method::Uncorrected, &inputs).unwrap();
        for m in [Method::Rigid, Method::Mls2d, Method::Mls3d] {
            let v = reconstruct(m, &inputs).unwrap();
            assert_eq!(v.data, base.data, "{m}");
        }
    }

    #[test]
    fn missing_inputs_are_reported() {
        let (geom, grid, stack) = tiny();
        let inputs = ReconInputs {
            stack: &stack,
            geom: &geom,
            grid: &grid,
            filter: &FilterConfig::default(),
            moco: &MocoConfig::default(),
            motion: None,
            joints: None,
        };
        for m in [Method::Rigid, Method::Mls2d, Method::Mls3d] {
            assert!(matches!(reconstruct(m, &inputs), Err(Error::MissingPrerequisite(_))));
        }
    }
}
