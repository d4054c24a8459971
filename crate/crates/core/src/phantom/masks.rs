//! Whole-leg, thigh and shank voxel masks at a given leg pose.

use rayon::prelude::*;

use crate::phantom::model::LegPhantom;
use crate::phantom::render::LegPose;
use crate::rotation::{pose_inverse, rotation_of, transform_point, translation_of, Vec3};
use crate::volume::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub whole: Vec<bool>,
    pub thigh: Vec<bool>,
    pub shank: Vec<bool>,
}

/// Voxels inside any phantom primitive, split by the plane through the knee
/// whose normal bisects the two segment axes.
pub fn region_masks(phantom: &LegPhantom, leg: &LegPose, grid: &Grid) -> RegionMasks {
    let inv = [pose_inverse(&leg.thigh), pose_inverse(&leg.shank)];
    let knee = translation_of(&leg.shank);
    let y_thigh: Vec3 = rotation_of(&leg.thigh).column(1).into();
    let y_shank: Vec3 = rotation_of(&leg.shank).column(1).into();
    let normal = (y_thigh + y_shank).normalize();
    let segs = [&phantom.thigh, &phantom.shank];

    // (inside, thigh side)
    let flags: Vec<(bool, bool)> = (0..grid.dims[2])
        .into_par_iter()
        .flat_map_iter(|z| {
            let segs = &segs;
            let inv = &inv;
            (0..grid.dims[1]).flat_map(move |y| {
                (0..grid.dims[0]).map(move |x| {
                    let w = grid.position(x, y, z);
                    let inside = segs.iter().enumerate().any(|(s, prims)| {
                        let l = transform_point(&inv[s], &w);
                        prims.iter().any(|p| p.mu > 0.0 && p.contains(&l))
                    });
                    (inside, (w - knee).dot(&normal) > 0.0)
                })
            })
        })
        .collect();
    RegionMasks {
        whole: flags.iter().map(|f| f.0).collect(),
        thigh: flags.iter().map(|f| f.0 && f.1).collect(),
        shank: flags.iter().map(|f| f.0 && !f.1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::kinematics::forward_kinematics;
    use crate::phantom::tracks::{synthesize_sway_tracks, SwayParams};

    #[test]
    fn thigh_and_shank_partition_the_leg() {
        let tracks = synthesize_sway_tracks(&SwayParams::still(0.1, 120.0)).unwrap();
        let (th, sh) = forward_kinematics(&tracks).unwrap();
        let leg = LegPose { thigh: th.pose(0), shank: sh.pose(0) };
        let ph = LegPhantom::standard(0.42, 0.40, &Default::default());
        let grid = Grid::centered([40, 40, 40], 3e-3, &tracks.knee[0]);
        let m = region_masks(&ph, &leg, &grid);
        let (mut nt, mut ns) = (0, 0);
        for i in 0..grid.len() {
            assert!(!(m.thigh[i] && m.shank[i]));
            assert_eq!(m.whole[i], m.thigh[i] || m.shank[i]);
            nt += m.thigh[i] as usize;
            ns += m.shank[i] as usize;
        }
        assert!(nt > 1000 && ns > 1000);
        // a voxel well above the knee on the thigh axis is thigh
        let up = grid.index(20, 35, 20);
        assert!(m.thigh[up]);
    }
}
