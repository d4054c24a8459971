//! Fixtures shared by the kernel benchmarks.

use imu_moco::imu::{gravity, simulate_imu, ImuSeries, SensorMount};
use imu_moco::moco::mls::Vec2;
use imu_moco::moco::ControlPoints2;
use imu_moco::phantom::{
    forward_kinematics, render_stack, synthesize_sway_tracks, Attenuation, LegPhantom, LegPose, SwayParams,
};
use imu_moco::recon::{preweight_and_filter, FilterConfig};
use imu_moco::{Grid, Image2D, ProjectionStack, ScanConfig, ScanGeometry, Volume};

/// Desk geometry with the standard leg phantom rendered in a still pose.
pub struct ScanFixture {
    pub geom: ScanGeometry,
    pub stack: ProjectionStack,
    pub filtered: ProjectionStack,
}

pub fn scan_fixture() -> ScanFixture {
    let geom = ScanConfig::desk().build().expect("desk geometry");
    let tracks = synthesize_sway_tracks(&SwayParams::still(1.0, 120.0)).expect("tracks");
    let (thigh, shank) = forward_kinematics(&tracks).expect("kinematics");
    let phantom = LegPhantom::standard(tracks.thigh_length(), tracks.shank_length(), &Attenuation::default());
    let leg = LegPose {
        thigh: thigh.pose(0),
        shank: shank.pose(0),
    };
    let stack = render_stack(&phantom, &vec![leg; geom.n_proj], &geom);
    let filtered = preweight_and_filter(&stack, &geom, &FilterConfig::default()).expect("filter");
    ScanFixture { geom, stack, filtered }
}

/// A grid of `n`³ voxels at 1 mm around the rotation center.
pub fn grid(geom: &ScanGeometry, n: usize) -> Grid {
    Grid::centered([n; 3], 1e-3, &geom.rotation_center)
}

/// Three control points displaced by a few pixels.
pub fn control_points(cols: usize, rows: usize) -> ControlPoints2 {
    let (c, r) = (cols as f64, rows as f64);
    let p = vec![Vec2::new(0.5 * c, 0.1 * r), Vec2::new(0.5 * c, 0.5 * r), Vec2::new(0.45 * c, 0.9 * r)];
    let q = p.iter().map(|x| x + Vec2::new(2.5, -1.5)).collect();
    ControlPoints2 { p, q }
}

pub fn textured_image(cols: usize, rows: usize) -> Image2D {
    Image2D::from_fn(cols, rows, |u, v| ((u * 31 + v * 17) % 97) as f64 / 97.0)
}

/// Smooth volume pair for SSIM timing.
pub fn volume_pair(n: usize) -> (Volume, Volume) {
    let grid = Grid::centered([n; 3], 1e-3, &imu_moco::Vec3::zeros());
    let mut a = Volume::zeros(grid);
    for (i, x) in a.data.iter_mut().enumerate() {
        *x = ((i * 7919) % 1009) as f64 / 1009.0;
    }
    let mut b = a.clone();
    b.data.iter_mut().enumerate().for_each(|(i, x)| *x += 0.05 * ((i % 13) as f64 / 13.0));
    (a, b)
}

/// Shank sensor signals of an 8 s sway.
pub fn imu_series() -> ImuSeries {
    let tracks = synthesize_sway_tracks(&SwayParams {
        duration_s: 8.0,
        ..SwayParams::default()
    })
    .expect("tracks");
    let (_, shank) = forward_kinematics(&tracks).expect("kinematics");
    simulate_imu(&shank, &SensorMount::shank_default(), &gravity())
}
