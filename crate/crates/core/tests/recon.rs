use imu_moco::metrics::ssim3d;
use imu_moco::phantom::{render_stack, voxelize, LegPhantom, LegPose, Material, Primitive};
use imu_moco::recon::{fbp, FilterConfig};
use imu_moco::{Affine4, Grid, ScanConfig, Vec3, VolumeSpec};

fn single_sphere(center: Vec3, radius: f64, mu: f64) -> LegPhantom {
    let mut ph = LegPhantom::empty();
    ph.thigh.push(Primitive::sphere(center, radius, Material::SoftTissue, mu));
    ph
}

fn still(n: usize) -> Vec<LegPose> {
    vec![LegPose { thigh: Affine4::identity(), shank: Affine4::identity() }; n]
}

#[test]
fn static_sphere_is_reconstructed_quantitatively() {
    let geom = ScanConfig::desk().build().unwrap();
    let grid = VolumeSpec::desk().grid(&geom.rotation_center).unwrap();
    let center = grid.position(64, 64, 64);
    let mu = 20.0;
    let ph = single_sphere(center, 0.03, mu);
    let stack = render_stack(&ph, &still(geom.n_proj), &geom);
    let vol = fbp(&stack, &geom, &grid, &FilterConfig::default(), None).unwrap();

    let value = vol.get(64, 64, 64);
    assert!((value - mu).abs() < 0.05 * mu, "center value {value}");

    let truth = voxelize(&ph, &still(1)[0], &grid);
    let a = vol.normalized_with(0.0, mu);
    let b = truth.normalized_with(0.0, mu);
    let s = ssim3d(&a, &b, None).unwrap();
    assert!(s > 0.9, "ssim {s}");
}

#[test]
fn point_like_sphere_is_localized() {
    let geom = ScanConfig::desk().build().unwrap();
    let grid = Grid::centered([64, 64, 64], 1e-3, &geom.rotation_center);
    let target = [40usize, 21, 37];
    let center = grid.position(target[0], target[1], target[2]);
    let ph = single_sphere(center, 1e-3, 500.0);
    let stack = render_stack(&ph, &still(geom.n_proj), &geom);
    let vol = fbp(&stack, &geom, &grid, &FilterConfig::default(), None).unwrap();
    let peak = vol.argmax();
    for k in 0..3 {
        assert!((peak[k] as i64 - target[k] as i64).abs() <= 1, "{peak:?} vs {target:?}");
    }
}
