//! Stage functions of an experiment: simulate, initialize, correct,
//! reconstruct and evaluate. Each stage is a pure computation; writing
//! artifacts is left to [`super::run`].

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::config::{derive_seed, ExperimentConfig, MotionSource, NoiseCell};
use crate::geometry::ScanGeometry;
use crate::image::ProjectionStack;
use crate::imu::{add_noise, build_sync_map, gravity, simulate_imu, ImuSeries, NoiseSpec, SensorMount, SyncMap};
use crate::metrics::{evaluate_regions, MetricReport};
use crate::moco::{joints_from_imu_poses, rigid_motion_series, JointMounts, Joints, MotionSeries};
use crate::phantom::{
    forward_kinematics, load_tracks_csv, region_masks, render_stack, synthesize_sway_tracks, JointTracks, LegPhantom,
    LegPose, RegionMasks, SegmentKinematics, SwayParams,
};
use crate::pose::{estimate_initial_pose, estimate_initial_velocity, integrate_poses, FiducialModel, PoseTrack};
use crate::recon::{fbp, reconstruct, Method, ReconInputs};
use crate::rotation::{pose, Affine4, Vec3};
use crate::volume::{Grid, Volume};

/// Ground truth of a simulated scan.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub geom: ScanGeometry,
    pub grid: Grid,
    pub sync: SyncMap,
    pub tracks: JointTracks,
    pub thigh: SegmentKinematics,
    pub shank: SegmentKinematics,
    pub shank_mount: SensorMount,
    pub thigh_mount: SensorMount,
    pub mounts: JointMounts,
    pub phantom: LegPhantom,
    /// Leg pose at the first projection; the motion-free scan keeps it.
    pub reference_pose: LegPose,
    pub projections: ProjectionStack,
    pub reference_projections: ProjectionStack,
    pub imu_shank_clean: ImuSeries,
    pub imu_thigh_clean: ImuSeries,
}

impl Simulation {
    /// True world pose of a mounted sensor at IMU sample `k`.
    pub fn sensor_pose(&self, mount: &SensorMount, k: usize) -> Affine4 {
        let kin = match mount.segment {
            crate::imu::Segment::Shank => &self.shank,
            crate::imu::Segment::Thigh => &self.thigh,
        };
        let (r, p) = mount.world_pose(kin, k);
        pose(&r, &p)
    }

    pub fn leg_pose(&self, k: usize) -> LegPose {
        LegPose {
            thigh: self.thigh.pose(k),
            shank: self.shank.pose(k),
        }
    }
}

fn load_tracks(cfg: &ExperimentConfig) -> Result<JointTracks> {
    match &cfg.motion {
        MotionSource::Synthetic(p) => synthesize_sway_tracks(&SwayParams {
            seed: derive_seed(cfg.seed, "motion"),
            ..p.clone()
        }),
        MotionSource::Csv { path } => load_tracks_csv(path),
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let geom = cfg.scan_config().build()?;
    let grid = cfg.volume_spec().grid(&geom.rotation_center)?;
    let tracks = load_tracks(cfg)?;
    let (thigh, shank) = forward_kinematics(&tracks)?;
    let sync = build_sync_map(tracks.sample_rate_hz, geom.frame_rate_hz, geom.n_proj)?;
    // The pose integrator reads one sample beyond the last projection.
    sync.check_coverage(tracks.len().saturating_sub(1))?;

    let phantom = LegPhantom::standard(tracks.thigh_length(), tracks.shank_length(), &cfg.attenuation);
    let poses: Vec<LegPose> = sync
        .indices
        .iter()
        .map(|&k| LegPose {
            thigh: thigh.pose(k),
            shank: shank.pose(k),
        })
        .collect();
    let reference_pose = poses[0];
    let projections = render_stack(&phantom, &poses, &geom);
    let reference_projections = render_stack(&phantom, &vec![reference_pose; geom.n_proj], &geom);

    let shank_mount = SensorMount::shank_default();
    let thigh_mount = SensorMount::thigh_default();
    let g = gravity();
    let imu_shank_clean = simulate_imu(&shank, &shank_mount, &g);
    let imu_thigh_clean = simulate_imu(&thigh, &thigh_mount, &g);
    let mounts = JointMounts::new(shank_mount, thigh_mount, tracks.shank_length(), tracks.thigh_length());
    Ok(Simulation {
        geom,
        grid,
        sync,
        tracks,
        thigh,
        shank,
        shank_mount,
        thigh_mount,
        mounts,
        phantom,
        reference_pose,
        projections,
        reference_projections,
        imu_shank_clean,
        imu_thigh_clean,
    })
}

/// The measured IMU signals of one run.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub shank: ImuSeries,
    pub thigh: ImuSeries,
}

/// Adds noise of the given cell to both sensors. Each sensor draws from its
/// own seed derived from `seed`.
pub fn measure(sim: &Simulation, cell: NoiseCell, seed: u64) -> Measurements {
    let spec = |label: &str| NoiseSpec {
        f_a: cell.f_a,
        f_g: cell.f_g,
        seed: derive_seed(seed, label),
    };
    Measurements {
        shank: add_noise(&sim.imu_shank_clean, &spec("shank")),
        thigh: add_noise(&sim.imu_thigh_clean, &spec("thigh")),
    }
}

/// Noise of the main pipeline as configured.
pub fn configured_measurements(cfg: &ExperimentConfig, sim: &Simulation) -> Measurements {
    let cell = NoiseCell {
        f_a: cfg.noise.f_a,
        f_g: cfg.noise.f_g,
    };
    let seed = cfg.noise.seed.unwrap_or_else(|| derive_seed(cfg.seed, "noise"));
    measure(sim, cell, seed)
}

/// Sensor poses observed in the first two projections through the
/// fiducials. The velocity needs the IMU signal and is computed later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPoses {
    pub s0: Affine4,
    pub s1: Affine4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorInit {
    pub s0: Affine4,
    pub v0: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Initialization {
    pub shank: SensorInit,
    pub thigh: SensorInit,
}

/// Recovers the sensor pose at projections 0 and 1 from synthetic fiducial
/// observations.
pub fn observe_sensor(sim: &Simulation, mount: &SensorMount, arm_m: f64) -> Result<ObservedPoses> {
    let points = FiducialModel::canonical_points(arm_m);
    let mut out = [Affine4::identity(); 2];
    for (view, slot) in out.iter_mut().enumerate() {
        let p = sim.geom.matrix(view)?;
        let truth = sim.sensor_pose(mount, sim.sync.indices[view]);
        let fid = FiducialModel::observe(points, &truth, p)?;
        *slot = estimate_initial_pose(&fid, p, &sim.geom)?;
    }
    Ok(ObservedPoses { s0: out[0], s1: out[1] })
}

pub fn velocity_from(obs: &ObservedPoses, series: &ImuSeries, sync: &SyncMap) -> Result<SensorInit> {
    let v0 = estimate_initial_velocity(&obs.s0, &obs.s1, series, sync, &gravity())?;
    Ok(SensorInit { s0: obs.s0, v0 })
}

pub fn initialize(cfg: &ExperimentConfig, sim: &Simulation, m: &Measurements) -> Result<Initialization> {
    let arm = cfg.fiducial_arm_mm * 1e-3;
    let shank = observe_sensor(sim, &sim.shank_mount, arm)?;
    let thigh = observe_sensor(sim, &sim.thigh_mount, arm)?;
    Ok(Initialization {
        shank: velocity_from(&shank, &m.shank, &sim.sync)?,
        thigh: velocity_from(&thigh, &m.thigh, &sim.sync)?,
    })
}

/// Integrated sensor tracks and the correction inputs derived from them.
#[derive(Debug, Clone)]
pub struct Correction {
    pub shank_track: PoseTrack,
    pub thigh_track: PoseTrack,
    /// Rigid motion of the leg, taken from the shank sensor.
    pub motion: MotionSeries,
    /// Joint positions at every projection.
    pub joints: Vec<Joints>,
}

/// Integrates only as far as the last projection needs.
fn integrate_scan(series: &ImuSeries, init: &SensorInit, sync: &SyncMap) -> Result<PoseTrack> {
    integrate_poses(&series.prefix(sync.last() + 2), &init.s0, &init.v0, &gravity())
}

/// Rigid motion series from the shank sensor alone.
pub fn rigid_motion(series: &ImuSeries, init: &SensorInit, sync: &SyncMap) -> Result<MotionSeries> {
    rigid_motion_series(&integrate_scan(series, init, sync)?, sync)
}

pub fn correct(sim: &Simulation, m: &Measurements, init: &Initialization) -> Result<Correction> {
    let shank_track = integrate_scan(&m.shank, &init.shank, &sim.sync)?;
    let thigh_track = integrate_scan(&m.thigh, &init.thigh, &sim.sync)?;
    let motion = rigid_motion_series(&shank_track, &sim.sync)?;
    let joints = sim
        .sync
        .indices
        .iter()
        .map(|&k| joints_from_imu_poses(&shank_track.poses[k], &thigh_track.poses[k], &sim.mounts))
        .collect();
    Ok(Correction {
        shank_track,
        thigh_track,
        motion,
        joints,
    })
}

/// FBP of the motion-free scan.
pub fn reference_volume(cfg: &ExperimentConfig, sim: &Simulation) -> Result<Volume> {
    fbp(&sim.reference_projections, &sim.geom, &sim.grid, &cfg.filter, None)
}

pub fn reconstruct_method(
    cfg: &ExperimentConfig,
    sim: &Simulation,
    corr: &Correction,
    method: Method,
) -> Result<Volume> {
    let inputs = ReconInputs {
        stack: &sim.projections,
        geom: &sim.geom,
        grid: &sim.grid,
        filter: &cfg.filter,
        moco: &cfg.moco,
        motion: Some(&corr.motion),
        joints: Some(&corr.joints),
    };
    reconstruct(method, &inputs)
}

/// Rigid reconstruction of the moving scan with an arbitrary motion series.
pub fn reconstruct_rigid(cfg: &ExperimentConfig, sim: &Simulation, motion: &MotionSeries) -> Result<Volume> {
    let inputs = ReconInputs {
        stack: &sim.projections,
        geom: &sim.geom,
        grid: &sim.grid,
        filter: &cfg.filter,
        moco: &cfg.moco,
        motion: Some(motion),
        joints: None,
    };
    reconstruct(Method::Rigid, &inputs)
}

pub fn masks(sim: &Simulation) -> RegionMasks {
    region_masks(&sim.phantom, &sim.reference_pose, &sim.grid)
}

/// One evaluated method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub regions: Vec<MetricReport>,
}

pub fn evaluate(volumes: &BTreeMap<Method, Volume>, reference: &Volume, masks: &RegionMasks) -> Result<Vec<MethodReport>> {
    volumes
        .par_iter()
        .map(|(&method, vol)| {
            Ok(MethodReport {
                method,
                regions: evaluate_regions(vol, reference, masks)?,
            })
        })
        .collect()
}

/// Everything a full run computes, for callers that want the numbers
/// rather than the files.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub simulation: Simulation,
    pub init: Initialization,
    pub correction: Correction,
    pub reference: Volume,
    pub volumes: BTreeMap<Method, Volume>,
    pub reports: Vec<MethodReport>,
}

/// Runs every stage in memory.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<Outcome> {
    let simulation = simulate(cfg).map_err(|e| e.in_stage("simulate"))?;
    let m = configured_measurements(cfg, &simulation);
    let init = initialize(cfg, &simulation, &m).map_err(|e| e.in_stage("init"))?;
    let correction = correct(&simulation, &m, &init).map_err(|e| e.in_stage("correct"))?;
    let reference = reference_volume(cfg, &simulation).map_err(|e| e.in_stage("reconstruct"))?;
    let mut volumes = BTreeMap::new();
    for &method in &cfg.methods {
        let v = reconstruct_method(cfg, &simulation, &correction, method).map_err(|e| e.in_stage("reconstruct"))?;
        volumes.insert(method, v);
    }
    let reports = evaluate(&volumes, &reference, &masks(&simulation)).map_err(|e| e.in_stage("evaluate"))?;
    Ok(Outcome {
        simulation,
        init,
        correction,
        reference,
        volumes,
        reports,
    })
}

/// Looks up one region's report.
pub fn find_report(reports: &[MethodReport], method: Method, region: crate::metrics::Region) -> Result<MetricReport> {
    reports
        .iter()
        .find(|r| r.method == method)
        .and_then(|r| r.regions.iter().find(|x| x.region == region))
        .cloned()
        .ok_or_else(|| Error::MissingPrerequisite(format!("no {} report for {method}", region.as_str())))
}
