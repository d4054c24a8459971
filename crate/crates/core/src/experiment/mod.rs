//! Experiment orchestration: configuration, pipeline stages, the noise
//! sweep, and artifact emission with a manifest.
//!
//! Every stage is recomputed from the configuration, so running a later
//! stage never depends on files left behind by an earlier invocation. All
//! files are written atomically and listed in `manifest.json`.

pub mod config;
pub mod pipeline;
pub mod sweep;

pub use config::{
    derive_seed, ExperimentConfig, MotionSource, NoiseCell, NoiseConfig, Profile, SweepConfig, CONFIG_VERSION,
};
pub use pipeline::{
    configured_measurements, correct, evaluate, initialize, measure, reconstruct_method, reconstruct_rigid,
    reference_volume, rigid_motion, run_in_memory, simulate, Correction, Initialization, Measurements, MethodReport,
    Outcome, SensorInit, Simulation,
};
pub use sweep::{noise_sweep, noisy_motion, reconstruct_cell, shank_observation, SweepCell, SweepTable};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imu::write_imu_csv;
use crate::io::{save_stack, save_volume, slice_pgm, write_atomic, write_motion_csv};
use crate::metrics::{MetricReport, Region};
use crate::phantom::{write_tracks_csv, LengthUnit};
use crate::pose::write_pose_csv;
use crate::recon::Method;
use crate::rotation::{translation_of, Vec3};
use crate::volume::Volume;

/// How far a run proceeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Init,
    Correct,
    Reconstruct,
    Evaluate,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Init => "init",
            Stage::Correct => "correct",
            Stage::Reconstruct => "reconstruct",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Json,
    Csv,
    Raw,
    Pgm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Relative to the output directory, with `/` separators.
    pub path: String,
    pub kind: ArtifactKind,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub id: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Manifest> {
        Ok(serde_json::from_slice(&std::fs::read(out_dir.join(MANIFEST))?)?)
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_HEADER: &str = "experiment,method,region,ssim,rmse";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Collects artifacts for one output directory.
struct Writer {
    root: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn new(cfg: &ExperimentConfig, root: &Path) -> Self {
        Writer {
            root: root.to_path_buf(),
            manifest: Manifest {
                version: CONFIG_VERSION,
                id: cfg.id.clone(),
                seed: cfg.seed,
                stages: vec![],
                artifacts: vec![],
            },
        }
    }

    fn record(&mut self, rel: &str, kind: ArtifactKind) -> Result<()> {
        let bytes = std::fs::read(self.root.join(rel))?;
        self.manifest.artifacts.retain(|a| a.path != rel);
        self.manifest.artifacts.push(Artifact {
            path: rel.to_string(),
            kind,
            sha256: hex(&Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn bytes(&mut self, rel: &str, kind: ArtifactKind, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.record(rel, kind)
    }

    fn text(&mut self, rel: &str, kind: ArtifactKind, text: &str) -> Result<()> {
        self.bytes(rel, kind, text.as_bytes())
    }

    fn csv_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(rel, ArtifactKind::Csv, &buf)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(rel, ArtifactKind::Json, &text)
    }

    /// Raw data plus its JSON sidecar.
    fn raw(&mut self, rel: &str, save: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        save(&path)?;
        self.record(rel, ArtifactKind::Raw)?;
        let sidecar = Path::new(rel).with_extension("json");
        self.record(&sidecar.to_string_lossy().replace('\\', "/"), ArtifactKind::Json)
    }

    fn finish(mut self, stage: &str) -> Result<Manifest> {
        self.manifest.stages.push(stage.to_string());
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(self.manifest)
    }
}

#[derive(Serialize)]
struct InitDoc {
    shank: SensorDoc,
    thigh: SensorDoc,
}

#[derive(Serialize)]
struct SensorDoc {
    /// Row-major 4x4 pose, translation in m.
    s0: [f64; 16],
    position_mm: [f64; 3],
    v0_mm_s: [f64; 3],
}

impl SensorDoc {
    fn new(init: &SensorInit) -> Self {
        let mut s0 = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                s0[4 * r + c] = init.s0[(r, c)];
            }
        }
        let mm = |v: Vec3| [v.x * 1e3, v.y * 1e3, v.z * 1e3];
        SensorDoc {
            s0,
            position_mm: mm(translation_of(&init.s0)),
            v0_mm_s: mm(init.v0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub region: Region,
    pub ssim: f64,
    pub rmse: f64,
}

/// Metrics CSV with fixed formatting, so equal numbers give equal bytes.
pub fn metrics_csv(id: &str, reports: &[MethodReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in reports {
        for m in &r.regions {
            let _ = writeln!(s, "{id},{},{},{:.9},{:.9}", r.method, m.region, m.ssim, m.rmse);
        }
    }
    s
}

fn metrics_doc(cfg: &ExperimentConfig, reports: &[MethodReport]) -> MetricsDoc {
    MetricsDoc {
        experiment: cfg.id.clone(),
        seed: cfg.seed,
        rows: reports
            .iter()
            .flat_map(|r| {
                r.regions.iter().map(move |m| MetricRow {
                    method: r.method,
                    region: m.region,
                    ssim: m.ssim,
                    rmse: m.rmse,
                })
            })
            .collect(),
    }
}

fn joints_csv(corr: &Correction) -> String {
    let mut s = String::from("view,ankle_x_mm,ankle_y_mm,ankle_z_mm,knee_x_mm,knee_y_mm,knee_z_mm,hip_x_mm,hip_y_mm,hip_z_mm\n");
    for (i, j) in corr.joints.iter().enumerate() {
        let _ = write!(s, "{i}");
        for p in [j.ankle, j.knee, j.hip] {
            let _ = write!(s, ",{},{},{}", p.x * 1e3, p.y * 1e3, p.z * 1e3);
        }
        s.push('\n');
    }
    s
}

/// Central z-slice, scaled by the reference volume's range.
fn slice_of(vol: &Volume, reference: &Volume) -> Result<Vec<u8>> {
    let (lo, hi) = reference.min_max();
    slice_pgm(&vol.normalized_with(lo, hi), vol.grid.dims[2] / 2)
}

fn write_simulation(w: &mut Writer, sim: &Simulation, m: &Measurements) -> Result<()> {
    w.json("geometry.json", &sim.geom.to_json())?;
    w.csv_with("tracks.csv", |b| write_tracks_csv(&sim.tracks, LengthUnit::Millimeter, b))?;
    w.raw("projections/moving.raw", |p| save_stack(&sim.projections, p))?;
    w.raw("projections/reference.raw", |p| save_stack(&sim.reference_projections, p))?;
    w.csv_with("imu/shank.csv", |b| write_imu_csv(&m.shank, b))?;
    w.csv_with("imu/thigh.csv", |b| write_imu_csv(&m.thigh, b))
}

/// Runs the pipeline up to and including `until`, writing that stage's
/// artifacts and those of every earlier stage into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, until: Stage) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut w = Writer::new(cfg, out_dir);
    let mut text = cfg.to_json()?;
    text.push('\n');
    w.text("config.json", ArtifactKind::Json, &text)?;

    let stage = |s: Stage| move |e: Error| e.in_stage(s.as_str());

    let sim = simulate(cfg).map_err(stage(Stage::Simulate))?;
    let m = configured_measurements(cfg, &sim);
    write_simulation(&mut w, &sim, &m).map_err(stage(Stage::Simulate))?;
    if until == Stage::Simulate {
        return w.finish(until.as_str());
    }

    let init = initialize(cfg, &sim, &m).map_err(stage(Stage::Init))?;
    w.json(
        "init.json",
        &InitDoc {
            shank: SensorDoc::new(&init.shank),
            thigh: SensorDoc::new(&init.thigh),
        },
    )
    .map_err(stage(Stage::Init))?;
    if until == Stage::Init {
        return w.finish(until.as_str());
    }

    let corr = correct(&sim, &m, &init).map_err(stage(Stage::Correct))?;
    (|| -> Result<()> {
        w.csv_with("poses/shank.csv", |b| write_pose_csv(&corr.shank_track, b))?;
        w.csv_with("poses/thigh.csv", |b| write_pose_csv(&corr.thigh_track, b))?;
        w.csv_with("motion.csv", |b| write_motion_csv(&corr.motion, b))?;
        w.text("joints.csv", ArtifactKind::Csv, &joints_csv(&corr))
    })()
    .map_err(stage(Stage::Correct))?;
    if until == Stage::Correct {
        return w.finish(until.as_str());
    }

    let reference = reference_volume(cfg, &sim).map_err(stage(Stage::Reconstruct))?;
    let mut volumes = BTreeMap::new();
    for &method in &cfg.methods {
        let v = reconstruct_method(cfg, &sim, &corr, method).map_err(stage(Stage::Reconstruct))?;
        volumes.insert(method, v);
    }
    (|| -> Result<()> {
        w.raw("volumes/reference.raw", |p| save_volume(&reference, p))?;
        w.bytes("slices/reference.pgm", ArtifactKind::Pgm, &slice_of(&reference, &reference)?)?;
        for (method, vol) in &volumes {
            w.raw(&format!("volumes/{method}.raw"), |p| save_volume(vol, p))?;
            w.bytes(&format!("slices/{method}.pgm"), ArtifactKind::Pgm, &slice_of(vol, &reference)?)?;
        }
        Ok(())
    })()
    .map_err(stage(Stage::Reconstruct))?;
    if until == Stage::Reconstruct {
        return w.finish(until.as_str());
    }

    let reports = evaluate(&volumes, &reference, &pipeline::masks(&sim)).map_err(stage(Stage::Evaluate))?;
    (|| -> Result<()> {
        w.text(METRICS_CSV, ArtifactKind::Csv, &metrics_csv(&cfg.id, &reports))?;
        w.json(METRICS_JSON, &metrics_doc(cfg, &reports))
    })()
    .map_err(stage(Stage::Evaluate))?;
    w.finish(until.as_str())
}

/// Runs the noise sweep and writes `sweep/table.csv`, `sweep/cells.csv`
/// and, for configured cells, `sweep/metrics.csv`.
pub fn run_noise_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Manifest, SweepTable)> {
    const STAGE: &str = "noise-sweep";
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut w = match Manifest::load(out_dir) {
        Ok(existing) if existing.id == cfg.id && existing.seed == cfg.seed => Writer {
            root: out_dir.to_path_buf(),
            manifest: existing,
        },
        _ => Writer::new(cfg, out_dir),
    };
    let sim = simulate(cfg).map_err(|e| e.in_stage("simulate"))?;
    let table = noise_sweep(cfg, &sim).map_err(|e| e.in_stage(STAGE))?;
    (|| -> Result<()> {
        w.text("sweep/table.csv", ArtifactKind::Csv, &table.to_table_csv())?;
        w.text("sweep/cells.csv", ArtifactKind::Csv, &table.to_long_csv())?;
        if !cfg.sweep.reconstruct.is_empty() {
            let reference = reference_volume(cfg, &sim)?;
            let obs = shank_observation(cfg, &sim)?;
            let mut s = String::from("f_a,f_g,region,ssim,rmse\n");
            for &cell in &cfg.sweep.reconstruct {
                let (_, reports) = reconstruct_cell(cfg, &sim, &obs, cell, &reference)?;
                for MetricReport { region, ssim, rmse } in reports {
                    let _ = writeln!(
                        s,
                        "{},{},{region},{ssim:.9},{rmse:.9}",
                        config::level_label(cell.f_a),
                        config::level_label(cell.f_g)
                    );
                }
            }
            w.text("sweep/metrics.csv", ArtifactKind::Csv, &s)?;
        }
        Ok(())
    })()
    .map_err(|e| e.in_stage(STAGE))?;
    let manifest = w.finish(STAGE)?;
    Ok((manifest, table))
}
