//! Motion-estimation error as a function of accelerometer and gyroscope
//! noise levels.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::experiment::config::{derive_seed, level_label, ExperimentConfig, NoiseCell};
use crate::experiment::pipeline::{
    masks, observe_sensor, reconstruct_rigid, rigid_motion, velocity_from, ObservedPoses, Simulation,
};
use crate::imu::{add_noise, NoiseSpec};
use crate::metrics::{evaluate_regions, motion_rmse, MetricReport, MotionError};
use crate::moco::MotionSeries;
use crate::volume::Volume;

/// Trial-averaged error of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub cell: NoiseCell,
    pub error: MotionError,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub f_a: Vec<Option<u32>>,
    pub f_g: Vec<Option<u32>>,
    /// Row-major over `f_a` then `f_g`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn get(&self, cell: NoiseCell) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.cell == cell)
    }

    /// Rows `f_a`, columns `f_g`, cells `"t_mm / r_deg"`.
    pub fn to_table_csv(&self) -> String {
        let mut s = String::from("f_a\\f_g");
        for g in &self.f_g {
            let _ = write!(s, ",{}", level_label(*g));
        }
        s.push('\n');
        for (r, a) in self.f_a.iter().enumerate() {
            s.push_str(&level_label(*a));
            for c in 0..self.f_g.len() {
                let e = self.cells[r * self.f_g.len() + c].error;
                let _ = write!(s, ",{} / {}", fmt_sig(e.translation_mm), fmt_sig(e.rotation_deg));
            }
            s.push('\n');
        }
        s
    }

    /// One row per cell with full-precision values.
    pub fn to_long_csv(&self) -> String {
        let mut s = String::from("f_a,f_g,trials,translation_mm,rotation_deg\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e}",
                level_label(c.cell.f_a),
                level_label(c.cell.f_g),
                c.trials,
                c.error.translation_mm,
                c.error.rotation_deg
            );
        }
        s
    }
}

/// Four significant digits, plain notation where that stays readable.
fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if (1e-3..1e5).contains(&x.abs()) {
        let decimals = (3 - x.abs().log10().floor() as i32).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

/// Seed of one trial of one cell.
pub fn trial_seed(master: u64, cell: NoiseCell, trial: usize) -> u64 {
    derive_seed(master, &format!("sweep/{}/{trial}", cell.label()))
}

/// Rigid motion series from the shank sensor with the cell's noise.
pub fn noisy_motion(sim: &Simulation, obs: &ObservedPoses, cell: NoiseCell, seed: u64) -> Result<MotionSeries> {
    let series = add_noise(
        &sim.imu_shank_clean,
        &NoiseSpec {
            f_a: cell.f_a,
            f_g: cell.f_g,
            seed,
        },
    );
    let init = velocity_from(obs, &series, &sim.sync)?;
    rigid_motion(&series, &init, &sim.sync)
}

/// Shank-sensor observation used by every sweep cell.
pub fn shank_observation(cfg: &ExperimentConfig, sim: &Simulation) -> Result<ObservedPoses> {
    observe_sensor(sim, &sim.shank_mount, cfg.fiducial_arm_mm * 1e-3)
}

/// Runs every cell and trial; cells are independent jobs.
pub fn noise_sweep(cfg: &ExperimentConfig, sim: &Simulation) -> Result<SweepTable> {
    let obs = shank_observation(cfg, sim)?;
    let clean = noisy_motion(sim, &obs, NoiseCell::CLEAN, 0)?;
    let trials = cfg.noise.trials;
    let grid: Vec<NoiseCell> = cfg
        .sweep
        .f_a
        .iter()
        .flat_map(|&f_a| cfg.sweep.f_g.iter().map(move |&f_g| NoiseCell { f_a, f_g }))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&cell| {
            let mut sum = MotionError::default();
            for trial in 0..trials {
                let m = noisy_motion(sim, &obs, cell, trial_seed(cfg.seed, cell, trial))?;
                let e = motion_rmse(&clean, &m)?;
                sum.translation_mm += e.translation_mm;
                sum.rotation_deg += e.rotation_deg;
            }
            Ok(SweepCell {
                cell,
                error: MotionError {
                    translation_mm: sum.translation_mm / trials as f64,
                    rotation_deg: sum.rotation_deg / trials as f64,
                },
                trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        f_a: cfg.sweep.f_a.clone(),
        f_g: cfg.sweep.f_g.clone(),
        cells,
    })
}

/// Rigid reconstruction with the first trial's noisy motion of `cell`,
/// evaluated against `reference`.
pub fn reconstruct_cell(
    cfg: &ExperimentConfig,
    sim: &Simulation,
    obs: &ObservedPoses,
    cell: NoiseCell,
    reference: &Volume,
) -> Result<(Volume, Vec<MetricReport>)> {
    let motion = noisy_motion(sim, obs, cell, trial_seed(cfg.seed, cell, 0))?;
    let vol = reconstruct_rigid(cfg, sim, &motion)?;
    let reports = evaluate_regions(&vol, reference, &masks(sim))?;
    Ok((vol, reports))
}
