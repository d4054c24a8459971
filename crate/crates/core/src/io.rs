//! File formats and atomic artifact writes.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, ProjectionStack};
use crate::metrics::decompose_motion;
use crate::moco::MotionSeries;
use crate::rotation::{pose, rot_x, rot_y, rot_z, Vec3};
use crate::volume::{Grid, Volume};

/// Writes `bytes` to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a header-checked CSV of finite numbers. Lines starting with `#`
/// and blank lines are skipped.
pub fn read_numeric_csv<R: BufRead>(r: R, header: &str) -> Result<Vec<Vec<f64>>> {
    let width = header.split(',').count();
    let mut header_seen = false;
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = t.split(',').map(str::trim).collect();
            if cols.join(",") != header {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("expected header `{header}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = t.split(',').collect();
        if cells.len() != width {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected {width} columns, found {}", cells.len()),
            });
        }
        let row = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Format {
                    line: lineno,
                    message: format!("column {} is not a finite number: `{}`", j + 1, c.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if !header_seen {
        return Err(Error::Format {
            line: 0,
            message: "missing header".into(),
        });
    }
    Ok(rows)
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|x| (x as f32).to_le_bytes()).collect()
}

fn f32_values(bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != 4 * expected {
        return Err(Error::Shape(format!(
            "raw file holds {} bytes, expected {}",
            bytes.len(),
            4 * expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    /// Center of voxel (0, 0, 0).
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

/// Raw little-endian `f32` samples (x fastest) plus a JSON sidecar next to
/// it with the same stem.
pub fn save_volume(vol: &Volume, raw_path: &Path) -> Result<()> {
    let header = VolumeHeader {
        dims: vol.grid.dims,
        spacing_mm: vol.grid.spacing * 1e3,
        origin_mm: (vol.grid.origin * 1e3).into(),
        dtype: "f32le".into(),
    };
    write_atomic(raw_path, &f32_bytes(vol.data.iter().copied()))?;
    write_atomic(&sidecar(raw_path), serde_json::to_string_pretty(&header)?.as_bytes())
}

pub fn load_volume(raw_path: &Path) -> Result<Volume> {
    let header: VolumeHeader = serde_json::from_slice(&std::fs::read(sidecar(raw_path))?)?;
    let grid = Grid {
        dims: header.dims,
        spacing: header.spacing_mm * 1e-3,
        origin: Vec3::from(header.origin_mm) * 1e-3,
    };
    let data = f32_values(&std::fs::read(raw_path)?, grid.len())?;
    Ok(Volume { grid, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub views: usize,
    pub cols: usize,
    pub rows: usize,
    pub pixel_mm: f64,
    pub dtype: String,
}

/// Views stored back to back, each row-major.
pub fn save_stack(stack: &ProjectionStack, raw_path: &Path) -> Result<()> {
    let header = StackHeader {
        views: stack.views(),
        cols: stack.cols,
        rows: stack.rows,
        pixel_mm: stack.pixel * 1e3,
        dtype: "f32le".into(),
    };
    write_atomic(
        raw_path,
        &f32_bytes(stack.images.iter().flat_map(|im| im.data.iter().copied())),
    )?;
    write_atomic(&sidecar(raw_path), serde_json::to_string_pretty(&header)?.as_bytes())
}

pub fn load_stack(raw_path: &Path) -> Result<ProjectionStack> {
    let h: StackHeader = serde_json::from_slice(&std::fs::read(sidecar(raw_path))?)?;
    let n = h.cols * h.rows;
    let data = f32_values(&std::fs::read(raw_path)?, h.views * n)?;
    let images = data
        .chunks_exact(n.max(1))
        .map(|c| Image2D {
            cols: h.cols,
            rows: h.rows,
            data: c.to_vec(),
        })
        .collect();
    ProjectionStack::from_images(images, h.pixel_mm * 1e-3)
}

/// Binary 16-bit PGM of z-slice `z`; values are clamped to `[0, 1]` and
/// mapped to `0..=65535`.
pub fn slice_pgm(vol: &Volume, z: usize) -> Result<Vec<u8>> {
    let [nx, ny, nz] = vol.grid.dims;
    if z >= nz {
        return Err(Error::Shape(format!("slice {z} out of range ({nz} slices)")));
    }
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    for y in 0..ny {
        for x in 0..nx {
            let v = vol.get(x, y, z).clamp(0.0, 1.0);
            out.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub const MOTION_HEADER: &str = "view,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg";

pub fn write_motion_csv<W: Write>(m: &MotionSeries, mut w: W) -> Result<()> {
    writeln!(w, "{MOTION_HEADER}")?;
    for (i, c) in decompose_motion(m).iter().enumerate() {
        let (t, e) = (c.translation_mm, c.euler_deg);
        writeln!(w, "{i},{},{},{},{},{},{}", t.x, t.y, t.z, e.x, e.y, e.z)?;
    }
    Ok(())
}

pub fn read_motion_csv<R: BufRead>(r: R) -> Result<MotionSeries> {
    let rows = read_numeric_csv(r, MOTION_HEADER)?;
    let matrices = rows
        .iter()
        .map(|row| {
            let e = Vec3::new(row[4], row[5], row[6]).map(f64::to_radians);
            let rot = rot_z(e.z) * rot_y(e.y) * rot_x(e.x);
            pose(&rot, &(Vec3::new(row[1], row[2], row[3]) * 1e-3))
        })
        .collect();
    Ok(MotionSeries { matrices })
}
