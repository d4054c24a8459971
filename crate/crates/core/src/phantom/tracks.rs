//! Hip / knee / ankle trajectories: synthetic sway generation and CSV I/O.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Vec3;

/// Tolerance on per-frame segment-length changes (m).
pub const RIGIDITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointTracks {
    pub sample_rate_hz: f64,
    pub hip: Vec<Vec3>,
    pub knee: Vec<Vec3>,
    pub ankle: Vec<Vec3>,
}

impl JointTracks {
    pub fn len(&self) -> usize {
        self.knee.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knee.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn thigh_length(&self) -> f64 {
        (self.hip[0] - self.knee[0]).norm()
    }

    pub fn shank_length(&self) -> f64 {
        (self.knee[0] - self.ankle[0]).norm()
    }

    /// Checks equal lengths, at least two frames and rigid segments.
    pub fn validate(&self) -> Result<()> {
        let n = self.knee.len();
        if self.hip.len() != n || self.ankle.len() != n {
            return Err(Error::Format {
                line: 0,
                message: "joint sequences differ in length".into(),
            });
        }
        if n < 2 {
            return Err(Error::Format {
                line: 0,
                message: format!("need at least 2 frames, got {n}"),
            });
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let (lt, ls) = (self.thigh_length(), self.shank_length());
        for k in 0..n {
            let (a, b) = ((self.hip[k] - self.knee[k]).norm(), (self.knee[k] - self.ankle[k]).norm());
            if (a - lt).abs() > RIGIDITY_TOL || (b - ls).abs() > RIGIDITY_TOL {
                return Err(Error::Format {
                    line: k,
                    message: format!(
                        "segment lengths change at frame {k}: thigh {a:.9} m vs {lt:.9} m, shank {b:.9} m vs {ls:.9} m"
                    ),
                });
            }
        }
        Ok(())
    }

    /// Frame `k` repeated for the whole duration.
    pub fn frozen_at(&self, k: usize) -> JointTracks {
        let n = self.len();
        JointTracks {
            sample_rate_hz: self.sample_rate_hz,
            hip: vec![self.hip[k]; n],
            knee: vec![self.knee[k]; n],
            ankle: vec![self.ankle[k]; n],
        }
    }
}

/// Parameters of the synthetic standing-sway generator.
///
/// The knee follows `knee_start` plus a sum of one sinusoid per world axis;
/// the knee flexion angle is `squat + modulation + linear drift`. The leg
/// bends in the x-y plane with the knee pointing toward +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwayParams {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub squat_angle_deg: f64,
    /// Per-axis sway amplitude (m).
    pub amplitudes_m: [f64; 3],
    pub freqs_hz: [f64; 3],
    pub flexion_mod_deg: f64,
    pub flexion_mod_hz: f64,
    /// Flexion change accumulated linearly over the whole duration.
    pub flexion_drift_deg: f64,
    pub thigh_length_m: f64,
    pub shank_length_m: f64,
    /// Knee position at t = 0 (m).
    pub knee_start_m: [f64; 3],
    pub seed: u64,
}

impl Default for SwayParams {
    fn default() -> Self {
        SwayParams {
            duration_s: 20.0,
            rate_hz: 120.0,
            squat_angle_deg: 30.0,
            amplitudes_m: [0.004, 0.0015, 0.004],
            freqs_hz: [0.25, 0.4, 0.3],
            flexion_mod_deg: 0.5,
            flexion_mod_hz: 0.2,
            flexion_drift_deg: 0.0,
            thigh_length_m: 0.42,
            shank_length_m: 0.40,
            knee_start_m: [0.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl SwayParams {
    /// No sway, no flexion change: every frame equals the first.
    pub fn still(duration_s: f64, rate_hz: f64) -> Self {
        SwayParams {
            duration_s,
            rate_hz,
            amplitudes_m: [0.0; 3],
            flexion_mod_deg: 0.0,
            flexion_drift_deg: 0.0,
            ..SwayParams::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("duration_s", self.duration_s)?;
        pos("rate_hz", self.rate_hz)?;
        pos("thigh_length_m", self.thigh_length_m)?;
        pos("shank_length_m", self.shank_length_m)?;
        if self.amplitudes_m.iter().any(|a| !(a.is_finite() && *a >= 0.0))
            || self.flexion_mod_deg < 0.0
        {
            return Err(Error::Config("sway amplitudes must be non-negative".into()));
        }
        let all = [
            self.squat_angle_deg,
            self.flexion_mod_hz,
            self.flexion_drift_deg,
            self.freqs_hz[0],
            self.freqs_hz[1],
            self.freqs_hz[2],
        ];
        if all.iter().any(|x| !x.is_finite()) || self.knee_start_m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("sway parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Hip and ankle for a given knee position and flexion angle (radians).
pub fn leg_pose(knee: &Vec3, flexion: f64, thigh: f64, shank: f64) -> (Vec3, Vec3) {
    let (s, c) = (0.5 * flexion).sin_cos();
    let hip = knee + thigh * Vec3::new(-s, c, 0.0);
    let ankle = knee + shank * Vec3::new(-s, -c, 0.0);
    (hip, ankle)
}

/// Deterministic, infinitely smooth sway trajectories.
pub fn synthesize_sway_tracks(p: &SwayParams) -> Result<JointTracks> {
    p.validate()?;
    let n = (p.duration_s * p.rate_hz).round() as usize;
    if n < 2 {
        return Err(Error::Config("duration too short for two frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let phases: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let knee0 = Vec3::from(p.knee_start_m);
    let sway = |t: f64| {
        Vec3::from_fn(|a, _| {
            p.amplitudes_m[a] * ((2.0 * PI * p.freqs_hz[a] * t + phases[a]).sin() - phases[a].sin())
        })
    };
    let flexion = |t: f64| {
        let m = (2.0 * PI * p.flexion_mod_hz * t + phases[3]).sin() - phases[3].sin();
        (p.squat_angle_deg + p.flexion_mod_deg * m + p.flexion_drift_deg * t / p.duration_s).to_radians()
    };

    let mut tracks = JointTracks {
        sample_rate_hz: p.rate_hz,
        hip: Vec::with_capacity(n),
        knee: Vec::with_capacity(n),
        ankle: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = k as f64 / p.rate_hz;
        let knee = knee0 + sway(t);
        let (hip, ankle) = leg_pose(&knee, flexion(t), p.thigh_length_m, p.shank_length_m);
        tracks.hip.push(hip);
        tracks.knee.push(knee);
        tracks.ankle.push(ankle);
    }
    Ok(tracks)
}

const HEADER: &str = "t,hip_x,hip_y,hip_z,knee_x,knee_y,knee_z,ankle_x,ankle_y,ankle_z";

/// Length unit used when writing joint-track CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthUnit {
    Meter,
    Millimeter,
}

impl LengthUnit {
    fn scale_to_m(self) -> f64 {
        match self {
            LengthUnit::Meter => 1.0,
            LengthUnit::Millimeter => 1e-3,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            LengthUnit::Meter => "m",
            LengthUnit::Millimeter => "mm",
        }
    }
}

pub fn write_tracks_csv<W: Write>(tracks: &JointTracks, unit: LengthUnit, mut w: W) -> Result<()> {
    let s = 1.0 / unit.scale_to_m();
    writeln!(w, "# units: {}", unit.tag())?;
    writeln!(w, "{HEADER}")?;
    for k in 0..tracks.len() {
        let t = k as f64 / tracks.sample_rate_hz;
        let (h, kn, a) = (tracks.hip[k] * s, tracks.knee[k] * s, tracks.ankle[k] * s);
        writeln!(
            w,
            "{t},{},{},{},{},{},{},{},{},{}",
            h.x, h.y, h.z, kn.x, kn.y, kn.z, a.x, a.y, a.z
        )?;
    }
    Ok(())
}

pub fn save_tracks_csv(tracks: &JointTracks, unit: LengthUnit, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_tracks_csv(tracks, unit, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

pub fn load_tracks_csv(path: &Path) -> Result<JointTracks> {
    let file = std::fs::File::open(path)?;
    read_tracks_csv(std::io::BufReader::new(file))
}

/// Parses the joint-track CSV format. Units default to meters unless a
/// `# units: mm` comment precedes the data.
pub fn read_tracks_csv<R: BufRead>(r: R) -> Result<JointTracks> {
    let mut scale = 1.0;
    let mut header_seen = false;
    let mut times = Vec::new();
    let (mut hip, mut knee, mut ankle) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(u) = comment.trim().strip_prefix("units:") {
                scale = match u.trim() {
                    "m" => 1.0,
                    "mm" => 1e-3,
                    other => {
                        return Err(Error::Format {
                            line: lineno,
                            message: format!("unknown unit `{other}` (expected mm or m)"),
                        })
                    }
                };
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if cols.join(",") != HEADER {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("expected header `{HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        if cells.len() != 10 {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected 10 columns, found {}", cells.len()),
            });
        }
        let mut vals = [0.0; 10];
        for (j, c) in cells.iter().enumerate() {
            vals[j] = c.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Format {
                    line: lineno,
                    message: format!("column {} is not a finite number: `{}`", j + 1, c.trim()),
                }
            })?;
        }
        times.push(vals[0]);
        hip.push(Vec3::new(vals[1], vals[2], vals[3]) * scale);
        knee.push(Vec3::new(vals[4], vals[5], vals[6]) * scale);
        ankle.push(Vec3::new(vals[7], vals[8], vals[9]) * scale);
    }
    if times.len() < 2 {
        return Err(Error::Format {
            line: 0,
            message: format!("need at least 2 frames, got {}", times.len()),
        });
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format {
            line: 0,
            message: "time column must increase".into(),
        });
    }
    for (k, t) in times.iter().enumerate() {
        if (t - times[0] - k as f64 * dt).abs() > 1e-6 {
            return Err(Error::Format {
                line: k,
                message: "samples are not uniformly spaced in time".into(),
            });
        }
    }
    let tracks = JointTracks {
        sample_rate_hz: 1.0 / dt,
        hip,
        knee,
        ankle,
    };
    tracks.validate()?;
    Ok(tracks)
}
