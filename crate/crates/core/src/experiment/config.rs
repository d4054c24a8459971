//! Versioned JSON configuration of an experiment run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::ScanConfig;
use crate::moco::MocoConfig;
use crate::phantom::{Attenuation, SwayParams};
use crate::recon::{FilterConfig, Method};
use crate::volume::VolumeSpec;

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn scan(self) -> ScanConfig {
        match self {
            Profile::Paper => ScanConfig::paper(),
            Profile::Desk => ScanConfig::desk(),
        }
    }

    pub fn volume(self) -> VolumeSpec {
        match self {
            Profile::Paper => VolumeSpec::paper(),
            Profile::Desk => VolumeSpec::desk(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper or desk)"))),
        }
    }
}

/// Where the joint trajectories come from.
///
/// For synthetic motion the `seed` inside the parameters is ignored; the run
/// derives it from the master seed so that one number controls a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSource {
    Synthetic(SwayParams),
    /// Joint-track CSV as written by `save_tracks_csv`.
    Csv { path: PathBuf },
}

impl Default for MotionSource {
    fn default() -> Self {
        MotionSource::Synthetic(SwayParams {
            duration_s: 10.0,
            ..SwayParams::default()
        })
    }
}

/// Sensor noise applied in the main pipeline, and the number of trials per
/// cell in the noise sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub f_a: Option<u32>,
    pub f_g: Option<u32>,
    /// Overrides the seed derived from the master seed.
    pub seed: Option<u64>,
    pub trials: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            f_a: None,
            f_g: None,
            seed: None,
            trials: 5,
        }
    }
}

/// One `(f_a, f_g)` cell; `None` is a noise-free channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCell {
    pub f_a: Option<u32>,
    pub f_g: Option<u32>,
}

impl NoiseCell {
    pub const CLEAN: NoiseCell = NoiseCell { f_a: None, f_g: None };

    pub fn new(f_a: u32, f_g: u32) -> Self {
        NoiseCell {
            f_a: Some(f_a),
            f_g: Some(f_g),
        }
    }

    pub fn label(&self) -> String {
        format!("{}_{}", level_label(self.f_a), level_label(self.f_g))
    }
}

pub(crate) fn level_label(f: Option<u32>) -> String {
    f.map_or_else(|| "none".to_string(), |f| f.to_string())
}

/// Grid of the noise sweep. Rows are accelerometer levels, columns
/// gyroscope levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub f_a: Vec<Option<u32>>,
    pub f_g: Vec<Option<u32>>,
    /// Cells for which a rigid reconstruction from the first trial's noisy
    /// signals is also computed and evaluated.
    pub reconstruct: Vec<NoiseCell>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let levels: Vec<Option<u32>> = std::iter::once(None).chain((0..=5).map(Some)).collect();
        SweepConfig {
            f_a: levels.clone(),
            f_g: levels,
            reconstruct: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Replaces the profile's scan parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    /// Replaces the profile's volume layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeSpec>,
    #[serde(default)]
    pub motion: MotionSource,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub moco: MocoConfig,
    #[serde(default)]
    pub attenuation: Attenuation,
    /// Distance of the three axis fiducials from the sensor origin.
    #[serde(default = "default_arm")]
    pub fiducial_arm_mm: f64,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_id() -> String {
    "experiment".into()
}

fn default_profile() -> Profile {
    Profile::Desk
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_arm() -> f64 {
    20.0
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            id: default_id(),
            profile: default_profile(),
            scan: None,
            volume: None,
            motion: MotionSource::default(),
            noise: NoiseConfig::default(),
            methods: default_methods(),
            seed: 0,
            output_dir: default_output_dir(),
            filter: FilterConfig::default(),
            moco: MocoConfig::default(),
            attenuation: Attenuation::default(),
            fiducial_arm_mm: default_arm(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn scan_config(&self) -> ScanConfig {
        self.scan.clone().unwrap_or_else(|| self.profile.scan())
    }

    pub fn volume_spec(&self) -> VolumeSpec {
        self.volume.clone().unwrap_or_else(|| self.profile.volume())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.id.is_empty() || self.id.contains([',', '\n', '"']) {
            return Err(Error::Config("id must be non-empty and free of commas, quotes and newlines".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.noise.trials == 0 {
            return Err(Error::Config("noise.trials must be at least 1".into()));
        }
        if self.sweep.f_a.is_empty() || self.sweep.f_g.is_empty() {
            return Err(Error::Config("the sweep grid must not be empty".into()));
        }
        if !(self.fiducial_arm_mm.is_finite() && self.fiducial_arm_mm > 0.0) {
            return Err(Error::Config("fiducial_arm_mm must be positive".into()));
        }
        self.moco.validate()
    }
}

/// Per-stage seed: the first eight bytes of `SHA-256(master_le || label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
