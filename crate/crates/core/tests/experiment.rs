use std::path::Path;

use imu_moco::experiment::{
    run_experiment, run_noise_sweep, ArtifactKind, ExperimentConfig, Manifest, MotionSource, NoiseCell, Stage,
    SweepConfig, METRICS_CSV, METRICS_HEADER,
};
use imu_moco::io::{load_stack, load_volume};
use imu_moco::phantom::SwayParams;
use imu_moco::recon::Method;
use imu_moco::{ScanConfig, VolumeSpec};

/// Desk trajectory with a coarse detector and volume.
fn small(id: &str) -> ExperimentConfig {
    ExperimentConfig {
        id: id.into(),
        scan: Some(ScanConfig {
            det_cols: 78,
            det_rows: 60,
            pixel_mm: 4.928,
            ..ScanConfig::desk()
        }),
        volume: Some(VolumeSpec {
            dims: [32, 48, 32],
            spacing_mm: 4.0,
            center_mm: None,
        }),
        motion: MotionSource::Synthetic(SwayParams {
            duration_s: 8.5,
            ..SwayParams::default()
        }),
        seed: 3,
        ..ExperimentConfig::default()
    }
}

fn check_manifest(dir: &Path) -> Manifest {
    let manifest = Manifest::load(dir).unwrap();
    assert!(!manifest.artifacts.is_empty());
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", a.path));
        match a.kind {
            ArtifactKind::Json => {
                serde_json::from_slice::<serde_json::Value>(&bytes).unwrap();
            }
            ArtifactKind::Csv => {
                let text = String::from_utf8(bytes).unwrap();
                let mut lines = text.lines().filter(|l| !l.starts_with('#'));
                let width = lines.next().unwrap().split(',').count();
                for l in lines {
                    assert_eq!(l.split(',').count(), width, "{}: {l}", a.path);
                }
            }
            ArtifactKind::Raw => {
                if a.path.starts_with("volumes/") {
                    load_volume(&path).unwrap();
                } else {
                    load_stack(&path).unwrap();
                }
            }
            ArtifactKind::Pgm => assert!(bytes.starts_with(b"P5\n")),
        }
    }
    manifest
}

#[test]
fn full_pipeline_writes_parseable_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("full");
    run_experiment(&cfg, dir.path(), Stage::Evaluate).unwrap();
    let manifest = check_manifest(dir.path());
    for needed in [
        "config.json",
        "projections/moving.raw",
        "imu/shank.csv",
        "poses/thigh.csv",
        "motion.csv",
        "volumes/reference.raw",
        "volumes/mls3d.raw",
        "slices/rigid.pgm",
        "metrics.csv",
        "metrics.json",
    ] {
        assert!(manifest.artifacts.iter().any(|a| a.path == needed), "{needed}");
    }

    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 4 * 3);

    let again = tempfile::tempdir().unwrap();
    run_experiment(&cfg, again.path(), Stage::Evaluate).unwrap();
    assert_eq!(std::fs::read(again.path().join(METRICS_CSV)).unwrap(), csv.as_bytes());
    assert_eq!(Manifest::load(again.path()).unwrap(), manifest);
}

#[test]
fn static_scan_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        motion: MotionSource::Synthetic(SwayParams::still(8.5, 120.0)),
        methods: vec![Method::Uncorrected],
        ..small("static")
    };
    run_experiment(&cfg, dir.path(), Stage::Evaluate).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    for line in csv.lines().skip(1) {
        let ssim: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(ssim > 0.999, "{line}");
    }
}

#[test]
fn early_stages_stop_early() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_experiment(&small("early"), dir.path(), Stage::Init).unwrap();
    assert_eq!(manifest.stages, vec!["init"]);
    assert!(dir.path().join("init.json").exists());
    assert!(!dir.path().join("motion.csv").exists());
    check_manifest(dir.path());
}

#[test]
fn missing_motion_file_is_reported_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        motion: MotionSource::Csv {
            path: dir.path().join("absent.csv"),
        },
        ..small("missing")
    };
    let err = run_experiment(&cfg, dir.path(), Stage::Evaluate).unwrap_err();
    assert!(err.to_string().contains("simulate"), "{err}");
    assert!(!err.is_config());
}

#[test]
fn sweep_table_has_the_configured_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        noise: imu_moco::experiment::NoiseConfig {
            trials: 2,
            ..Default::default()
        },
        sweep: SweepConfig {
            f_a: vec![None, Some(0), Some(5)],
            f_g: vec![None, Some(5)],
            reconstruct: vec![NoiseCell::CLEAN],
        },
        ..small("sweep")
    };
    let (_, table) = run_noise_sweep(&cfg, dir.path()).unwrap();
    let clean = table.get(NoiseCell::CLEAN).unwrap().error;
    assert_eq!((clean.translation_mm, clean.rotation_deg), (0.0, 0.0));
    let loud = table.get(NoiseCell::new(0, 5)).unwrap().error.translation_mm;
    let quiet = table.get(NoiseCell::new(5, 5)).unwrap().error.translation_mm;
    assert!(loud > 100.0 * quiet, "{loud} vs {quiet}");

    let text = std::fs::read_to_string(dir.path().join("sweep/table.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("f_a\\f_g,none,5\n"));
    let metrics = std::fs::read_to_string(dir.path().join("sweep/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    check_manifest(dir.path());
}
