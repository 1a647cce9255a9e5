use std::fs;
use std::path::Path;

use pgslam::config::RunConfig;
use pgslam::pipeline::{run_pipeline, run_stage, simulate_dataset, Stage, REGISTER_FAILURES, REPORT, TIMING};

/// Box-room dataset with a short SGLD chain.
fn dataset(dir: &Path, seed: u64) -> RunConfig {
    let path = simulate_dataset("box_room", seed, dir, 2).unwrap();
    let mut config = RunConfig::load(&path).unwrap();
    config.registration.sgld_steps = 150;
    config.registration.sgld_burn_in = 50;
    config
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .filter(|(n, _)| n != TIMING)
        .collect();
    files.sort();
    files
}

#[test]
fn full_run_writes_every_artifact_and_beats_odometry() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(tmp.path(), 1);
    let report = run_pipeline(&config, false).unwrap();
    for stage in Stage::PIPELINE {
        for f in stage.outputs() {
            assert!(config.paths.output.join(f).exists(), "{stage}: {f}");
        }
    }
    assert!(config.paths.output.join(TIMING).exists());
    let (ate, odom) = (report.ate_rmse.unwrap(), report.odometry_ate_rmse.unwrap());
    assert!(ate < 0.5 * odom, "ATE {ate} vs odometry {odom}");
    assert_eq!(report.rpe.len(), config.eval.rpe_deltas.len());
    assert!(report.rpe.iter().all(|r| r.trans >= 0.0 && r.rot >= 0.0));
    let e = report.edges;
    assert_eq!(e.registered + e.failed, e.proposed);
    assert_eq!(e.kept + e.rejected, e.registered);
    assert_eq!(report.bias_segments, 1);
    assert_eq!(report.timing.len(), Stage::PIPELINE.len());
    let chi2 = &report.optimizer.chi2_trace;
    assert!(chi2.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn stage_by_stage_matches_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = dataset(tmp.path(), 2);
    run_pipeline(&config, false).unwrap();
    let full = artifacts(&config.paths.output);
    config.paths.output = tmp.path().join("staged");
    config.workers = 1;
    for stage in Stage::PIPELINE {
        let t = run_stage(&config, stage, false).unwrap();
        assert!(!t.skipped);
    }
    assert_eq!(artifacts(&config.paths.output), full);
}

#[test]
fn resume_skips_finished_stages_and_reruns_missing_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(tmp.path(), 3);
    run_pipeline(&config, false).unwrap();
    let before = artifacts(&config.paths.output);
    let report = run_pipeline(&config, true).unwrap();
    assert!(report.timing.iter().all(|t| t.skipped));
    fs::remove_file(config.paths.output.join(REPORT)).unwrap();
    let report = run_pipeline(&config, true).unwrap();
    let rerun: Vec<Stage> = report.timing.iter().filter(|t| !t.skipped).map(|t| t.stage).collect();
    assert_eq!(rerun, vec![Stage::Evaluate]);
    assert_eq!(artifacts(&config.paths.output), before);
}

#[test]
fn missing_scan_is_a_register_error_naming_the_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(tmp.path(), 4);
    fs::remove_file(tmp.path().join("scans/scan_000012.ply")).unwrap();
    run_stage(&config, Stage::Propose, false).unwrap();
    let err = run_stage(&config, Stage::Register, false).unwrap_err();
    assert_eq!(err.stage, Stage::Register);
    assert!(err.message.starts_with("edge ("), "{}", err.message);
    assert!(err.message.contains("scan 12"), "{}", err.message);
    let failures = fs::read_to_string(config.paths.output.join(REGISTER_FAILURES)).unwrap();
    assert!(failures.lines().skip(1).all(|l| l.contains(",input,")));
    assert!(failures.lines().count() > 1);
}

#[test]
fn later_stage_without_inputs_names_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(tmp.path(), 5);
    let err = run_stage(&config, Stage::Optimize, false).unwrap_err();
    assert_eq!(err.stage, Stage::Optimize);
    assert!(err.message.contains("run the filter stage first"), "{}", err.message);
}

#[test]
fn runs_without_imu_or_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = dataset(tmp.path(), 6);
    config.paths.imu = None;
    config.paths.ground_truth = None;
    config.paths.rig = None;
    let report = run_pipeline(&config, false).unwrap();
    assert!(report.ate_rmse.is_none() && report.rpe.is_empty());
    assert_eq!(report.bias_segments, 1);
    let covis = fs::read_to_string(config.paths.output.join("covis.csv")).unwrap();
    assert!(covis.starts_with("pose_i,cam_a,pose_j,cam_b,count\n"));
    assert!(covis.lines().count() > 1);
}

#[test]
fn invalid_config_is_rejected_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = dataset(tmp.path(), 7);
    config.filter.rotation_threshold = -1.0;
    let err = run_pipeline(&config, false).unwrap_err();
    assert!(err.message.contains("filter"), "{}", err.message);
    assert!(!config.paths.output.exists());
}
