//! Run configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::{ConstraintFilterParams, ProposalParams};
use crate::graph::OptimizeParams;
use crate::imu::{ImuNoise, StationaryParams};
use crate::registration::RegistrationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    /// odometry trajectory, TUM format
    pub trajectory: PathBuf,
    /// directory of `scan_NNNNNN.ply`
    pub scans: PathBuf,
    /// IMU samples as CSV; without it no inertial factors are built
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imu: Option<PathBuf>,
    /// camera rig for the covis stage; the five-camera fixture rig when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<PathBuf>,
    /// reference trajectory for the evaluate stage
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    pub output: PathBuf,
}

/// Weights of the odometry chain and the bias priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// degrees per step
    pub odometry_sigma_rot: f64,
    /// meters per step
    pub odometry_sigma_trans: f64,
    /// degrees, on the first pose
    pub anchor_sigma_rot: f64,
    /// meters, on the first pose
    pub anchor_sigma_trans: f64,
    /// rad/s, prior around zero for every bias segment
    pub bias_prior_sigma_gyro: f64,
    /// m/s², prior around zero for every bias segment
    pub bias_prior_sigma_accel: f64,
    /// m/s, prior around zero on the first velocity
    pub initial_velocity_sigma: f64,
    /// how far apart the consecutive ICP chain may drift from odometry before
    /// the step is ignored for rest detection, meters
    pub chain_gate: f64,
    pub use_imu: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            odometry_sigma_rot: 0.2,
            odometry_sigma_trans: 0.01,
            anchor_sigma_rot: 1e-3,
            anchor_sigma_trans: 1e-3,
            bias_prior_sigma_gyro: 0.01,
            bias_prior_sigma_accel: 0.1,
            initial_velocity_sigma: 0.1,
            chain_gate: 0.5,
            use_imu: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovisConfig {
    /// meters
    pub pair_max_dist: f64,
    /// image pairs with fewer proxy correspondences are not listed
    pub min_count: u64,
}

impl Default for CovisConfig {
    fn default() -> Self {
        Self {
            pair_max_dist: 0.05,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// index deltas for RPE
    pub rpe_deltas: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rpe_deltas: vec![1, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: PathsConfig,
    #[serde(default)]
    pub proposal: ProposalParams,
    #[serde(default)]
    pub registration: RegistrationParams,
    #[serde(default)]
    pub filter: ConstraintFilterParams,
    #[serde(default)]
    pub stationary: StationaryParams,
    #[serde(default)]
    pub imu_noise: ImuNoise,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub optimizer: OptimizeParams,
    #[serde(default)]
    pub covis: CovisConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {path} does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("invalid {block} parameters: {message}")]
    Invalid { block: &'static str, message: String },
}

impl RunConfig {
    /// A config with default parameters around the given paths.
    pub fn with_paths(paths: PathsConfig) -> Self {
        Self {
            seed: 0,
            workers: default_workers(),
            paths,
            proposal: ProposalParams::default(),
            registration: RegistrationParams::default(),
            filter: ConstraintFilterParams::default(),
            stationary: StationaryParams::default(),
            imu_noise: ImuNoise::default(),
            graph: GraphConfig::default(),
            optimizer: OptimizeParams::default(),
            covis: CovisConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Parses a config file; relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.trajectory);
        fix(&mut paths.scans);
        fix(&mut paths.output);
        for p in [&mut paths.imu, &mut paths.rig, &mut paths.ground_truth].into_iter().flatten() {
            fix(p);
        }
    }

    /// Parameter checks only; see [`RunConfig::validate`] for the full set.
    pub fn validate_params(&self) -> Result<(), ConfigError> {
        let invalid = |block: &'static str, message: String| ConfigError::Invalid { block, message };
        self.registration
            .validate()
            .map_err(|e| invalid("registration", e.to_string()))?;
        self.imu_noise.validate().map_err(|e| invalid("imu_noise", e.to_string()))?;
        let p = &self.proposal;
        if p.knn == 0 || p.gap_min == 0 || p.gap_min > p.gap_max || !(p.loop_radius >= 0.0) {
            return Err(invalid("proposal", "need knn ≥ 1 and 1 ≤ gap_min ≤ gap_max".into()));
        }
        let positive = |block: &'static str, values: &[f64]| {
            if values.iter().all(|v| *v > 0.0 && v.is_finite()) {
                Ok(())
            } else {
                Err(invalid(block, "every value must be positive".into()))
            }
        };
        positive("filter", &[self.filter.translation_threshold, self.filter.rotation_threshold])?;
        let s = &self.stationary;
        positive(
            "stationary",
            &[s.window, s.gyro_thresh, s.accel_dev_thresh, s.motion_thresh_trans, s.motion_thresh_rot],
        )?;
        let g = &self.graph;
        positive(
            "graph",
            &[
                g.odometry_sigma_rot,
                g.odometry_sigma_trans,
                g.anchor_sigma_rot,
                g.anchor_sigma_trans,
                g.bias_prior_sigma_gyro,
                g.bias_prior_sigma_accel,
                g.initial_velocity_sigma,
                g.chain_gate,
            ],
        )?;
        let o = &self.optimizer;
        if o.max_iterations == 0 || !(o.lambda_factor > 1.0) || !(o.initial_lambda > 0.0) || !(o.tolerance >= 0.0) {
            return Err(invalid("optimizer", "need iterations ≥ 1, lambda > 0, factor > 1".into()));
        }
        if o.huber_threshold.is_some_and(|h| !(h > 0.0)) {
            return Err(invalid("optimizer", "huber_threshold must be positive".into()));
        }
        positive("covis", &[self.covis.pair_max_dist])?;
        if self.eval.rpe_deltas.contains(&0) {
            return Err(invalid("eval", "RPE deltas must be ≥ 1".into()));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "need at least one worker".into()));
        }
        Ok(())
    }

    /// Parameters plus existence of every input path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_params()?;
        let p = &self.paths;
        let mut inputs: Vec<(&'static str, &PathBuf)> = vec![("trajectory", &p.trajectory), ("scans", &p.scans)];
        inputs.extend(p.imu.as_ref().map(|x| ("imu", x)));
        inputs.extend(p.rig.as_ref().map(|x| ("rig", x)));
        inputs.extend(p.ground_truth.as_ref().map(|x| ("ground_truth", x)));
        for (field, path) in inputs {
            if !path.exists() {
                return Err(ConfigError::MissingPath {
                    field,
                    path: path.clone(),
                });
            }
        }
        Ok(())
    }
}
