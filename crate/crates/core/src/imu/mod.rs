//! IMU preintegration, stationary-period detection and piecewise-constant
//! bias segmentation.

mod preintegration;
mod stationary;

pub use preintegration::{preintegrate, preintegrate_span, CorrectedDeltas, Matrix9, Matrix9x6, Preintegrated};
pub use stationary::{
    assign_bias_segments, detect_stationary_icp, detect_stationary_imu, intersect_intervals,
    time_to_pose_intervals, StationaryInterval, StationaryParams, TimeInterval,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default gravity in the world frame, m/s².
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// rad/s
    pub angular_velocity: Vector3<f64>,
    /// m/s², specific force
    pub linear_acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl Default for ImuBias {
    fn default() -> Self {
        Self::zero()
    }
}

impl ImuBias {
    pub fn zero() -> Self {
        Self {
            gyro: Vector3::zeros(),
            accel: Vector3::zeros(),
        }
    }

    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|v| v.is_finite())
    }
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1.7e-4,
            accel_noise_density: 2.0e-3,
            gyro_bias_walk: 1.9e-5,
            accel_bias_walk: 3.0e-3,
        }
    }
}

impl ImuNoise {
    pub fn validate(&self) -> Result<(), ImuError> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(ImuError::InvalidNoise)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("preintegration needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps are not strictly increasing at sample {index}")]
    NonMonotonic { index: usize },
    #[error("cannot append preintegrations linearized at different biases")]
    BiasMismatch,
    #[error("noise densities must be positive and finite")]
    InvalidNoise,
    #[error("stationary intervals overlap or are unsorted at interval {index}")]
    OverlappingIntervals { index: usize },
    #[error("stationary interval {index} lies outside the {num_poses} poses")]
    IntervalOutOfBounds { index: usize, num_poses: usize },
    #[error("no IMU samples cover [{start}, {end}]")]
    NotCovered { start: f64, end: f64 },
}
