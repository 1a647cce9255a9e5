use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ContinuousTrajectory, SimError};
use crate::imu::{ImuBias, ImuNoise, ImuSample, GRAVITY};

/// Piecewise-constant bias: each entry holds from its start time until the
/// next entry. Before the first entry the bias is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasSchedule {
    pub segments: Vec<BiasSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSegment {
    /// seconds
    pub start: f64,
    pub bias: ImuBias,
}

impl BiasSchedule {
    pub fn constant(bias: ImuBias) -> Self {
        Self {
            segments: vec![BiasSegment {
                start: f64::NEG_INFINITY,
                bias,
            }],
        }
    }

    pub fn bias_at(&self, t: f64) -> ImuBias {
        self.segments
            .iter()
            .take_while(|s| s.start <= t)
            .last()
            .map_or_else(ImuBias::zero, |s| s.bias)
    }
}

/// Samples gyro and accelerometer readings along the trajectory at `rate`.
///
/// A reading stamped `t` is the motion at the middle of `[t, t + 1/rate]`,
/// standing in for the sensor's average over its output period, so holding
/// it until the next stamp is accurate to second order. White noise uses
/// the discrete standard deviation `density · √rate`; zero densities give
/// exact readings.
pub fn simulate_imu(
    traj: &ContinuousTrajectory,
    schedule: &BiasSchedule,
    noise: &ImuNoise,
    rate: f64,
    seed: u64,
) -> Result<Vec<ImuSample>, SimError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SimError::InvalidRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gyro = Normal::new(0.0, noise.gyro_noise_density * rate.sqrt()).unwrap();
    let accel = Normal::new(0.0, noise.accel_noise_density * rate.sqrt()).unwrap();
    let mut draw = |d: &Normal<f64>| Vector3::from_fn(|_, _| d.sample(&mut rng));
    Ok(traj
        .sample_times(rate)
        .into_iter()
        .map(|t| {
            let mid = (t + 0.5 / rate).min(traj.end_time());
            let s = traj.state(mid);
            let bias = schedule.bias_at(t);
            let specific = s.pose.rotation.inverse() * (s.acceleration - GRAVITY);
            ImuSample {
                timestamp: t,
                angular_velocity: s.angular_velocity + bias.gyro + draw(&gyro),
                linear_acceleration: specific + bias.accel + draw(&accel),
            }
        })
        .collect())
}
