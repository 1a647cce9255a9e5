//! Synthetic worlds, ray-cast LiDAR, analytic IMU streams and drifting
//! odometry with exact ground truth.

mod inertial;
mod odometry;
pub mod scenes;
mod scan;
mod trajectory;

pub use inertial::{simulate_imu, BiasSchedule, BiasSegment};
pub use odometry::perturb_odometry;
pub use scan::{simulate_scan, simulate_scans, LidarModel, Plane, WorldModel};
pub use trajectory::{
    generate_trajectory, ContinuousTrajectory, TrajectorySpec, TrajectoryState, Waypoint,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("trajectory needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoint {index} is not later than its predecessor")]
    UnorderedWaypoints { index: usize },
    #[error("rest interval {index} must start and end on waypoints with identical poses")]
    InvalidRest { index: usize },
    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("invalid lidar model: {0}")]
    InvalidLidar(&'static str),
    #[error("plane {index} has a non-unit normal or non-positive extent")]
    InvalidPlane { index: usize },
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
}
