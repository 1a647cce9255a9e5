//! Batch pose-graph back-end for LiDAR/IMU trajectories.

pub mod covis;
pub mod edges;
pub mod eval;
pub mod geometry;
pub mod imu;
pub mod io;
pub mod parallel;
pub mod registration;
pub mod sim;
pub mod graph;
pub mod config;
pub mod pipeline;
