//! SE(3) arithmetic, point clouds, normals and nearest-neighbor search.

mod cloud;
mod kdtree;
mod normals;
mod se3;

pub use cloud::{transform_cloud, PointCloud};
pub use kdtree::KdTree;
pub use normals::{estimate_normals, estimate_normals_from};
pub use se3::{
    compose, hat, inverse, rotation_angle, se3_exp, se3_left_jacobian, se3_left_jacobian_inv,
    se3_log, se3_right_jacobian, se3_right_jacobian_inv, so3_exp, so3_left_jacobian,
    so3_left_jacobian_inv, so3_log, so3_right_jacobian, so3_right_jacobian_inv, Pose3, Twist6,
    BRANCH_CUT_EPS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is within the branch-cut margin of pi")]
    NearBranchCut { angle: f64 },
    #[error("cannot build a spatial index over an empty point cloud")]
    EmptyCloud,
    #[error("normal estimation needs at least {needed} points, cloud has {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point cloud has {points} points but {normals} normals")]
    NormalCountMismatch { points: usize, normals: usize },
}
