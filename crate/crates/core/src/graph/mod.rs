//! Factor graph over poses, velocities and piecewise-constant IMU biases,
//! optimized with Levenberg–Marquardt.
//!
//! Velocity `k` belongs to pose `k`. Stationary intervals are enforced by
//! aliasing pose variables, so poses inside one interval are a single
//! variable and come back bit-identical.

mod factors;
mod g2o;
mod optimize;
mod solver;

pub use factors::{
    between_linearized, between_residual, imu_linearized, imu_residual, prior_linearized,
    ImuLinearization, Matrix9x3, NavState, Vector9,
};
pub use g2o::{export_g2o, import_g2o};
pub use optimize::{optimize, OptimizeParams, OptimizeStats, Solution};

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose3;
use crate::imu::{ImuBias, Preintegrated, StationaryInterval};

/// Information on the zero-velocity priors added inside stationary intervals
/// (σ = 1 mm/s).
pub const ZUPT_INFORMATION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariableKind {
    Pose,
    Velocity,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariableId {
    pub kind: VariableKind,
    pub index: usize,
}

impl std::fmt::Display for VariableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.kind {
            VariableKind::Pose => "x",
            VariableKind::Velocity => "v",
            VariableKind::Bias => "b",
        };
        write!(f, "{tag}{}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    PriorPose {
        pose: usize,
        measured: Pose3,
        information: Matrix6<f64>,
    },
    /// `log(Z⁻¹ T_i⁻¹ T_j)`, information in the tangent at `Z`.
    BetweenPose {
        i: usize,
        j: usize,
        measured: Pose3,
        information: Matrix6<f64>,
    },
    Imu {
        pose_i: usize,
        vel_i: usize,
        pose_j: usize,
        vel_j: usize,
        bias_segment: usize,
        preintegrated: Box<Preintegrated>,
        gravity: Vector3<f64>,
    },
    BiasPrior {
        segment: usize,
        bias: ImuBias,
        information: Matrix6<f64>,
    },
    /// Random-walk link between consecutive bias segments.
    BetweenBias {
        segment_i: usize,
        segment_j: usize,
        information: Matrix6<f64>,
    },
    PriorVelocity {
        index: usize,
        velocity: Vector3<f64>,
        information: Matrix3<f64>,
    },
}

impl Factor {
    /// Variables this factor touches, pose ids as stored.
    pub fn variables(&self) -> Vec<VariableId> {
        let pose = |index| VariableId { kind: VariableKind::Pose, index };
        let vel = |index| VariableId { kind: VariableKind::Velocity, index };
        let bias = |index| VariableId { kind: VariableKind::Bias, index };
        match self {
            Factor::PriorPose { pose: p, .. } => vec![pose(*p)],
            Factor::BetweenPose { i, j, .. } => vec![pose(*i), pose(*j)],
            Factor::Imu {
                pose_i,
                vel_i,
                pose_j,
                vel_j,
                bias_segment,
                ..
            } => vec![pose(*pose_i), vel(*vel_i), pose(*pose_j), vel(*vel_j), bias(*bias_segment)],
            Factor::BiasPrior { segment, .. } => vec![bias(*segment)],
            Factor::BetweenBias { segment_i, segment_j, .. } => vec![bias(*segment_i), bias(*segment_j)],
            Factor::PriorVelocity { index, .. } => vec![vel(*index)],
        }
    }
}

/// A value per variable. `velocities` parallels `poses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Values {
    pub poses: Vec<Pose3>,
    pub velocities: Vec<Vector3<f64>>,
    pub biases: Vec<ImuBias>,
}

impl Values {
    pub fn from_poses(poses: Vec<Pose3>) -> Self {
        let velocities = vec![Vector3::zeros(); poses.len()];
        Self {
            poses,
            velocities,
            biases: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("factor {factor} references missing variable {variable}")]
    MissingVariable { factor: usize, variable: VariableId },
    #[error("factor {factor} has a non-symmetric, non-finite or indefinite information matrix")]
    BadInformation { factor: usize },
    #[error("IMU factor {factor} has a non-positive duration or singular covariance")]
    BadPreintegration { factor: usize },
    #[error("pose {pose} belongs to a component without a pose prior (gauge not fixed)")]
    GaugeFree { pose: usize },
    #[error("non-finite residual in factor {factor}")]
    NonFiniteResidual { factor: usize },
    #[error("stationary interval {index} exceeds the {num_poses} poses")]
    IntervalOutOfRange { index: usize, num_poses: usize },
    #[error("normal equations are not positive definite")]
    Singular,
}

/// Variables, factors and the pose alias map.
///
/// `alias[k]` is the canonical pose for pose `k`: the smallest index of its
/// class. Factors always name canonical poses.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub initial: Values,
    factors: Vec<Factor>,
    alias: Vec<usize>,
}

impl FactorGraph {
    pub fn new(initial: Values) -> Self {
        let alias = (0..initial.poses.len()).collect();
        Self {
            initial,
            factors: Vec::new(),
            alias,
        }
    }

    pub fn num_poses(&self) -> usize {
        self.initial.poses.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn alias_map(&self) -> &[usize] {
        &self.alias
    }

    pub fn canonical(&self, pose: usize) -> usize {
        self.alias[pose]
    }

    fn exists(&self, v: &VariableId) -> bool {
        match v.kind {
            VariableKind::Pose | VariableKind::Velocity => v.index < self.num_poses(),
            VariableKind::Bias => v.index < self.initial.biases.len(),
        }
    }

    /// Appends a factor after checking its ids and information matrix. Pose
    /// ids are rewritten to their canonical representatives.
    pub fn add(&mut self, mut factor: Factor) -> Result<(), GraphError> {
        let index = self.factors.len();
        if let Some(variable) = factor.variables().into_iter().find(|v| !self.exists(v)) {
            return Err(GraphError::MissingVariable { factor: index, variable });
        }
        let ok = match &factor {
            Factor::PriorPose { information, .. }
            | Factor::BetweenPose { information, .. }
            | Factor::BiasPrior { information, .. }
            | Factor::BetweenBias { information, .. } => is_information(information),
            Factor::PriorVelocity { information, .. } => is_information(information),
            Factor::Imu { preintegrated, .. } => {
                if !(preintegrated.duration > 0.0) || imu_information(preintegrated).is_none() {
                    return Err(GraphError::BadPreintegration { factor: index });
                }
                true
            }
        };
        if !ok {
            return Err(GraphError::BadInformation { factor: index });
        }
        self.remap(&mut factor);
        self.factors.push(factor);
        Ok(())
    }

    fn remap(&self, factor: &mut Factor) {
        match factor {
            Factor::PriorPose { pose, .. } => *pose = self.alias[*pose],
            Factor::BetweenPose { i, j, .. } => {
                *i = self.alias[*i];
                *j = self.alias[*j];
            }
            Factor::Imu { pose_i, pose_j, .. } => {
                *pose_i = self.alias[*pose_i];
                *pose_j = self.alias[*pose_j];
            }
            _ => {}
        }
    }

    /// Merges every pose inside each interval into one variable.
    ///
    /// Between-pose factors that collapse onto a single variable are
    /// dropped, IMU factors are kept, and every velocity inside an interval
    /// gets a strong zero prior.
    pub fn alias_stationary(&self, intervals: &[StationaryInterval]) -> Result<FactorGraph, GraphError> {
        let n = self.num_poses();
        if let Some(index) = intervals.iter().position(|iv| iv.end_index >= n) {
            return Err(GraphError::IntervalOutOfRange { index, num_poses: n });
        }
        let mut out = self.clone();
        if intervals.is_empty() {
            return Ok(out);
        }
        let mut parent = self.alias.clone();
        for iv in intervals {
            for k in iv.start_index + 1..=iv.end_index {
                union(&mut parent, iv.start_index, k);
            }
        }
        out.alias = (0..n).map(|k| find(&mut parent, k)).collect();

        let factors = std::mem::take(&mut out.factors);
        for mut f in factors {
            out.remap(&mut f);
            if matches!(f, Factor::BetweenPose { i, j, .. } if i == j) {
                continue;
            }
            out.factors.push(f);
        }
        for k in 0..n {
            out.initial.poses[k] = out.initial.poses[out.alias[k]];
        }
        for iv in intervals {
            for k in iv.start_index..=iv.end_index {
                out.initial.velocities[k] = Vector3::zeros();
                out.factors.push(Factor::PriorVelocity {
                    index: k,
                    velocity: Vector3::zeros(),
                    information: Matrix3::identity() * ZUPT_INFORMATION,
                });
            }
        }
        Ok(out)
    }
}

/// Union by smallest index so the root is the canonical pose.
fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi] = lo;
    }
}

fn find(parent: &mut [usize], mut k: usize) -> usize {
    while parent[k] != k {
        parent[k] = parent[parent[k]];
        k = parent[k];
    }
    k
}

fn is_information<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
    if !m.iter().all(|v| v.is_finite()) || (m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
        return false;
    }
    let eig = nalgebra::DMatrix::from_column_slice(D, D, m.as_slice())
        .symmetric_eigen()
        .eigenvalues;
    eig.min() >= -1e-9 * eig.amax().max(1.0)
}

/// Inverse of the preintegration covariance.
pub(crate) fn imu_information(pre: &Preintegrated) -> Option<SMatrix<f64, 9, 9>> {
    let cov = pre.covariance;
    let inv = cov.cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then(|| (inv + inv.transpose()) * 0.5)
}
