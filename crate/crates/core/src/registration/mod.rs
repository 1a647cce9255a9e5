//! Point-to-plane ICP and SGLD posterior sampling of the relative pose.
//!
//! Both estimators share the same correspondence search and residual
//! model; the deterministic solver doubles as the warm start and the
//! reference for the sampler.

mod icp;
mod residual;
mod sgld;

pub use icp::icp_point_to_plane;
pub use residual::{
    find_correspondences, point_to_plane_gradient, point_to_plane_jacobian, point_to_plane_loss,
    point_to_plane_residual, Correspondence,
};
pub use sgld::{covariance_from_samples, sgld_posterior};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose3, Twist6};

/// Polynomially decaying SGLD step size `ε_t = a (b + t)^(−exponent)`.
///
/// `a` and `b` are chosen so that `ε_0 = initial` and ε falls by
/// `decay_ratio` over the run. With preconditioning the step is
/// dimensionless; without it `initial` is divided by the largest eigenvalue
/// of the posterior Hessian at the warm start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub initial: f64,
    pub exponent: f64,
    pub decay_ratio: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            exponent: 0.55,
            decay_ratio: 10.0,
        }
    }
}

impl StepSchedule {
    pub fn offset(&self, steps: usize) -> f64 {
        steps.max(1) as f64 / (self.decay_ratio.powf(1.0 / self.exponent) - 1.0)
    }

    /// Step sizes for `steps` iterations given the initial step `eps0`.
    pub fn steps(&self, steps: usize, eps0: f64) -> Vec<f64> {
        let b = self.offset(steps);
        let a = eps0 * b.powf(self.exponent);
        (0..steps)
            .map(|t| a * (b + t as f64).powf(-self.exponent))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub max_iterations: usize,
    /// meters
    pub correspondence_max_dist: f64,
    /// tangent-space step norm
    pub convergence_tol: f64,
    /// largest angle between rotated source normal and target normal for a
    /// pair to count; ignored when the source has no normals
    pub normal_compat_deg: f64,
    pub sgld_steps: usize,
    pub sgld_burn_in: usize,
    pub step_size: StepSchedule,
    pub minibatch_size: usize,
    /// per-residual measurement noise, meters
    pub noise_sigma: f64,
    /// prior standard deviation on the offset from the initial guess, rad
    pub prior_sigma_rot: f64,
    /// prior standard deviation on the offset from the initial guess, m
    pub prior_sigma_trans: f64,
    /// SGLD steps between correspondence refreshes
    pub correspondence_refresh: usize,
    /// tangent norm above which the SGLD chart is re-anchored
    pub reanchor_norm: f64,
    /// scale drift and noise by the inverse warm-start Hessian
    pub preconditioned: bool,
    pub keep_samples: bool,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            correspondence_max_dist: 1.0,
            convergence_tol: 1e-9,
            normal_compat_deg: 45.0,
            sgld_steps: 600,
            sgld_burn_in: 200,
            step_size: StepSchedule::default(),
            minibatch_size: 256,
            noise_sigma: 0.02,
            prior_sigma_rot: 0.5,
            prior_sigma_trans: 0.5,
            correspondence_refresh: 50,
            reanchor_norm: 0.5,
            preconditioned: true,
            keep_samples: false,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let positive = [
            self.correspondence_max_dist,
            self.convergence_tol,
            self.normal_compat_deg,
            self.noise_sigma,
            self.prior_sigma_rot,
            self.prior_sigma_trans,
            self.reanchor_norm,
            self.step_size.initial,
            self.step_size.exponent,
        ];
        let ok = positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.step_size.decay_ratio > 1.0
            && self.max_iterations > 0
            && self.minibatch_size >= 1
            && self.correspondence_refresh >= 1
            && self.sgld_burn_in < self.sgld_steps;
        if ok {
            Ok(())
        } else {
            Err(RegistrationError::InvalidParams)
        }
    }

    /// Diagonal prior information on `[rotation, translation]`.
    pub fn prior_information(&self) -> Matrix6<f64> {
        let r = self.prior_sigma_rot.powi(-2);
        let t = self.prior_sigma_trans.powi(-2);
        Matrix6::from_diagonal(&nalgebra::Vector6::new(r, r, r, t, t, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub mean_pose: Pose3,
    /// Tangent-space covariance, rotation block first; absent when the
    /// normal matrix was singular.
    pub covariance: Option<Matrix6<f64>>,
    /// Post-burn-in offsets from `mean_pose`, when requested.
    pub samples: Option<Vec<Twist6>>,
    pub converged: bool,
    pub rms_residual: f64,
    pub num_correspondences: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("source or target cloud is empty")]
    EmptyCloud,
    #[error("no correspondences within {max_dist} m (iteration {iteration})")]
    NoCorrespondences { iteration: usize, max_dist: f64 },
    #[error("posterior Hessian at the warm start is singular")]
    SingularHessian,
    #[error("non-finite gradient at SGLD step {step}")]
    NonFiniteGradient { step: usize },
    #[error("covariance needs at least 7 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid registration parameters")]
    InvalidParams,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
