use nalgebra::{Matrix6, Vector3, Vector6};

use super::residual::{
    find_correspondences, point_to_plane_jacobian, point_to_plane_residual, Correspondence,
};
use super::{RegistrationError, RegistrationParams, RegistrationResult};
use crate::geometry::{se3_right_jacobian_inv, KdTree, PointCloud, Pose3, Twist6};

/// Source and target prepared for repeated correspondence queries.
pub(crate) struct PreparedPair<'a> {
    pub source: &'a [Vector3<f64>],
    pub source_normals: Option<&'a [Vector3<f64>]>,
    pub tree: KdTree,
    pub normals: &'a [Vector3<f64>],
    pub max_dist: f64,
    pub min_normal_cos: f64,
}

impl<'a> PreparedPair<'a> {
    pub fn new(
        source: &'a PointCloud,
        target: &'a PointCloud,
        params: &RegistrationParams,
    ) -> Result<Self, RegistrationError> {
        let normals = target
            .normals
            .as_deref()
            .ok_or(RegistrationError::MissingNormals)?;
        if source.is_empty() || target.is_empty() {
            return Err(RegistrationError::EmptyCloud);
        }
        Ok(Self {
            source: &source.points,
            source_normals: source.normals.as_deref(),
            tree: KdTree::build(target)?,
            normals,
            max_dist: params.correspondence_max_dist,
            min_normal_cos: params.normal_compat_deg.to_radians().cos(),
        })
    }

    pub fn correspondences(&self, t: &Pose3) -> Vec<Correspondence> {
        find_correspondences(
            self.source,
            self.source_normals,
            &self.tree,
            self.normals,
            t,
            self.max_dist,
            self.min_normal_cos,
        )
    }
}

/// Optional Gaussian prior `log(center⁻¹ T) ~ N(0, information⁻¹)`.
pub(crate) struct TangentPrior {
    pub center: Pose3,
    pub information: Matrix6<f64>,
}

pub(crate) struct GnOutcome {
    pub pose: Pose3,
    /// Posterior information at `pose` (likelihood scaled by 1/σ², plus prior).
    pub information: Matrix6<f64>,
    pub converged: bool,
    pub singular: bool,
    pub rms: f64,
    pub num_correspondences: usize,
}

/// Gauss–Newton on the stacked point-to-plane residuals.
pub(crate) fn gauss_newton(
    pair: &PreparedPair<'_>,
    t_init: &Pose3,
    params: &RegistrationParams,
    prior: Option<&TangentPrior>,
) -> Result<GnOutcome, RegistrationError> {
    let inv_var = params.noise_sigma.powi(-2);
    let mut pose = *t_init;
    let mut converged = false;
    let mut singular = false;
    for iteration in 0..params.max_iterations {
        let pairs = pair.correspondences(&pose);
        if pairs.is_empty() {
            return Err(RegistrationError::NoCorrespondences {
                iteration,
                max_dist: params.correspondence_max_dist,
            });
        }
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in &pairs {
            let j = point_to_plane_jacobian(&c.source, &c.normal, &pose);
            let r = point_to_plane_residual(&c.source, &c.target, &c.normal, &pose);
            h += j * j.transpose();
            g += j * r;
        }
        h *= inv_var;
        g *= inv_var;
        if let Some(p) = prior {
            let zeta = p.center.local(&pose);
            let jz = se3_right_jacobian_inv(&zeta);
            h += jz.transpose() * p.information * jz;
            g += jz.transpose() * p.information * zeta.0;
        }
        let Some(step) = solve_spd(&h, &(-g)) else {
            singular = true;
            break;
        };
        pose = pose.retract(&Twist6(step));
        if step.norm() < params.convergence_tol {
            converged = true;
            break;
        }
    }

    let pairs = pair.correspondences(&pose);
    if pairs.is_empty() {
        return Err(RegistrationError::NoCorrespondences {
            iteration: params.max_iterations,
            max_dist: params.correspondence_max_dist,
        });
    }
    let mut information = Matrix6::zeros();
    let mut sq = 0.0;
    for c in &pairs {
        let j = point_to_plane_jacobian(&c.source, &c.normal, &pose);
        information += j * j.transpose();
        sq += point_to_plane_residual(&c.source, &c.target, &c.normal, &pose).powi(2);
    }
    information *= inv_var;
    if let Some(p) = prior {
        let jz = se3_right_jacobian_inv(&p.center.local(&pose));
        information += jz.transpose() * p.information * jz;
    }
    Ok(GnOutcome {
        pose,
        information,
        converged: converged && !singular,
        singular,
        rms: (sq / pairs.len() as f64).sqrt(),
        num_correspondences: pairs.len(),
    })
}

/// Solves `h x = b` for symmetric `h`, refusing numerically singular systems.
pub(crate) fn solve_spd(h: &Matrix6<f64>, b: &Vector6<f64>) -> Option<Vector6<f64>> {
    let eig = h.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= max * 1e-12 {
        return None;
    }
    h.cholesky().map(|c| c.solve(b))
}

pub(crate) fn invert_spd(h: &Matrix6<f64>) -> Option<Matrix6<f64>> {
    let eig = h.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || eig.eigenvalues.min() <= max * 1e-12 {
        return None;
    }
    h.cholesky().map(|c| {
        let inv = c.inverse();
        (inv + inv.transpose()) * 0.5
    })
}

/// Deterministic point-to-plane ICP from `t_init`.
///
/// The covariance is `σ² (JᵀJ)⁻¹` at the final estimate; a singular normal
/// matrix leaves the result unconverged and without covariance.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    t_init: &Pose3,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    params.validate()?;
    let prepared = PreparedPair::new(source, target, params)?;
    let out = gauss_newton(&prepared, t_init, params, None)?;
    let covariance = if out.singular {
        None
    } else {
        invert_spd(&out.information)
    };
    Ok(RegistrationResult {
        mean_pose: out.pose,
        converged: out.converged && covariance.is_some(),
        covariance,
        samples: None,
        rms_residual: out.rms,
        num_correspondences: out.num_correspondences,
    })
}
