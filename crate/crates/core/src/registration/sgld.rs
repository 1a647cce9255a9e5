use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::icp::{gauss_newton, invert_spd, PreparedPair, TangentPrior};
use super::residual::{point_to_plane_jacobian, point_to_plane_residual};
use super::{RegistrationError, RegistrationParams, RegistrationResult};
use crate::geometry::{se3_right_jacobian, se3_right_jacobian_inv, PointCloud, Pose3, Twist6};

/// Samples the posterior over the relative pose with stochastic gradient
/// Langevin dynamics.
///
/// The chain lives in the tangent space of an anchor pose, `T = A exp(δ)`,
/// and starts from the MAP estimate found by Gauss–Newton under the same
/// likelihood and prior. Each step uses a minibatch gradient of the
/// log-likelihood scaled by `N/n`, the gradient of a Gaussian prior centered
/// on `t_init`, and injected Gaussian noise of variance `ε_t`. When
/// `preconditioned` is set, drift and noise are both multiplied by the
/// inverse warm-start Hessian (and its Cholesky factor), a fixed
/// preconditioner that leaves the target distribution unchanged while
/// letting weakly constrained directions mix. Correspondences are refreshed
/// every `correspondence_refresh` steps at the current sample and the
/// anchor is moved whenever `|δ|` exceeds `reanchor_norm`.
pub fn sgld_posterior(
    source: &PointCloud,
    target: &PointCloud,
    t_init: &Pose3,
    params: &RegistrationParams,
    seed: u64,
) -> Result<RegistrationResult, RegistrationError> {
    params.validate()?;
    let prepared = PreparedPair::new(source, target, params)?;
    let prior = TangentPrior {
        center: *t_init,
        information: params.prior_information(),
    };
    let warm = gauss_newton(&prepared, t_init, params, Some(&prior))?;

    let (eps0, precond, noise_factor) = if params.preconditioned {
        let cov = invert_spd(&warm.information).ok_or(RegistrationError::SingularHessian)?;
        let chol = cov.cholesky().ok_or(RegistrationError::SingularHessian)?;
        (params.step_size.initial, cov, chol.l())
    } else {
        let lambda_max = warm.information.symmetric_eigen().eigenvalues.max();
        (params.step_size.initial / lambda_max, Matrix6::identity(), Matrix6::identity())
    };
    let schedule = params.step_size.steps(params.sgld_steps, eps0);
    let inv_var = params.noise_sigma.powi(-2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut anchor = warm.pose;
    let mut delta = Vector6::<f64>::zeros();
    let mut pairs = Vec::new();
    let mut samples: Vec<Pose3> = Vec::with_capacity(params.sgld_steps - params.sgld_burn_in);

    for (step, eps) in schedule.iter().enumerate() {
        if delta.norm() > params.reanchor_norm {
            anchor = anchor.retract(&Twist6(delta));
            delta = Vector6::zeros();
        }
        let current = anchor.retract(&Twist6(delta));
        if step % params.correspondence_refresh == 0 {
            pairs = prepared.correspondences(&current);
            if pairs.is_empty() {
                return Err(RegistrationError::NoCorrespondences {
                    iteration: step,
                    max_dist: params.correspondence_max_dist,
                });
            }
        }

        let chart = se3_right_jacobian(&Twist6(delta));
        let total = pairs.len();
        let batch = params.minibatch_size.min(total);
        let mut lik = Vector6::zeros();
        for _ in 0..batch {
            let c = &pairs[rng.gen_range(0..total)];
            let r = point_to_plane_residual(&c.source, &c.target, &c.normal, &current);
            lik -= point_to_plane_jacobian(&c.source, &c.normal, &current) * r;
        }
        lik *= inv_var * total as f64 / batch as f64;

        let zeta = prior.center.local(&current);
        let prior_grad = -(se3_right_jacobian_inv(&zeta).transpose() * prior.information * zeta.0);
        let grad = chart.transpose() * (lik + prior_grad);
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(RegistrationError::NonFiniteGradient { step });
        }
        let noise = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        // cap the drift so a stale preconditioner cannot blow the chain up
        let mut drift = precond * grad * (0.5 * eps);
        let drift_norm = drift.norm();
        if drift_norm > params.reanchor_norm {
            drift *= params.reanchor_norm / drift_norm;
        }
        delta += drift + noise_factor * noise * eps.sqrt();

        if step >= params.sgld_burn_in {
            samples.push(anchor.retract(&Twist6(delta)));
        }
    }

    // Tangent mean about the MAP estimate, then re-centered offsets.
    let reference = warm.pose;
    let mean_offset = samples
        .iter()
        .fold(Vector6::zeros(), |acc, s| acc + reference.local(s).0)
        / samples.len() as f64;
    let mean_pose = reference.retract(&Twist6(mean_offset));
    let offsets: Vec<Twist6> = samples.iter().map(|s| mean_pose.local(s)).collect();
    let covariance = covariance_from_samples(&offsets)?;

    let final_pairs = prepared.correspondences(&mean_pose);
    let rms = if final_pairs.is_empty() {
        f64::INFINITY
    } else {
        (final_pairs
            .iter()
            .map(|c| point_to_plane_residual(&c.source, &c.target, &c.normal, &mean_pose).powi(2))
            .sum::<f64>()
            / final_pairs.len() as f64)
            .sqrt()
    };

    Ok(RegistrationResult {
        mean_pose,
        covariance: Some(covariance),
        samples: params.keep_samples.then_some(offsets),
        converged: !warm.singular && rms.is_finite(),
        rms_residual: rms,
        num_correspondences: final_pairs.len(),
    })
}

/// Unbiased sample covariance of tangent offsets about their mean.
pub fn covariance_from_samples(samples: &[Twist6]) -> Result<Matrix6<f64>, RegistrationError> {
    if samples.len() < 7 {
        return Err(RegistrationError::TooFewSamples(samples.len()));
    }
    // Shifted by the first sample so identical inputs give an exact zero.
    let n = samples.len() as f64;
    let shift = samples[0].0;
    let mean = samples.iter().fold(Vector6::zeros(), |acc, s| acc + (s.0 - shift)) / n;
    let mut cov = Matrix6::zeros();
    for s in samples {
        let d = s.0 - shift - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    Ok((cov + cov.transpose()) * 0.5)
}
