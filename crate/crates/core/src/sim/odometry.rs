use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Pose3, Twist6};

/// Drifting odometry: every ground-truth step `gt[k]⁻¹ gt[k+1]` is
/// right-multiplied by `exp(ξ)` with `ξ ~ N(0, diag(sigma²))` and the
/// perturbed steps are chained from the unperturbed first pose.
pub fn perturb_odometry(gt: &[Pose3], sigma: &Twist6, seed: u64) -> Vec<Pose3> {
    let Some(first) = gt.first() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(gt.len());
    out.push(*first);
    for w in gt.windows(2) {
        let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let noise = Twist6(sigma.0.component_mul(&z));
        let step = w[0].between(&w[1]);
        let last = out[out.len() - 1];
        out.push(if noise.0 == Vector6::zeros() {
            last.compose(&step)
        } else {
            last.compose(&step).retract(&noise)
        });
    }
    out
}
