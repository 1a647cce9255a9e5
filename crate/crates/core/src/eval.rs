//! Trajectory error metrics.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose3;
use crate::io::Trajectory;

/// Largest timestamp difference, in seconds, for two poses to be matched.
pub const ASSOCIATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("only {0} poses could be matched by timestamp; at least 3 are needed")]
    TooFewMatches(usize),
    #[error("delta {delta} is not below the trajectory length {len}")]
    DeltaTooLarge { delta: usize, len: usize },
    #[error("trajectories differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Index pairs `(estimated, ground_truth)` whose timestamps differ by at
/// most `tolerance`, each ground-truth pose used once.
pub fn associate(estimated: &[f64], ground_truth: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..ground_truth.len()).collect();
    order.sort_by(|a, b| ground_truth[*a].total_cmp(&ground_truth[*b]));
    let sorted: Vec<f64> = order.iter().map(|k| ground_truth[*k]).collect();
    let mut used = vec![false; ground_truth.len()];
    let mut out = Vec::new();
    for (e, t) in estimated.iter().enumerate() {
        let pos = sorted.partition_point(|g| *g < *t);
        let best = [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|k| *k < sorted.len())
            .min_by(|a, b| (sorted[*a] - t).abs().total_cmp(&(sorted[*b] - t).abs()));
        if let Some(k) = best {
            if (sorted[k] - t).abs() <= tolerance && !used[k] {
                used[k] = true;
                out.push((e, order[k]));
            }
        }
    }
    out
}

/// Rigid transform `(R, t)` minimizing `Σ |R src + t − dst|²`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose3 {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let h: Matrix3<f64> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (s - mu_s) * (d - mu_d).transpose())
        .sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * fix * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Pose3::new(rotation, mu_d - rotation * mu_s)
}

/// Absolute trajectory error: RMSE of position residuals after the best
/// rigid alignment of the timestamp-matched estimated positions onto the
/// ground truth.
pub fn evaluate_ate(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<f64, EvalError> {
    let pairs = associate(&estimated.timestamps, &ground_truth.timestamps, ASSOCIATION_TOLERANCE);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewMatches(pairs.len()));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|(e, _)| estimated.poses[*e].translation).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, g)| ground_truth.poses[*g].translation).collect();
    let align = align_rigid(&src, &dst);
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (align.transform_point(s) - d).norm_squared())
        .sum();
    Ok((sq / src.len() as f64).sqrt())
}

/// Relative pose error at index offset `delta`: RMSE of the translation
/// (meters) and rotation angle (degrees) of
/// `(G_k⁻¹ G_{k+Δ})⁻¹ (E_k⁻¹ E_{k+Δ})`.
pub fn evaluate_rpe(estimated: &[Pose3], ground_truth: &[Pose3], delta: usize) -> Result<(f64, f64), EvalError> {
    if estimated.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(estimated.len(), ground_truth.len()));
    }
    let len = estimated.len();
    if delta == 0 || delta >= len {
        return Err(EvalError::DeltaTooLarge { delta, len });
    }
    let (mut st, mut sr) = (0.0, 0.0);
    let count = len - delta;
    for k in 0..count {
        let g = ground_truth[k].between(&ground_truth[k + delta]);
        let m = estimated[k].between(&estimated[k + delta]);
        if g == m {
            continue;
        }
        let e = g.between(&m);
        st += e.translation.norm_squared();
        sr += e.rotation_angle().to_degrees().powi(2);
    }
    Ok(((st / count as f64).sqrt(), (sr / count as f64).sqrt()))
}
