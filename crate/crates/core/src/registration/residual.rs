use nalgebra::{Vector3, Vector6};

use crate::geometry::{KdTree, Pose3};

/// A source point paired with a target point and the target's normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
    pub normal: Vector3<f64>,
}

/// Signed distance `n · (T p_src − p_tgt)`.
pub fn point_to_plane_residual(
    source_point: &Vector3<f64>,
    target_point: &Vector3<f64>,
    target_normal: &Vector3<f64>,
    t: &Pose3,
) -> f64 {
    target_normal.dot(&(t.transform_point(source_point) - target_point))
}

/// Derivative of the residual with respect to a right perturbation
/// `T exp(ξ)`, rotation first.
pub fn point_to_plane_jacobian(source_point: &Vector3<f64>, normal: &Vector3<f64>, t: &Pose3) -> Vector6<f64> {
    let n_local = t.rotation.inverse() * normal;
    let rot = source_point.cross(&n_local);
    Vector6::new(rot.x, rot.y, rot.z, n_local.x, n_local.y, n_local.z)
}

/// `½ Σ r²` over the correspondences.
pub fn point_to_plane_loss(pairs: &[Correspondence], t: &Pose3) -> f64 {
    pairs
        .iter()
        .map(|c| point_to_plane_residual(&c.source, &c.target, &c.normal, t).powi(2))
        .sum::<f64>()
        * 0.5
}

/// Gradient of [`point_to_plane_loss`] under right perturbation.
pub fn point_to_plane_gradient(pairs: &[Correspondence], t: &Pose3) -> Vector6<f64> {
    pairs.iter().fold(Vector6::zeros(), |acc, c| {
        let r = point_to_plane_residual(&c.source, &c.target, &c.normal, t);
        acc + point_to_plane_jacobian(&c.source, &c.normal, t) * r
    })
}

/// Nearest target point (within `max_dist`) for every transformed source
/// point. When source normals are given, pairs whose rotated source normal
/// makes a cosine below `min_normal_cos` with the target normal are dropped.
pub fn find_correspondences(
    source: &[Vector3<f64>],
    source_normals: Option<&[Vector3<f64>]>,
    target: &KdTree,
    target_normals: &[Vector3<f64>],
    t: &Pose3,
    max_dist: f64,
    min_normal_cos: f64,
) -> Vec<Correspondence> {
    source
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let q = t.transform_point(p);
            let (idx, _) = target.nearest(&q, max_dist)?;
            let normal = target_normals[idx];
            if let Some(ns) = source_normals {
                if (t.rotation * ns[k]).dot(&normal) < min_normal_cos {
                    return None;
                }
            }
            Some(Correspondence {
                source: *p,
                target: *target.point(idx),
                normal,
            })
        })
        .collect()
}
