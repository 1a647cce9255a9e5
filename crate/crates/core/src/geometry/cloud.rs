use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose3};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Unit normals, one per point, when estimated or loaded.
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, GeometryError> {
        if points.len() != normals.len() {
            return Err(GeometryError::NormalCountMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }
}

/// Maps every point through `pose`; normals are rotated only.
pub fn transform_cloud(pose: &Pose3, cloud: &PointCloud) -> PointCloud {
    let rot = pose.rotation_matrix();
    let t = pose.translation;
    PointCloud {
        points: cloud.points.iter().map(|p| rot * p + t).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| rot * n).collect()),
    }
}
