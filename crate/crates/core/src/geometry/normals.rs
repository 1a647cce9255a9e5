use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{GeometryError, KdTree, PointCloud};

/// Per-point normals from the k-nearest-neighbor covariance, oriented
/// toward the sensor origin of the cloud's frame.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, GeometryError> {
    estimate_normals_from(cloud, k, &Vector3::zeros())
}

/// As [`estimate_normals`] with an explicit viewpoint.
pub fn estimate_normals_from(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud, GeometryError> {
    let needed = k.max(3);
    if cloud.len() < needed {
        return Err(GeometryError::TooFewPoints {
            needed,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(cloud)?;
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            let neighbors = tree.knn(p, needed);
            let n = neighborhood_normal(&tree, &neighbors);
            if n.dot(&(viewpoint - p)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
    })
}

fn neighborhood_normal(tree: &KdTree, neighbors: &[(usize, f64)]) -> Vector3<f64> {
    let count = neighbors.len() as f64;
    let centroid = neighbors
        .iter()
        .fold(Vector3::zeros(), |acc, (i, _)| acc + tree.point(*i))
        / count;
    let mut cov = Matrix3::zeros();
    for (i, _) in neighbors {
        let d = tree.point(*i) - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / count);
    let smallest = eig.eigenvalues.imin();
    eig.eigenvectors.column(smallest).normalize()
}
