use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{PointCloud, Pose3};
use crate::parallel::{self, mix_seed, Execution};

/// Bounded rectangle: `center + a·axis + b·(normal × axis)` with
/// `|a| ≤ half_extents[0]`, `|b| ≤ half_extents[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub half_extents: [f64; 2],
}

impl Plane {
    /// Normalizes `normal` and makes `axis` orthogonal to it.
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>, axis: Vector3<f64>, half_extents: [f64; 2]) -> Self {
        let normal = normal.normalize();
        let axis = (axis - normal * normal.dot(&axis)).normalize();
        Self {
            center,
            normal,
            axis,
            half_extents,
        }
    }

    /// Distance along the ray to the bounded plane, if it is hit.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let local = origin + dir * t - self.center;
        let other = self.normal.cross(&self.axis);
        (local.dot(&self.axis).abs() <= self.half_extents[0]
            && local.dot(&other).abs() <= self.half_extents[1])
            .then_some(t)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub planes: Vec<Plane>,
}

impl WorldModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (index, p) in self.planes.iter().enumerate() {
            let ok = (p.normal.norm() - 1.0).abs() < 1e-9
                && p.normal.dot(&p.axis).abs() < 1e-9
                && p.half_extents.iter().all(|e| *e > 0.0);
            if !ok {
                return Err(SimError::InvalidPlane { index });
            }
        }
        Ok(())
    }

    pub fn add_plane(&mut self, plane: Plane) -> &mut Self {
        self.planes.push(plane);
        self
    }

    /// Axis-aligned box as six faces.
    pub fn add_box(&mut self, center: Vector3<f64>, half_size: Vector3<f64>) -> &mut Self {
        let h = half_size;
        let faces = [
            (Vector3::x(), Vector3::y(), [h.y, h.z], h.x),
            (Vector3::y(), Vector3::z(), [h.z, h.x], h.y),
            (Vector3::z(), Vector3::x(), [h.x, h.y], h.z),
        ];
        for (n, axis, ext, off) in faces {
            for sign in [1.0, -1.0] {
                self.planes
                    .push(Plane::new(center + n * (sign * off), n * sign, axis, ext));
            }
        }
        self
    }

    /// Nearest hit within `max_range`: distance and plane index.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, plane) in self.planes.iter().enumerate() {
            if let Some(t) = plane.intersect(origin, dir) {
                if t <= max_range && best.map_or(true, |(b, _)| t < b) {
                    best = Some((t, k));
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    pub azimuth_count: usize,
    pub elevation_count: usize,
    /// degrees, [min, max]
    pub elevation_range: [f64; 2],
    /// meters
    pub max_range: f64,
    /// meters
    pub range_noise_sigma: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            azimuth_count: 90,
            elevation_count: 8,
            elevation_range: [-30.0, 30.0],
            max_range: 30.0,
            range_noise_sigma: 0.0,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.azimuth_count == 0 || self.elevation_count == 0 {
            return Err(SimError::InvalidLidar("ray counts must be positive"));
        }
        if !(self.max_range > 0.0) {
            return Err(SimError::InvalidLidar("max_range must be positive"));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err(SimError::InvalidLidar("range noise must be non-negative"));
        }
        if !(self.elevation_range[0] <= self.elevation_range[1]) {
            return Err(SimError::InvalidLidar("elevation range is reversed"));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, elevation-major.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let [lo, hi] = self.elevation_range;
        let mut out = Vec::with_capacity(self.azimuth_count * self.elevation_count);
        for e in 0..self.elevation_count {
            let el = if self.elevation_count == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * e as f64 / (self.elevation_count - 1) as f64
            }
            .to_radians();
            for a in 0..self.azimuth_count {
                let az = std::f64::consts::TAU * a as f64 / self.azimuth_count as f64;
                out.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

/// Ray-casts one scan from `pose`. Points and normals are in the sensor
/// frame; normals are the true surface normals facing the sensor.
pub fn simulate_scan(world: &WorldModel, pose: &Pose3, lidar: &LidarModel, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (lidar.range_noise_sigma > 0.0).then(|| Normal::new(0.0, lidar.range_noise_sigma).unwrap());
    let inv_rot = pose.rotation.inverse();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for d in lidar.directions() {
        let dir = pose.rotation * d;
        let Some((t, k)) = world.cast(&pose.translation, &dir, lidar.max_range) else {
            continue;
        };
        let range = match &noise {
            Some(n) => t + n.sample(&mut rng),
            None => t,
        };
        if !(range > 0.0) {
            continue;
        }
        let mut n = inv_rot * world.planes[k].normal;
        if n.dot(&d) > 0.0 {
            n = -n;
        }
        points.push(d * range);
        normals.push(n);
    }
    PointCloud::with_normals(points, normals).expect("equal lengths by construction")
}

/// One scan per pose; scan `k` uses a seed derived from `(seed, k)`.
pub fn simulate_scans(
    world: &WorldModel,
    poses: &[Pose3],
    lidar: &LidarModel,
    seed: u64,
    exec: Execution,
) -> Vec<PointCloud> {
    let indexed: Vec<(usize, Pose3)> = poses.iter().copied().enumerate().collect();
    parallel::map(&indexed, exec, |(k, pose)| {
        simulate_scan(world, pose, lidar, mix_seed(seed, &[*k as u64]))
    })
}
