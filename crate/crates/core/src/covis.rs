//! LiDAR-driven co-visibility between rig cameras at two poses.
//!
//! Overlapping LiDAR points of a registered scan pair stand in for image
//! correspondences: a pair seen by camera `a` at pose `i` and camera `b` at
//! pose `j` suggests the two images share content. No occlusion reasoning
//! is done; a point inside a frustum counts as visible.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{KdTree, PointCloud, Pose3};
use crate::io::{fmt_f64, parse_floats, parse_index, FormatError};

/// Pinhole intrinsics; camera frame is x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<(), CovisError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        ok.then_some(()).ok_or(CovisError::InvalidCamera)
    }
}

/// A camera and its mounting `T_base_cam`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub camera: PinholeCamera,
    pub t_base_cam: Pose3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigCalibration {
    pub cameras: Vec<RigCamera>,
}

impl RigCalibration {
    pub const DEFAULT_COUNT: usize = 5;

    /// Four lateral cameras (front, left, back, right) and one looking up,
    /// 640×480 with a 90° horizontal field of view, mounted 0.1 m from the
    /// base origin along their optical axes.
    pub fn fixture() -> Self {
        let camera = PinholeCamera {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let mount = |x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>| {
            let r = Matrix3::from_columns(&[x, y, z]);
            RigCamera {
                camera,
                t_base_cam: Pose3::new(
                    UnitQuaternion::from_matrix(&r),
                    z * 0.1,
                ),
            }
        };
        let down = -Vector3::z();
        let mut cameras: Vec<RigCamera> = (0..4)
            .map(|k| {
                let yaw = std::f64::consts::FRAC_PI_2 * k as f64;
                let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
                let right = forward.cross(&Vector3::z());
                mount(right, down, forward)
            })
            .collect();
        // up-looking camera, image top toward the back
        cameras.push(mount(-Vector3::y(), Vector3::x(), Vector3::z()));
        Self { cameras }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<(), CovisError> {
        if self.cameras.is_empty() {
            return Err(CovisError::EmptyRig);
        }
        self.cameras.iter().try_for_each(|c| c.camera.validate())
    }
}

/// Counts of proxy correspondences per camera pair, rows indexing cameras
/// at `pose_i` and columns cameras at `pose_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovisMatrix {
    pub pose_i: usize,
    pub pose_j: usize,
    pub counts: Vec<Vec<u64>>,
}

impl CovisMatrix {
    pub fn zeros(pose_i: usize, pose_j: usize, cameras: usize) -> Self {
        Self {
            pose_i,
            pose_j,
            counts: vec![vec![0; cameras]; cameras],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transpose(&self) -> Self {
        let n = self.counts.len();
        Self {
            pose_i: self.pose_j,
            pose_j: self.pose_i,
            counts: (0..n).map(|a| (0..n).map(|b| self.counts[b][a]).collect()).collect(),
        }
    }
}

/// One entry of the image-pair ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub pose_i: usize,
    pub cam_a: usize,
    pub pose_j: usize,
    pub cam_b: usize,
    pub count: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovisError {
    #[error("camera intrinsics must be finite with positive focal lengths and size")]
    InvalidCamera,
    #[error("rig has no cameras")]
    EmptyRig,
}

/// Pixel of a world point, if it is in front of the camera and inside the
/// image.
pub fn project(camera: &PinholeCamera, t_world_cam: &Pose3, point: &Vector3<f64>) -> Option<(f64, f64)> {
    let p = t_world_cam.inverse().transform_point(point);
    if !(p.z > 0.0) {
        return None;
    }
    let u = camera.fx * p.x / p.z + camera.cx;
    let v = camera.fy * p.y / p.z + camera.cy;
    let inside = (0.0..camera.width as f64).contains(&u) && (0.0..camera.height as f64).contains(&v);
    inside.then_some((u, v))
}

/// Co-visibility counts for a registered scan pair.
///
/// `cloud_j` is mapped into frame `i` with `t_ij`; points of the two clouds
/// that are mutual nearest neighbours within `pair_max_dist` form the
/// pairs. Each pair adds one to `counts[a][b]` for every camera `a` at
/// pose `i` seeing its frame-`i` member and camera `b` at pose `j` seeing
/// its frame-`j` member. Mutual pairing makes the result transpose exactly
/// when the roles of the two scans are swapped.
pub fn proxy_correspondences(
    edge: (usize, usize),
    cloud_i: &PointCloud,
    cloud_j: &PointCloud,
    t_ij: &Pose3,
    pose_i_world: &Pose3,
    rig: &RigCalibration,
    pair_max_dist: f64,
) -> CovisMatrix {
    let mut out = CovisMatrix::zeros(edge.0, edge.1, rig.len());
    if cloud_i.is_empty() || cloud_j.is_empty() {
        log::warn!("edge {}-{}: empty cloud, co-visibility left at zero", edge.0, edge.1);
        return out;
    }
    let mapped_j: Vec<Vector3<f64>> = cloud_j.points.iter().map(|p| t_ij.transform_point(p)).collect();
    let (Ok(tree_i), Ok(tree_j)) = (KdTree::from_points(cloud_i.points.clone()), KdTree::from_points(mapped_j.clone())) else {
        return out;
    };
    let pose_j_world = pose_i_world.compose(t_ij);
    let cams_i: Vec<Pose3> = rig.cameras.iter().map(|c| pose_i_world.compose(&c.t_base_cam)).collect();
    let cams_j: Vec<Pose3> = rig.cameras.iter().map(|c| pose_j_world.compose(&c.t_base_cam)).collect();

    let mut seen_a = Vec::with_capacity(rig.len());
    let mut seen_b = Vec::with_capacity(rig.len());
    for (ki, p) in cloud_i.points.iter().enumerate() {
        let Some((kj, _)) = tree_j.nearest(p, pair_max_dist) else {
            continue;
        };
        if tree_i.nearest(&mapped_j[kj], pair_max_dist).map(|(k, _)| k) != Some(ki) {
            continue;
        }
        let world_i = pose_i_world.transform_point(p);
        let world_j = pose_j_world.transform_point(&cloud_j.points[kj]);
        seen_a.clear();
        seen_b.clear();
        for (a, rc) in rig.cameras.iter().enumerate() {
            if project(&rc.camera, &cams_i[a], &world_i).is_some() {
                seen_a.push(a);
            }
            if project(&rc.camera, &cams_j[a], &world_j).is_some() {
                seen_b.push(a);
            }
        }
        for a in &seen_a {
            for b in &seen_b {
                out.counts[*a][*b] += 1;
            }
        }
    }
    out
}

/// Every cell with at least `min_count` pairs, by count descending and then
/// `(pose_i, cam_a, pose_j, cam_b)` ascending.
pub fn select_image_pairs(matrices: &[CovisMatrix], min_count: u64) -> Vec<ImagePair> {
    let mut out: Vec<ImagePair> = matrices
        .iter()
        .flat_map(|m| {
            m.counts.iter().enumerate().flat_map(move |(a, row)| {
                row.iter().enumerate().filter(move |(_, c)| **c >= min_count && **c > 0).map(move |(b, c)| ImagePair {
                    pose_i: m.pose_i,
                    cam_a: a,
                    pose_j: m.pose_j,
                    cam_b: b,
                    count: *c,
                })
            })
        })
        .collect();
    out.sort_by(|x, y| {
        y.count
            .cmp(&x.count)
            .then((x.pose_i, x.cam_a, x.pose_j, x.cam_b).cmp(&(y.pose_i, y.cam_a, y.pose_j, y.cam_b)))
    });
    out
}

/// One camera per line: `fx fy cx cy width height tx ty tz qx qy qz qw`.
pub fn write_rig(rig: &RigCalibration) -> String {
    let mut out = String::from("# fx fy cx cy width height tx ty tz qx qy qz qw\n");
    for c in &rig.cameras {
        let k = &c.camera;
        let mut fields = vec![fmt_f64(k.fx), fmt_f64(k.fy), fmt_f64(k.cx), fmt_f64(k.cy), k.width.to_string(), k.height.to_string()];
        fields.extend(c.t_base_cam.to_tum().iter().map(|v| fmt_f64(*v)));
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_rig(text: &str) -> Result<RigCalibration, FormatError> {
    let mut cameras = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = t.split_whitespace().collect();
        if tokens.len() != 13 {
            return Err(FormatError::parse(line_no, format!("expected 13 fields, got {}", tokens.len())));
        }
        let k = parse_floats(&tokens[..4], line_no)?;
        let size = |tok: &str| {
            tok.parse::<u32>()
                .map_err(|_| FormatError::parse(line_no, format!("invalid image size `{tok}`")))
        };
        let pose = parse_floats(&tokens[6..], line_no)?;
        let camera = PinholeCamera {
            fx: k[0],
            fy: k[1],
            cx: k[2],
            cy: k[3],
            width: size(tokens[4])?,
            height: size(tokens[5])?,
        };
        camera
            .validate()
            .map_err(|e| FormatError::parse(line_no, e.to_string()))?;
        cameras.push(RigCamera {
            camera,
            t_base_cam: Pose3::from_tum([pose[0], pose[1], pose[2], pose[3], pose[4], pose[5], pose[6]]),
        });
    }
    if cameras.is_empty() {
        return Err(FormatError::parse(text.lines().count().max(1), "rig file has no cameras"));
    }
    Ok(RigCalibration { cameras })
}

const COVIS_HEADER: &str = "pose_i,cam_a,pose_j,cam_b,count";

pub fn write_covis_csv(pairs: &[ImagePair]) -> String {
    let mut out = format!("{COVIS_HEADER}\n");
    for p in pairs {
        out.push_str(&format!("{},{},{},{},{}\n", p.pose_i, p.cam_a, p.pose_j, p.cam_b, p.count));
    }
    out
}

pub fn read_covis_csv(text: &str) -> Result<Vec<ImagePair>, FormatError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t == COVIS_HEADER {
            continue;
        }
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(FormatError::parse(line_no, format!("expected 5 fields, got {}", f.len())));
        }
        out.push(ImagePair {
            pose_i: parse_index(f[0], line_no)?,
            cam_a: parse_index(f[1], line_no)?,
            pose_j: parse_index(f[2], line_no)?,
            cam_b: parse_index(f[3], line_no)?,
            count: parse_index(f[4], line_no)? as u64,
        });
    }
    Ok(out)
}
