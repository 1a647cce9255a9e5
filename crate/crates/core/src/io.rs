//! Text formats shared by every stage: ASCII PLY, XYZ, TUM trajectories,
//! IMU CSV and edge-candidate CSV.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so every writer/reader pair here is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{PointCloud, Pose3};
use crate::imu::ImuSample;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl FormatError {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            message: message.into(),
        }
    }

    /// Line number of a parse failure.
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Parse { line, .. } => Some(*line),
            FormatError::Io { .. } => None,
        }
    }
}

/// Shortest round-trip representation of `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| FormatError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    // write-then-rename so an interrupted run never leaves a torn file
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Parses whitespace-separated floats, reporting `line` on failure.
pub(crate) fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, FormatError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| FormatError::parse(line, format!("invalid number `{t}`")))
        })
        .collect()
}

pub(crate) fn parse_index(token: &str, line: usize) -> Result<usize, FormatError> {
    token
        .parse::<usize>()
        .map_err(|_| FormatError::parse(line, format!("invalid index `{token}`")))
}

fn is_blank_or_comment(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

// --- PLY -------------------------------------------------------------------

pub fn write_ply(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.has_normals() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!("{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
        if let Some(normals) = &cloud.normals {
            let n = normals[i];
            out.push_str(&format!(" {} {} {}", fmt_f64(n.x), fmt_f64(n.y), fmt_f64(n.z)));
        }
        out.push('\n');
    }
    out
}

pub fn read_ply(text: &str) -> Result<PointCloud, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(FormatError::parse(1, "missing `ply` magic")),
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_done = false;
    for (no, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(FormatError::parse(no, format!("unsupported PLY format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(parse_index(n, no)?);
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(FormatError::parse(no, "list properties on vertices unsupported"));
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            [] => {}
            _ => return Err(FormatError::parse(no, format!("unexpected header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(FormatError::parse(text.lines().count(), "missing end_header"));
    }
    let count = count.ok_or_else(|| FormatError::parse(1, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(FormatError::parse(1, "vertex element lacks x/y/z")),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(x), Some(y), Some(z)) => Some((x, y, z)),
        _ => None,
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    let mut last_line = 0;
    for (no, line) in lines {
        if points.len() == count {
            break;
        }
        last_line = no;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < props.len() {
            return Err(FormatError::parse(
                no,
                format!("expected {} values, found {}", props.len(), tokens.len()),
            ));
        }
        let v = parse_floats(&tokens[..props.len()], no)?;
        points.push(Vector3::new(v[cx], v[cy], v[cz]));
        if let Some((nx, ny, nz)) = normal_cols {
            normals.push(Vector3::new(v[nx], v[ny], v[nz]));
        }
    }
    if points.len() != count {
        return Err(FormatError::parse(
            last_line,
            format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    Ok(PointCloud {
        points,
        normals: normal_cols.map(|_| normals),
    })
}

pub fn save_ply(path: &Path, cloud: &PointCloud) -> Result<(), FormatError> {
    write_text(path, &write_ply(cloud))
}

pub fn load_ply(path: &Path) -> Result<PointCloud, FormatError> {
    read_ply(&read_text(path)?)
}

// --- XYZ -------------------------------------------------------------------

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!("{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
        if let Some(n) = cloud.normals.as_ref().map(|ns| ns[i]) {
            out.push_str(&format!(" {} {} {}", fmt_f64(n.x), fmt_f64(n.y), fmt_f64(n.z)));
        }
        out.push('\n');
    }
    out
}

/// Reads `x y z` or `x y z nx ny nz` rows; all rows must agree.
pub fn read_xyz(text: &str) -> Result<PointCloud, FormatError> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if is_blank_or_comment(line) {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 6 {
            return Err(FormatError::parse(no, "expected 3 or 6 columns"));
        }
        if *width.get_or_insert(tokens.len()) != tokens.len() {
            return Err(FormatError::parse(no, "inconsistent column count"));
        }
        let v = parse_floats(&tokens, no)?;
        points.push(Vector3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            normals.push(Vector3::new(v[3], v[4], v[5]));
        }
    }
    Ok(PointCloud {
        points,
        normals: (width == Some(6)).then_some(normals),
    })
}

// --- TUM -------------------------------------------------------------------

/// A timestamped pose sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose3>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose3>) -> Self {
        assert_eq!(timestamps.len(), poses.len());
        Self { timestamps, poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub fn write_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, p) in traj.timestamps.iter().zip(&traj.poses) {
        out.push_str(&fmt_f64(*t));
        for v in p.to_tum() {
            out.push(' ');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn read_tum(text: &str) -> Result<Trajectory, FormatError> {
    let mut traj = Trajectory::default();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if is_blank_or_comment(line) {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(FormatError::parse(
                no,
                format!("expected 8 values, found {}", tokens.len()),
            ));
        }
        let v = parse_floats(&tokens, no)?;
        let q_norm = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if !(q_norm > 0.0) {
            return Err(FormatError::parse(no, "zero quaternion"));
        }
        traj.timestamps.push(v[0]);
        traj.poses
            .push(Pose3::from_tum([v[1], v[2], v[3], v[4], v[5], v[6], v[7]]));
    }
    Ok(traj)
}

pub fn save_tum(path: &Path, traj: &Trajectory) -> Result<(), FormatError> {
    write_text(path, &write_tum(traj))
}

pub fn load_tum(path: &Path) -> Result<Trajectory, FormatError> {
    read_tum(&read_text(path)?)
}

// --- IMU CSV ---------------------------------------------------------------

pub const IMU_CSV_HEADER: &str = "timestamp,wx,wy,wz,ax,ay,az";

pub fn write_imu_csv(samples: &[ImuSample]) -> String {
    let mut out = String::from(IMU_CSV_HEADER);
    out.push('\n');
    for s in samples {
        let w = s.angular_velocity;
        let a = s.linear_acceleration;
        let row = [s.timestamp, w.x, w.y, w.z, a.x, a.y, a.z];
        out.push_str(&row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn read_imu_csv(text: &str) -> Result<Vec<ImuSample>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if is_blank_or_comment(line) || (i == 0 && line.trim_start().starts_with("timestamp")) {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        if tokens.len() != 7 {
            return Err(FormatError::parse(
                no,
                format!("expected 7 columns, found {}", tokens.len()),
            ));
        }
        let v = parse_floats(&tokens, no)?;
        out.push(ImuSample {
            timestamp: v[0],
            angular_velocity: Vector3::new(v[1], v[2], v[3]),
            linear_acceleration: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

// --- candidate CSV -----------------------------------------------------------

pub fn write_pairs_csv(pairs: &[(usize, usize)]) -> String {
    let mut out = String::from("i,j\n");
    for (i, j) in pairs {
        out.push_str(&format!("{i},{j}\n"));
    }
    out
}

pub fn read_pairs_csv(text: &str) -> Result<Vec<(usize, usize)>, FormatError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let no = k + 1;
        if is_blank_or_comment(line) || (k == 0 && line.trim() == "i,j") {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        if tokens.len() != 2 {
            return Err(FormatError::parse(no, "expected `i,j`"));
        }
        out.push((parse_index(tokens[0], no)?, parse_index(tokens[1], no)?));
    }
    Ok(out)
}
