//! Candidate edge proposal, parallel edge registration and the
//! odometry-consistency filter.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{estimate_normals, KdTree, PointCloud, Pose3};
use crate::io::{self, fmt_f64, parse_floats, parse_index, FormatError};
use crate::parallel::{self, mix_seed, Execution};
use crate::registration::{sgld_posterior, RegistrationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeCandidate {
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    pub knn: usize,
    pub gap_min: usize,
    pub gap_max: usize,
    /// pairs beyond `gap_max` closer than this are kept; 0 disables
    pub loop_radius: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            knn: 25,
            gap_min: 5,
            gap_max: 25,
            loop_radius: 2.0,
        }
    }
}

impl ProposalParams {
    /// The gap-or-radius predicate for a pair at index gap `gap` and
    /// translation distance `dist`.
    pub fn admits(&self, gap: usize, dist: f64) -> bool {
        (self.gap_min..=self.gap_max).contains(&gap) || (gap > self.gap_max && dist < self.loop_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintFilterParams {
    /// meters
    pub translation_threshold: f64,
    /// degrees
    pub rotation_threshold: f64,
}

impl Default for ConstraintFilterParams {
    fn default() -> Self {
        Self {
            translation_threshold: 0.04,
            rotation_threshold: 5.0,
        }
    }
}

/// Relative pose of frame `j` in frame `i` with its tangent covariance
/// (rotation block first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpConstraint {
    pub i: usize,
    pub j: usize,
    pub relative: Pose3,
    pub covariance: Matrix6<f64>,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    Translation,
    Rotation,
    Both,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Translation => "translation",
            RejectReason::Rotation => "rotation",
            RejectReason::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub constraint: IcpConstraint,
    pub reason: RejectReason,
    /// meters
    pub translation_error: f64,
    /// degrees
    pub rotation_error: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdgeError {
    #[error("pose index {index} out of range for {len} poses")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Candidate pairs from the `knn` nearest poses (by translation) of every
/// pose, kept when the gap-or-radius predicate holds. Sorted, no duplicates.
pub fn propose_edges(trajectory: &[Pose3], params: &ProposalParams) -> Vec<EdgeCandidate> {
    if trajectory.len() < 2 || params.knn == 0 {
        return Vec::new();
    }
    let positions: Vec<_> = trajectory.iter().map(|p| p.translation).collect();
    let tree = KdTree::from_points(positions.clone()).expect("non-empty");
    let mut out = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        for (j, dist) in tree.knn(p, params.knn + 1) {
            if j != i && params.admits(i.abs_diff(j), dist) {
                out.push(EdgeCandidate { i: i.min(j), j: i.max(j) });
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `T_i⁻¹ T_j` from the odometry.
pub fn relative_from_odometry(trajectory: &[Pose3], i: usize, j: usize) -> Result<Pose3, EdgeError> {
    let len = trajectory.len();
    for index in [i, j] {
        if index >= len {
            return Err(EdgeError::IndexOutOfRange { index, len });
        }
    }
    Ok(trajectory[i].between(&trajectory[j]))
}

/// Splits constraints into those consistent with the odometry and those
/// that are not. A constraint passes when the error transform
/// `odom⁻¹ · icp` moves at most `translation_threshold` and turns at most
/// `rotation_threshold`.
pub fn filter_constraints(
    constraints: &[IcpConstraint],
    trajectory: &[Pose3],
    params: &ConstraintFilterParams,
) -> Result<(Vec<IcpConstraint>, Vec<Rejected>), EdgeError> {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for c in constraints {
        let odom = relative_from_odometry(trajectory, c.i, c.j)?;
        let delta = odom.between(&c.relative);
        let dt = delta.translation.norm();
        let dr = delta.rotation_angle().to_degrees();
        let reason = match (dt > params.translation_threshold, dr > params.rotation_threshold) {
            (false, false) => {
                kept.push(c.clone());
                continue;
            }
            (true, false) => RejectReason::Translation,
            (false, true) => RejectReason::Rotation,
            (true, true) => RejectReason::Both,
        };
        rejected.push(Rejected {
            constraint: c.clone(),
            reason,
            translation_error: dt,
            rotation_error: dr,
        });
    }
    Ok((kept, rejected))
}

/// Random access to scans by pose index.
pub trait ScanSource: Sync {
    fn load(&self, index: usize) -> Result<PointCloud, String>;
}

impl ScanSource for [PointCloud] {
    fn load(&self, index: usize) -> Result<PointCloud, String> {
        self.get(index)
            .cloned()
            .ok_or_else(|| format!("no scan {index} (have {})", self.len()))
    }
}

impl ScanSource for Vec<PointCloud> {
    fn load(&self, index: usize) -> Result<PointCloud, String> {
        self.as_slice().load(index)
    }
}

/// PLY scans named `scan_000123.ply`; normals are estimated when absent.
#[derive(Debug, Clone)]
pub struct ScanDirectory {
    pub dir: PathBuf,
    pub normal_neighbors: usize,
}

impl ScanDirectory {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            normal_neighbors: 10,
        }
    }

    pub fn path(&self, index: usize) -> PathBuf {
        scan_path(&self.dir, index)
    }
}

pub fn scan_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("scan_{index:06}.ply"))
}

impl ScanSource for ScanDirectory {
    fn load(&self, index: usize) -> Result<PointCloud, String> {
        let cloud = io::load_ply(&self.path(index)).map_err(|e| e.to_string())?;
        if cloud.has_normals() {
            Ok(cloud)
        } else {
            estimate_normals(&cloud, self.normal_neighbors).map_err(|e| format!("scan {index}: {e}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// a scan could not be read
    Input,
    /// the scans were read but registration failed or did not converge
    Registration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFailure {
    pub edge: EdgeCandidate,
    pub kind: FailureKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeBatch {
    pub constraints: Vec<IcpConstraint>,
    pub failures: Vec<EdgeFailure>,
}

/// Registers every candidate (source = scan j, target = scan i) with SGLD
/// started from the odometry relative pose. Edge `(i, j)` uses the seed
/// derived from `(seed, i, j)`, so the result does not depend on `exec`.
/// Failed edges are reported, never fatal.
pub fn register_edges<S: ScanSource + ?Sized>(
    candidates: &[EdgeCandidate],
    scans: &S,
    trajectory: &[Pose3],
    params: &RegistrationParams,
    seed: u64,
    exec: Execution,
) -> EdgeBatch {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results = parallel::map(&sorted, exec, |edge| {
        register_one(edge, scans, trajectory, params, seed).map_err(|(kind, reason)| EdgeFailure {
            edge: *edge,
            kind,
            reason,
        })
    });
    let mut batch = EdgeBatch::default();
    for r in results {
        match r {
            Ok(c) => batch.constraints.push(c),
            Err(f) => {
                log::warn!("edge ({}, {}) dropped: {}", f.edge.i, f.edge.j, f.reason);
                batch.failures.push(f);
            }
        }
    }
    batch
}

fn register_one<S: ScanSource + ?Sized>(
    edge: &EdgeCandidate,
    scans: &S,
    trajectory: &[Pose3],
    params: &RegistrationParams,
    seed: u64,
) -> Result<IcpConstraint, (FailureKind, String)> {
    let input = |e: String| (FailureKind::Input, e);
    let failed = |e: String| (FailureKind::Registration, e);
    let init = relative_from_odometry(trajectory, edge.i, edge.j).map_err(|e| input(e.to_string()))?;
    let target = scans.load(edge.i).map_err(|e| input(format!("loading scan {}: {e}", edge.i)))?;
    let source = scans.load(edge.j).map_err(|e| input(format!("loading scan {}: {e}", edge.j)))?;
    let result = sgld_posterior(&source, &target, &init, params, mix_seed(seed, &[edge.i as u64, edge.j as u64]))
        .map_err(|e| failed(e.to_string()))?;
    if !result.converged {
        return Err(failed("registration did not converge".into()));
    }
    Ok(IcpConstraint {
        i: edge.i,
        j: edge.j,
        relative: result.mean_pose,
        covariance: result.covariance.ok_or_else(|| failed("no covariance".into()))?,
        rms_residual: result.rms_residual,
    })
}

// --- records ---------------------------------------------------------------

/// One line per constraint:
/// `i j tx ty tz qx qy qz qw rms c00 c01 … c55` (21 upper-triangular
/// covariance entries, rotation block first).
pub fn write_constraints(constraints: &[IcpConstraint]) -> String {
    let mut out = String::new();
    for c in constraints {
        let mut fields = vec![c.i.to_string(), c.j.to_string()];
        fields.extend(c.relative.to_tum().iter().map(|v| fmt_f64(*v)));
        fields.push(fmt_f64(c.rms_residual));
        for r in 0..6 {
            for col in r..6 {
                fields.push(fmt_f64(c.covariance[(r, col)]));
            }
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_constraints(text: &str) -> Result<Vec<IcpConstraint>, FormatError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = t.split_whitespace().collect();
        if tokens.len() != 31 {
            return Err(FormatError::parse(line_no, format!("expected 31 fields, found {}", tokens.len())));
        }
        let i = parse_index(tokens[0], line_no)?;
        let j = parse_index(tokens[1], line_no)?;
        let v = parse_floats(&tokens[2..], line_no)?;
        let mut tum = [0.0; 7];
        tum.copy_from_slice(&v[..7]);
        let mut cov = Matrix6::zeros();
        let mut k = 8;
        for r in 0..6 {
            for col in r..6 {
                cov[(r, col)] = v[k];
                cov[(col, r)] = v[k];
                k += 1;
            }
        }
        out.push(IcpConstraint {
            i,
            j,
            relative: Pose3::from_tum(tum),
            covariance: cov,
            rms_residual: v[7],
        });
    }
    Ok(out)
}

pub fn write_candidates(candidates: &[EdgeCandidate]) -> String {
    let pairs: Vec<(usize, usize)> = candidates.iter().map(|c| (c.i, c.j)).collect();
    io::write_pairs_csv(&pairs)
}

pub fn read_candidates(text: &str) -> Result<Vec<EdgeCandidate>, FormatError> {
    Ok(io::read_pairs_csv(text)?
        .into_iter()
        .map(|(i, j)| EdgeCandidate { i, j })
        .collect())
}

/// CSV with one row per constraint: decision, reason and both discrepancies.
pub fn write_filter_report(kept: &[IcpConstraint], rejected: &[Rejected], trajectory: &[Pose3]) -> String {
    let mut rows: Vec<(usize, usize, String)> = Vec::new();
    for c in kept {
        let d = trajectory[c.i].between(&trajectory[c.j]).between(&c.relative);
        rows.push((
            c.i,
            c.j,
            format!(
                "kept,,{},{}",
                fmt_f64(d.translation.norm()),
                fmt_f64(d.rotation_angle().to_degrees())
            ),
        ));
    }
    for r in rejected {
        rows.push((
            r.constraint.i,
            r.constraint.j,
            format!(
                "rejected,{},{},{}",
                r.reason,
                fmt_f64(r.translation_error),
                fmt_f64(r.rotation_error)
            ),
        ));
    }
    rows.sort_by_key(|(i, j, _)| (*i, *j));
    let mut out = String::from("i,j,decision,reason,translation_m,rotation_deg\n");
    for (i, j, rest) in rows {
        out.push_str(&format!("{i},{j},{rest}\n"));
    }
    out
}
