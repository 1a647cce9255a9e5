use serde::{Deserialize, Serialize};

use super::{ImuError, ImuSample};
use crate::geometry::Pose3;

/// Inclusive range of pose indices during which the sensor is at rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationaryInterval {
    pub start_index: usize,
    pub end_index: usize,
}

impl StationaryInterval {
    pub fn new(start_index: usize, end_index: usize) -> Self {
        assert!(start_index <= end_index);
        Self {
            start_index,
            end_index,
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start_index..=self.end_index).contains(&index)
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Closed time span in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationaryParams {
    /// seconds
    pub window: f64,
    /// rad/s
    pub gyro_thresh: f64,
    /// m/s²
    pub accel_dev_thresh: f64,
    /// meters
    pub motion_thresh_trans: f64,
    /// degrees
    pub motion_thresh_rot: f64,
}

impl Default for StationaryParams {
    fn default() -> Self {
        Self {
            window: 1.0,
            gyro_thresh: 0.02,
            accel_dev_thresh: 0.05,
            motion_thresh_trans: 0.01,
            motion_thresh_rot: 0.5,
        }
    }
}

/// Sliding-window rest detector: a window is stationary when every gyro
/// sample is below `gyro_thresh` in norm and the standard deviation of the
/// accelerometer norm is below `accel_dev_thresh`. Samples covered by any
/// stationary window are merged into maximal time intervals.
pub fn detect_stationary_imu(
    samples: &[ImuSample],
    window: f64,
    gyro_thresh: f64,
    accel_dev_thresh: f64,
) -> Vec<TimeInterval> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let t0 = samples[0].timestamp;
    let t_last = samples[n - 1].timestamp;
    let span_is_short = t_last - t0 <= window;
    let mut marked = vec![false; n];
    let mut end = 0usize;
    for start in 0..n {
        let t_start = samples[start].timestamp;
        if !span_is_short && t_start + window > t_last + 1e-9 {
            break;
        }
        end = end.max(start);
        while end + 1 < n && samples[end + 1].timestamp <= t_start + window + 1e-9 {
            end += 1;
        }
        let win = &samples[start..=end];
        if window_is_stationary(win, gyro_thresh, accel_dev_thresh) {
            marked[start..=end].iter_mut().for_each(|m| *m = true);
        }
        if span_is_short {
            break;
        }
    }
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if !marked[k] {
            k += 1;
            continue;
        }
        let first = k;
        while k + 1 < n && marked[k + 1] {
            k += 1;
        }
        out.push(TimeInterval {
            start: samples[first].timestamp,
            end: samples[k].timestamp,
        });
        k += 1;
    }
    out
}

fn window_is_stationary(win: &[ImuSample], gyro_thresh: f64, accel_dev_thresh: f64) -> bool {
    if win.iter().any(|s| s.angular_velocity.norm() >= gyro_thresh) {
        return false;
    }
    let count = win.len() as f64;
    let mean = win.iter().map(|s| s.linear_acceleration.norm()).sum::<f64>() / count;
    let var = win
        .iter()
        .map(|s| (s.linear_acceleration.norm() - mean).powi(2))
        .sum::<f64>()
        / count;
    var.sqrt() < accel_dev_thresh
}

/// Chains consecutive poses whose relative motion is below both thresholds.
pub fn detect_stationary_icp(
    trajectory: &[Pose3],
    motion_thresh_trans: f64,
    motion_thresh_rot_deg: f64,
) -> Vec<StationaryInterval> {
    let rot_thresh = motion_thresh_rot_deg.to_radians();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..trajectory.len().saturating_sub(1) {
        let rel = trajectory[k].between(&trajectory[k + 1]);
        let still = rel.translation.norm() < motion_thresh_trans && rel.rotation_angle() < rot_thresh;
        match (still, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push(StationaryInterval::new(s, k));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(StationaryInterval::new(s, trajectory.len() - 1));
    }
    out
}

/// Poses whose timestamps fall inside a time interval; intervals holding
/// fewer than two poses are dropped.
pub fn time_to_pose_intervals(
    intervals: &[TimeInterval],
    pose_timestamps: &[f64],
) -> Vec<StationaryInterval> {
    const EPS: f64 = 1e-9;
    intervals
        .iter()
        .filter_map(|iv| {
            let first = pose_timestamps.iter().position(|t| *t >= iv.start - EPS)?;
            let last = pose_timestamps.iter().rposition(|t| *t <= iv.end + EPS)?;
            (last > first).then(|| StationaryInterval::new(first, last))
        })
        .collect()
}

/// Pairwise overlaps of two sorted interval lists (at least two poses each).
pub fn intersect_intervals(
    a: &[StationaryInterval],
    b: &[StationaryInterval],
) -> Vec<StationaryInterval> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].start_index.max(b[j].start_index);
        let hi = a[i].end_index.min(b[j].end_index);
        if hi > lo {
            out.push(StationaryInterval::new(lo, hi));
        }
        if a[i].end_index < b[j].end_index {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// One bias segment id per pose; a new segment starts at every stationary
/// interval start (except one starting at pose 0).
pub fn assign_bias_segments(
    intervals: &[StationaryInterval],
    num_poses: usize,
) -> Result<Vec<usize>, ImuError> {
    for (k, iv) in intervals.iter().enumerate() {
        if iv.end_index >= num_poses || iv.start_index > iv.end_index {
            return Err(ImuError::IntervalOutOfBounds {
                index: k,
                num_poses,
            });
        }
        if k > 0 && iv.start_index <= intervals[k - 1].end_index {
            return Err(ImuError::OverlappingIntervals { index: k });
        }
    }
    let mut segments = Vec::with_capacity(num_poses);
    let mut current = 0usize;
    let mut next = intervals.iter().peekable();
    for pose in 0..num_poses {
        if let Some(iv) = next.peek() {
            if iv.start_index == pose {
                if pose > 0 {
                    current += 1;
                }
                next.next();
            }
        }
        segments.push(current);
    }
    Ok(segments)
}
