use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{so3_exp, Pose3};
use crate::imu::TimeInterval;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// seconds
    pub time: f64,
    pub pose: Pose3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
    /// Each rest must start and end on waypoint times, with every waypoint
    /// in between holding the same pose.
    #[serde(default)]
    pub rest_intervals: Vec<TimeInterval>,
    /// Hz
    pub imu_rate: f64,
    /// Hz
    pub scan_rate: f64,
}

/// Pose and derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub pose: Pose3,
    /// world frame, m/s
    pub velocity: Vector3<f64>,
    /// body frame, rad/s
    pub angular_velocity: Vector3<f64>,
    /// world frame, m/s²
    pub acceleration: Vector3<f64>,
}

/// Cubic Hermite translation with Catmull–Rom tangents. Rotation is a
/// per-segment slerp whose parameter is a cubic in time: linear between
/// interior waypoints and easing to zero rate at the ends and around rests.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTrajectory {
    waypoints: Vec<Waypoint>,
    tangents: Vec<Vector3<f64>>,
    pinned: Vec<bool>,
    rotation_steps: Vec<Vector3<f64>>,
    static_segments: Vec<bool>,
    rests: Vec<TimeInterval>,
}

fn same_pose(a: &Pose3, b: &Pose3) -> bool {
    a.translation == b.translation
        && (a.rotation.coords == b.rotation.coords || a.rotation.coords == -b.rotation.coords)
}

pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<ContinuousTrajectory, SimError> {
    let wp = &spec.waypoints;
    let n = wp.len();
    if n < 2 {
        return Err(SimError::TooFewWaypoints(n));
    }
    for k in 1..n {
        if !(wp[k].time > wp[k - 1].time) {
            return Err(SimError::UnorderedWaypoints { index: k });
        }
    }
    for rate in [spec.imu_rate, spec.scan_rate] {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SimError::InvalidRate(rate));
        }
    }
    let static_segments: Vec<bool> = wp.windows(2).map(|w| same_pose(&w[0].pose, &w[1].pose)).collect();

    for (index, rest) in spec.rest_intervals.iter().enumerate() {
        let find = |t: f64| wp.iter().position(|w| (w.time - t).abs() <= TIME_EPS);
        let (Some(a), Some(b)) = (find(rest.start), find(rest.end)) else {
            return Err(SimError::InvalidRest { index });
        };
        if b <= a || !static_segments[a..b].iter().all(|s| *s) {
            return Err(SimError::InvalidRest { index });
        }
    }

    let pinned: Vec<bool> = (0..n)
        .map(|k| k == 0 || k == n - 1 || static_segments[k - 1] || static_segments[k])
        .collect();
    let tangents = (0..n)
        .map(|k| {
            if pinned[k] {
                Vector3::zeros()
            } else {
                (wp[k + 1].pose.translation - wp[k - 1].pose.translation)
                    / (wp[k + 1].time - wp[k - 1].time)
            }
        })
        .collect();
    let rotation_steps = wp
        .windows(2)
        .map(|w| crate::geometry::so3_log(&(w[0].pose.rotation.inverse() * w[1].pose.rotation)))
        .collect();

    Ok(ContinuousTrajectory {
        waypoints: wp.clone(),
        tangents,
        pinned,
        rotation_steps,
        static_segments,
        rests: spec.rest_intervals.clone(),
    })
}

impl ContinuousTrajectory {
    pub fn start_time(&self) -> f64 {
        self.waypoints[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time
    }

    pub fn rest_intervals(&self) -> &[TimeInterval] {
        &self.rests
    }

    /// `start + k / rate` for every k that stays inside the span.
    pub fn sample_times(&self, rate: f64) -> Vec<f64> {
        let t0 = self.start_time();
        let count = ((self.end_time() - t0) * rate + TIME_EPS).floor() as usize;
        (0..=count).map(|k| t0 + k as f64 / rate).collect()
    }

    pub fn pose(&self, t: f64) -> Pose3 {
        self.state(t).pose
    }

    pub fn state(&self, t: f64) -> TrajectoryState {
        let wp = &self.waypoints;
        let rest = |pose: Pose3| TrajectoryState {
            pose,
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        };
        if t <= wp[0].time {
            return rest(wp[0].pose);
        }
        if t >= wp[wp.len() - 1].time {
            return rest(wp[wp.len() - 1].pose);
        }
        let k = wp.partition_point(|w| w.time <= t) - 1;
        if self.static_segments[k] {
            return rest(wp[k].pose);
        }
        let (a, b) = (&wp[k], &wp[k + 1]);
        let d = b.time - a.time;
        let u = (t - a.time) / d;
        let (u2, u3) = (u * u, u * u * u);

        let (p0, p1) = (a.pose.translation, b.pose.translation);
        let (m0, m1) = (self.tangents[k] * d, self.tangents[k + 1] * d);
        let pos = p0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + m0 * (u3 - 2.0 * u2 + u)
            + p1 * (-2.0 * u3 + 3.0 * u2)
            + m1 * (u3 - u2);
        let vel = (p0 * (6.0 * u2 - 6.0 * u)
            + m0 * (3.0 * u2 - 4.0 * u + 1.0)
            + p1 * (-6.0 * u2 + 6.0 * u)
            + m1 * (3.0 * u2 - 2.0 * u))
            / d;
        let acc = (p0 * (12.0 * u - 6.0)
            + m0 * (6.0 * u - 4.0)
            + p1 * (6.0 - 12.0 * u)
            + m1 * (6.0 * u - 2.0))
            / (d * d);

        let phi = self.rotation_steps[k];
        let slope = |k: usize| if self.pinned[k] { 0.0 } else { 1.0 };
        let (s0, s1) = (slope(k), slope(k + 1));
        let s = -2.0 * u3 + 3.0 * u2 + s0 * (u3 - 2.0 * u2 + u) + s1 * (u3 - u2);
        let s_dot = (-6.0 * u2 + 6.0 * u + s0 * (3.0 * u2 - 4.0 * u + 1.0) + s1 * (3.0 * u2 - 2.0 * u)) / d;
        let rotation = a.pose.rotation * so3_exp(&(phi * s));

        TrajectoryState {
            pose: Pose3::new(rotation, pos),
            velocity: vel,
            angular_velocity: phi * s_dot,
            acceleration: acc,
        }
    }
}
