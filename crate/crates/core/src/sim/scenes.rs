//! Stock scenes used by the tests and the `simulate` subcommand.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    generate_trajectory, perturb_odometry, simulate_imu, simulate_scans, BiasSchedule, LidarModel,
    Plane, SimError, TrajectorySpec, Waypoint, WorldModel,
};
use super::inertial::BiasSegment;
use crate::geometry::{PointCloud, Pose3, Twist6};
use crate::imu::{ImuBias, ImuNoise, ImuSample, TimeInterval};
use crate::parallel::{mix_seed, Execution};

pub const SCENE_NAMES: [&str; 3] = ["box_room", "corridor", "two_loop_circuit"];

/// Everything needed to synthesize one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub world: WorldModel,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub lidar: LidarModel,
    #[serde(default)]
    pub imu_noise: ImuNoise,
    #[serde(default)]
    pub bias_schedule: BiasSchedule,
    /// per-step odometry drift, rotation (rad) then translation (m)
    pub odometry_sigma: Twist6,
}

/// Ground truth and sensor streams for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSequence {
    pub timestamps: Vec<f64>,
    pub ground_truth: Vec<Pose3>,
    pub odometry: Vec<Pose3>,
    pub scans: Vec<PointCloud>,
    pub imu: Vec<ImuSample>,
    pub rests: Vec<TimeInterval>,
}

impl Scene {
    pub fn by_name(name: &str) -> Result<Scene, SimError> {
        match name {
            "box_room" => Ok(box_room()),
            "corridor" => Ok(corridor()),
            "two_loop_circuit" => Ok(two_loop_circuit()),
            other => Err(SimError::UnknownScene(other.to_string())),
        }
    }

    pub fn simulate(&self, seed: u64, exec: Execution) -> Result<SimulatedSequence, SimError> {
        self.world.validate()?;
        self.lidar.validate()?;
        let traj = generate_trajectory(&self.trajectory)?;
        let timestamps = traj.sample_times(self.trajectory.scan_rate);
        let ground_truth: Vec<Pose3> = timestamps.iter().map(|t| traj.pose(*t)).collect();
        let scans = simulate_scans(&self.world, &ground_truth, &self.lidar, mix_seed(seed, &[1]), exec);
        let imu = simulate_imu(
            &traj,
            &self.bias_schedule,
            &self.imu_noise,
            self.trajectory.imu_rate,
            mix_seed(seed, &[2]),
        )?;
        let odometry = perturb_odometry(&ground_truth, &self.odometry_sigma, mix_seed(seed, &[3]));
        Ok(SimulatedSequence {
            timestamps,
            ground_truth,
            odometry,
            scans,
            imu,
            rests: self.trajectory.rest_intervals.clone(),
        })
    }
}

fn level(x: f64, y: f64, z: f64, yaw_deg: f64) -> Pose3 {
    Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw_deg.to_radians()),
        Vector3::new(x, y, z),
    )
}

fn drift_sigma() -> Twist6 {
    let r = 0.2f64.to_radians();
    Twist6::new(r, r, r, 0.01, 0.01, 0.01)
}

/// A 10 × 8 × 3 m room with one pillar.
pub fn box_room_world() -> WorldModel {
    let mut w = WorldModel::default();
    w.add_box(Vector3::new(0.0, 0.0, 1.5), Vector3::new(5.0, 4.0, 1.5))
        .add_box(Vector3::new(2.0, 1.5, 1.5), Vector3::new(0.4, 0.4, 1.5));
    w
}

pub fn box_room() -> Scene {
    Scene {
        name: "box_room".into(),
        world: box_room_world(),
        trajectory: TrajectorySpec {
            waypoints: vec![
                Waypoint { time: 0.0, pose: level(-2.0, -1.0, 1.2, 0.0) },
                Waypoint { time: 4.0, pose: level(0.0, -1.5, 1.2, 30.0) },
                Waypoint { time: 8.0, pose: level(0.0, 1.0, 1.2, 90.0) },
                Waypoint { time: 12.0, pose: level(-2.0, 1.5, 1.2, 160.0) },
            ],
            rest_intervals: vec![],
            imu_rate: 200.0,
            scan_rate: 2.0,
        },
        lidar: LidarModel::default(),
        imu_noise: ImuNoise::default(),
        bias_schedule: BiasSchedule::default(),
        odometry_sigma: drift_sigma(),
    }
}

/// A single floor plane seen from above; translation along the plane is
/// unobservable.
pub fn single_plane_world() -> WorldModel {
    let mut w = WorldModel::default();
    w.add_plane(Plane::new(Vector3::zeros(), Vector3::z(), Vector3::x(), [20.0, 20.0]));
    w
}

/// Three mutually orthogonal planes meeting at the origin.
pub fn three_planes_world() -> WorldModel {
    let mut w = WorldModel::default();
    w.add_plane(Plane::new(Vector3::new(5.0, 5.0, 0.0), Vector3::z(), Vector3::x(), [5.0, 5.0]))
        .add_plane(Plane::new(Vector3::new(5.0, 0.0, 5.0), Vector3::y(), Vector3::x(), [5.0, 5.0]))
        .add_plane(Plane::new(Vector3::new(0.0, 5.0, 5.0), Vector3::x(), Vector3::y(), [5.0, 5.0]));
    w
}

/// L-shaped corridor, 3 m wide and 3 m high: along +x to x = 20, then
/// along +y.
pub fn corridor_world() -> WorldModel {
    let mut w = WorldModel::default();
    let (h, hz) = (1.5, 1.5);
    let wall = |c: Vector3<f64>, n: Vector3<f64>, a: Vector3<f64>, len: f64| Plane::new(c, n, a, [len, hz]);
    w.add_plane(Plane::new(Vector3::new(9.0, 9.0, 0.0), Vector3::z(), Vector3::x(), [11.0, 11.0]))
        .add_plane(Plane::new(Vector3::new(9.0, 9.0, 3.0), -Vector3::z(), Vector3::x(), [11.0, 11.0]))
        // south wall and back wall
        .add_plane(wall(Vector3::new(9.0, -h, hz), Vector3::y(), Vector3::x(), 11.0))
        .add_plane(wall(Vector3::new(-2.0, 0.0, hz), Vector3::x(), Vector3::y(), h))
        // north wall up to the inner corner
        .add_plane(wall(Vector3::new(7.5, h, hz), -Vector3::y(), Vector3::x(), 9.5))
        // outer and inner walls of the second leg
        .add_plane(wall(Vector3::new(20.0, 9.25, hz), -Vector3::x(), Vector3::y(), 10.75))
        .add_plane(wall(Vector3::new(17.0, 10.75, hz), Vector3::x(), Vector3::y(), 9.25))
        .add_plane(wall(Vector3::new(18.5, 20.0, hz), -Vector3::y(), Vector3::x(), h));
    w
}

pub fn corridor() -> Scene {
    Scene {
        name: "corridor".into(),
        world: corridor_world(),
        trajectory: TrajectorySpec {
            waypoints: vec![
                Waypoint { time: 0.0, pose: level(0.0, 0.0, 1.2, 0.0) },
                Waypoint { time: 8.0, pose: level(8.0, 0.0, 1.2, 0.0) },
                Waypoint { time: 16.0, pose: level(16.0, 0.0, 1.2, 10.0) },
                Waypoint { time: 20.0, pose: level(18.5, 2.0, 1.2, 80.0) },
                Waypoint { time: 28.0, pose: level(18.5, 10.0, 1.2, 90.0) },
            ],
            rest_intervals: vec![],
            imu_rate: 200.0,
            scan_rate: 2.0,
        },
        lidar: LidarModel {
            azimuth_count: 360,
            elevation_count: 16,
            elevation_range: [-45.0, 45.0],
            ..LidarModel::default()
        },
        imu_noise: ImuNoise::default(),
        bias_schedule: BiasSchedule::default(),
        odometry_sigma: drift_sigma(),
    }
}

/// A 24 × 18 × 4 m hall with pillars.
pub fn hall_world() -> WorldModel {
    let mut w = WorldModel::default();
    w.add_box(Vector3::new(5.0, 3.0, 2.0), Vector3::new(12.0, 9.0, 2.0))
        .add_box(Vector3::new(5.0, 3.0, 2.0), Vector3::new(1.5, 1.0, 2.0))
        .add_box(Vector3::new(-3.5, 9.0, 2.0), Vector3::new(0.5, 0.5, 2.0))
        .add_box(Vector3::new(13.5, -3.0, 2.0), Vector3::new(0.6, 0.4, 2.0))
        .add_box(Vector3::new(14.0, 9.5, 2.0), Vector3::new(0.5, 0.8, 2.0))
        .add_box(Vector3::new(-4.0, -3.5, 2.0), Vector3::new(0.7, 0.7, 2.0));
    w
}

/// Two laps of a 10 × 6 m rectangle with three scripted rests; 200 scans.
pub fn two_loop_circuit() -> Scene {
    // (x, y, yaw) around one lap, starting at the origin heading +x
    let lap = [
        (5.0, 0.0, 0.0),
        (10.0, 0.0, 45.0),
        (10.0, 3.0, 90.0),
        (10.0, 6.0, 135.0),
        (5.0, 6.0, 180.0),
        (0.0, 6.0, 225.0),
        (0.0, 3.0, 270.0),
        (0.0, 0.0, 315.0),
    ];
    // waypoint indices (1-based along the path) followed by a rest
    let rests_after = [(2usize, 5.5), (6, 5.0), (12, 5.0)];
    let z = 1.0;
    let mut waypoints = vec![Waypoint { time: 0.0, pose: level(0.0, 0.0, z, 0.0) }];
    let mut rest_intervals = Vec::new();
    let mut t = 0.0;
    for k in 0..2 * lap.len() {
        let (x, y, yaw) = lap[k % lap.len()];
        let yaw = yaw + 360.0 * (k / lap.len()) as f64;
        let prev = waypoints[waypoints.len() - 1].pose.translation;
        let len = (Vector3::new(x, y, z) - prev).norm();
        t += if len > 4.0 { 6.5 } else { 4.0 };
        let pose = level(x, y, z, yaw);
        waypoints.push(Waypoint { time: t, pose });
        if let Some((_, dur)) = rests_after.iter().find(|(idx, _)| *idx == k + 1) {
            rest_intervals.push(TimeInterval { start: t, end: t + dur });
            t += dur;
            waypoints.push(Waypoint { time: t, pose });
        }
    }
    let bias = |g: [f64; 3], a: [f64; 3]| ImuBias::new(Vector3::from(g), Vector3::from(a));
    let mut segments = vec![BiasSegment {
        start: 0.0,
        bias: bias([0.002, -0.001, 0.0015], [0.02, -0.01, 0.015]),
    }];
    let later = [
        bias([0.0025, -0.0005, 0.001], [0.025, -0.005, 0.01]),
        bias([0.0015, -0.0012, 0.002], [0.015, -0.015, 0.02]),
        bias([0.003, 0.0, 0.0012], [0.03, 0.0, 0.012]),
    ];
    for (rest, b) in rest_intervals.iter().zip(later) {
        segments.push(BiasSegment { start: rest.start, bias: b });
    }
    Scene {
        name: "two_loop_circuit".into(),
        world: hall_world(),
        trajectory: TrajectorySpec {
            waypoints,
            rest_intervals,
            imu_rate: 200.0,
            scan_rate: 2.0,
        },
        lidar: LidarModel {
            range_noise_sigma: 0.005,
            ..LidarModel::default()
        },
        imu_noise: ImuNoise::default(),
        bias_schedule: BiasSchedule { segments },
        odometry_sigma: drift_sigma(),
    }
}
