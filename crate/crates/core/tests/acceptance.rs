//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pgslam --test acceptance`; pass criterion numbers
//! as arguments (`-- 3 7`) to run a subset. Exits non-zero if any selected
//! criterion fails.

use std::cell::OnceCell;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pgslam::config::RunConfig;
use pgslam::covis::{proxy_correspondences, CovisMatrix, RigCalibration};
use pgslam::edges::{
    filter_constraints, propose_edges, register_edges, write_constraints, ConstraintFilterParams, IcpConstraint,
    ScanDirectory,
};
use pgslam::geometry::{se3_exp, KdTree, PointCloud, Pose3, Twist6};
use pgslam::graph::{
    between_linearized, between_residual, export_g2o, imu_linearized, imu_residual, import_g2o, Factor, FactorGraph,
    NavState, Values,
};
use pgslam::imu::{preintegrate, ImuBias, ImuNoise, ImuSample, Preintegrated, GRAVITY};
use pgslam::io::{self, read_tum, write_tum, Trajectory};
use pgslam::parallel::Execution;
use pgslam::pipeline::{read_intervals, run_pipeline, simulate_dataset, EvalReport, OPTIMIZED, STATIONARY};
use pgslam::registration::{
    icp_point_to_plane, point_to_plane_gradient, point_to_plane_loss, sgld_posterior, Correspondence,
    RegistrationParams,
};
use pgslam::sim::scenes::{box_room_world, single_plane_world, two_loop_circuit};
use pgslam::sim::{simulate_scan, LidarModel};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).max(1)
}

fn random_pose(rng: &mut ChaCha8Rng, trans: f64) -> Pose3 {
    let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    Pose3::new(
        UnitQuaternion::from_scaled_axis(axis.normalize() * rng.gen_range(0.0..3.1)),
        Vector3::from_fn(|_, _| rng.gen_range(-trans..trans)),
    )
}

// --- 1 -----------------------------------------------------------------------

fn geometry() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let phi = dir * rng.gen_range(0.0..3.1);
        let rho = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let xi = Twist6::from_parts(phi, rho);
        let back = se3_exp(&xi).log();
        worst = worst.max((back.0 - xi.0).amax());
        let t = random_pose(&mut rng, 10.0);
        let again = Pose3::exp(&t.log());
        worst = worst.max((again.to_matrix() - t.to_matrix()).amax());
    }
    ensure(worst < 1e-9, || format!("exp/log round trip error {worst:e}"))?;

    for instance in 0..100 {
        let n = rng.gen_range(1..400);
        let spread = rng.gen_range(0.1..20.0);
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-spread..spread)))
            .collect();
        let tree = KdTree::from_points(points.clone()).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let q = Vector3::from_fn(|_, _| rng.gen_range(-1.2 * spread..1.2 * spread));
            let radius = rng.gen_range(0.0..spread);
            let brute = points
                .iter()
                .enumerate()
                .map(|(k, p)| (k, (p - q).norm()))
                .filter(|(_, d)| *d <= radius)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let got = tree.nearest(&q, radius);
            let same = match (got, brute) {
                (None, None) => true,
                (Some((_, dg)), Some((_, db))) => dg == db,
                _ => false,
            };
            ensure(same, || format!("instance {instance}: nearest {got:?} vs brute force {brute:?}"))?;
            let k = rng.gen_range(1..=n.min(12));
            let mut sorted: Vec<f64> = points.iter().map(|p| (p - q).norm()).collect();
            sorted.sort_by(f64::total_cmp);
            let knn: Vec<f64> = tree.knn(&q, k).iter().map(|(_, d)| *d).collect();
            ensure(knn == sorted[..k], || format!("instance {instance}: knn distances differ"))?;
        }
    }
    within(clock.elapsed(), Duration::from_secs(10))?;
    Ok(format!("round trip ≤ {worst:.1e}; 100 KdTree instances match brute force"))
}

// --- 2 -----------------------------------------------------------------------

fn errors(est: &Pose3, truth: &Pose3) -> (f64, f64) {
    let d = truth.between(est);
    (d.translation.norm(), d.rotation_angle().to_degrees())
}

fn registration() -> Outcome {
    let clock = Instant::now();
    let world = box_room_world();
    let lidar = LidarModel::default();
    let a = Pose3::new(UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3), Vector3::new(-1.0, -0.5, 1.2));
    let rel = Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, 5f64.to_radians()),
        Vector3::new(0.1, 0.0, 0.0),
    );
    let source = simulate_scan(&world, &a.compose(&rel), &lidar, 1);
    let target = simulate_scan(&world, &a, &lidar, 2);
    let params = RegistrationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut icp_worst, mut sgld_worst) = ((0.0f64, 0.0f64), (0.0f64, 0.0f64));
    for trial in 0..5 {
        let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let perturb = Pose3::new(
            UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..10f64).to_radians()),
            dir * rng.gen_range(0.0..0.2),
        );
        let init = rel.compose(&perturb);
        let icp = icp_point_to_plane(&source, &target, &init, &params).map_err(|e| e.to_string())?;
        let (dt, dr) = errors(&icp.mean_pose, &rel);
        icp_worst = (icp_worst.0.max(dt), icp_worst.1.max(dr));
        ensure(dt < 1e-3 && dr < 0.05, || format!("trial {trial}: ICP off by {dt:e} m, {dr:e} deg"))?;
        let sg = sgld_posterior(&source, &target, &init, &params, trial).map_err(|e| e.to_string())?;
        let (st, sr) = errors(&sg.mean_pose, &icp.mean_pose);
        sgld_worst = (sgld_worst.0.max(st), sgld_worst.1.max(sr));
        ensure(st < 5e-3 && sr < 0.1, || format!("trial {trial}: SGLD mean {st:e} m, {sr:e} deg from ICP"))?;
        let cov = sg.covariance.ok_or("no covariance")?;
        let eig = cov.symmetric_eigen().eigenvalues.min();
        ensure((cov - cov.transpose()).amax() == 0.0 && eig > 0.0, || {
            format!("trial {trial}: covariance not SPD (min eigenvalue {eig:e})")
        })?;
    }

    let plane_lidar = LidarModel {
        elevation_range: [-80.0, -20.0],
        ..LidarModel::default()
    };
    let a = Pose3::from_translation(Vector3::new(0.0, 0.0, 2.0));
    let rel = Pose3::from_translation(Vector3::new(0.1, 0.05, 0.0));
    let world = single_plane_world();
    let source = simulate_scan(&world, &a.compose(&rel), &plane_lidar, 1);
    let target = simulate_scan(&world, &a, &plane_lidar, 2);
    let sg = sgld_posterior(&source, &target, &rel, &params, 1).map_err(|e| e.to_string())?;
    let cov = sg.covariance.ok_or("no covariance on the plane")?;
    let ratio = cov[(3, 3)].min(cov[(4, 4)]) / cov[(5, 5)];
    ensure(ratio >= 10.0, || format!("in-plane / normal variance ratio {ratio:.2}"))?;
    within(clock.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "ICP ≤ {:.1e} m / {:.1e} deg; SGLD-ICP ≤ {:.1e} m / {:.1e} deg; plane ratio {ratio:.0}",
        icp_worst.0, icp_worst.1, sgld_worst.0, sgld_worst.1
    ))
}

// --- 3 -----------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;

fn relative(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1e-12)
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = FD_STEP;
    let mut worst = [0.0f64; 3];

    for _ in 0..100 {
        let pairs: Vec<Correspondence> = (0..20)
            .map(|_| Correspondence {
                source: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                target: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                normal: Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize(),
            })
            .collect();
        let t = random_pose(&mut rng, 2.0);
        let g = point_to_plane_gradient(&pairs, &t);
        let fd = Vector6::from_fn(|k, _| {
            let mut e = Vector6::zeros();
            e[k] = h;
            (point_to_plane_loss(&pairs, &t.retract(&Twist6(e))) - point_to_plane_loss(&pairs, &t.retract(&Twist6(-e))))
                / (2.0 * h)
        });
        worst[0] = worst[0].max((g - fd).norm() / g.norm().max(1e-12));
    }

    for _ in 0..100 {
        let (ti, tj) = (random_pose(&mut rng, 5.0), random_pose(&mut rng, 5.0));
        let noise = Twist6(Vector6::from_fn(|_, _| rng.gen_range(-0.3..0.3)));
        let z = ti.between(&tj).retract(&noise);
        let (_, ji, jj) = between_linearized(&ti, &tj, &z);
        for (which, analytic) in [(0, ji), (1, jj)] {
            let fd = Matrix6::from_fn(|r, c| {
                let mut e = Vector6::zeros();
                e[c] = h;
                let eval = |d: Vector6<f64>| {
                    let (a, b) = if which == 0 {
                        (ti.retract(&Twist6(d)), tj)
                    } else {
                        (ti, tj.retract(&Twist6(d)))
                    };
                    between_residual(&a, &b, &z).expect("finite").0[r]
                };
                (eval(e) - eval(-e)) / (2.0 * h)
            });
            worst[1] = worst[1].max((analytic - fd).norm() / analytic.norm());
        }
    }

    for _ in 0..100 {
        let pre = random_preintegration(&mut rng);
        let si = NavState {
            pose: random_pose(&mut rng, 5.0),
            velocity: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
        };
        let sj = NavState {
            pose: random_pose(&mut rng, 5.0),
            velocity: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
        };
        let bias = ImuBias::new(
            pre.linearization_bias.gyro + Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
            pre.linearization_bias.accel + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05)),
        );
        let lin = imu_linearized(&si, &sj, &bias, &pre, &GRAVITY);
        let mut analytic = nalgebra::DMatrix::zeros(9, 24);
        analytic.view_mut((0, 0), (9, 6)).copy_from(&lin.d_pose_i);
        analytic.view_mut((0, 6), (9, 3)).copy_from(&lin.d_vel_i);
        analytic.view_mut((0, 9), (9, 6)).copy_from(&lin.d_pose_j);
        analytic.view_mut((0, 15), (9, 3)).copy_from(&lin.d_vel_j);
        analytic.view_mut((0, 18), (9, 6)).copy_from(&lin.d_bias);
        let eval = |d: &[f64; 24]| {
            let v6 = |o: usize| Twist6(Vector6::from_column_slice(&d[o..o + 6]));
            let v3 = |o: usize| Vector3::from_column_slice(&d[o..o + 3]);
            let a = NavState {
                pose: si.pose.retract(&v6(0)),
                velocity: si.velocity + v3(6),
            };
            let b = NavState {
                pose: sj.pose.retract(&v6(9)),
                velocity: sj.velocity + v3(15),
            };
            let bb = ImuBias::new(bias.gyro + v3(18), bias.accel + v3(21));
            imu_residual(&a, &b, &bb, &pre, &GRAVITY)
        };
        let mut fd = nalgebra::DMatrix::zeros(9, 24);
        for c in 0..24 {
            let mut d = [0.0; 24];
            d[c] = h;
            let plus = eval(&d);
            d[c] = -h;
            let minus = eval(&d);
            fd.column_mut(c).copy_from(&((plus - minus) / (2.0 * h)));
        }
        worst[2] = worst[2].max(relative(&analytic, &fd));
    }
    ensure(worst.iter().all(|w| *w < 1e-5), || format!("relative errors {worst:?}"))?;
    Ok(format!(
        "100 configs each; worst relative error point-to-plane {:.1e}, between {:.1e}, IMU {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

fn random_preintegration(rng: &mut ChaCha8Rng) -> Preintegrated {
    let bias = ImuBias::new(
        Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
        Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1)),
    );
    let samples = wavy_samples(rng, 0.5, 0.01);
    preintegrate(&samples, &bias, &ImuNoise::default()).expect("valid samples")
}

/// A smoothly varying held IMU signal over `[0, duration]`.
fn wavy_samples(rng: &mut ChaCha8Rng, duration: f64, dt: f64) -> Vec<ImuSample> {
    let w0 = Vector3::from_fn(|_, _| rng.gen_range(-0.8..0.8));
    let a0 = Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)) + Vector3::new(0.0, 0.0, 9.81);
    let steps = (duration / dt).round() as usize;
    (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            ImuSample {
                timestamp: t,
                angular_velocity: w0 * (1.0 + t) + Vector3::new(0.0, 0.2 * (3.0 * t).sin(), 0.0),
                linear_acceleration: a0 + Vector3::new(t.sin(), t.cos(), 0.5 * (2.0 * t).sin()),
            }
        })
        .collect()
}

// --- 4 -----------------------------------------------------------------------

fn filter_gates() -> Outcome {
    let odometry = vec![
        Pose3::identity(),
        Pose3::new(UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7), Vector3::new(1.0, 2.0, 0.3)),
    ];
    let odom = odometry[0].between(&odometry[1]);
    let cases = [
        ("0.039 m + 4.9 deg", 0.039, 4.9f64, true),
        ("0.041 m", 0.041, 0.0, false),
        ("5.1 deg", 0.0, 5.1, false),
        ("0.039 m", 0.039, 0.0, true),
        ("4.9 deg", 0.0, 4.9, true),
    ];
    let params = ConstraintFilterParams::default();
    ensure(params.translation_threshold == 0.04 && params.rotation_threshold == 5.0, || {
        format!("default gates {params:?}")
    })?;
    for (name, trans, rot, should_pass) in cases {
        let d = Pose3::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rot.to_radians()),
            Vector3::new(trans, 0.0, 0.0),
        );
        let c = IcpConstraint {
            i: 0,
            j: 1,
            relative: odom.compose(&d),
            covariance: Matrix6::identity() * 1e-4,
            rms_residual: 0.0,
        };
        let (kept, _) = filter_constraints(&[c], &odometry, &params).map_err(|e| e.to_string())?;
        ensure((kept.len() == 1) == should_pass, || {
            format!("{name}: expected {}", if should_pass { "pass" } else { "fail" })
        })?;
    }
    Ok("0.039 m / 4.9 deg pass; 0.041 m and 5.1 deg fail".into())
}

// --- 5 -----------------------------------------------------------------------

/// Reference deltas from dt = 1e-5 sub-steps of the held signal, using the
/// rotation at each sub-step midpoint.
fn fine_step_oracle(samples: &[ImuSample], bias: &ImuBias) -> (UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>) {
    const H: f64 = 1e-5;
    let (mut r, mut v, mut p) = (UnitQuaternion::identity(), Vector3::zeros(), Vector3::zeros());
    for w in samples.windows(2) {
        let span = w[1].timestamp - w[0].timestamp;
        let steps = (span / H).round() as usize;
        let h = span / steps as f64;
        let omega = w[0].angular_velocity - bias.gyro;
        let acc = w[0].linear_acceleration - bias.accel;
        let half = UnitQuaternion::from_scaled_axis(omega * (0.5 * h));
        for _ in 0..steps {
            let mid = r * half;
            let a_world = mid * acc;
            p += v * h + a_world * (0.5 * h * h);
            v += a_world * h;
            r = mid * half;
        }
    }
    (r, v, p)
}

fn preintegration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = ImuNoise::default();
    let (mut comp, mut oracle, mut first_order) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let samples = wavy_samples(&mut rng, 1.0, 0.005);
        let bias = ImuBias::new(
            Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
            Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1)),
        );
        let whole = preintegrate(&samples, &bias, &noise).map_err(|e| e.to_string())?;
        let cut = rng.gen_range(10..samples.len() - 10);
        let a = preintegrate(&samples[..=cut], &bias, &noise).map_err(|e| e.to_string())?;
        let b = preintegrate(&samples[cut..], &bias, &noise).map_err(|e| e.to_string())?;
        let joined = a.append(&b).map_err(|e| e.to_string())?;
        comp = comp
            .max(whole.delta_rotation.angle_to(&joined.delta_rotation))
            .max((whole.delta_velocity - joined.delta_velocity).amax())
            .max((whole.delta_position - joined.delta_position).amax())
            .max((whole.covariance - joined.covariance).amax())
            .max((whole.bias_jacobians - joined.bias_jacobians).amax());

        let (r, v, p) = fine_step_oracle(&samples, &bias);
        oracle = oracle
            .max(whole.delta_rotation.angle_to(&r))
            .max((whole.delta_velocity - v).amax())
            .max((whole.delta_position - p).amax());

        let scale = rng.gen_range(0.1..1.0) * 1e-3;
        let dir = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize() * scale;
        let shifted = ImuBias::new(
            bias.gyro + dir.fixed_rows::<3>(0).into_owned(),
            bias.accel + dir.fixed_rows::<3>(3).into_owned(),
        );
        let exact = preintegrate(&samples, &shifted, &noise).map_err(|e| e.to_string())?;
        let approx = whole.corrected(&shifted);
        first_order = first_order
            .max(exact.delta_rotation.angle_to(&approx.rotation))
            .max((exact.delta_velocity - approx.velocity).amax())
            .max((exact.delta_position - approx.position).amax());
    }
    ensure(comp < 1e-9, || format!("composition error {comp:e}"))?;
    ensure(oracle < 1e-6, || format!("fine-step oracle error {oracle:e}"))?;
    ensure(first_order < 1e-6, || format!("first-order bias correction error {first_order:e}"))?;
    Ok(format!(
        "composition {comp:.1e}; vs fine-step {oracle:.1e}; bias correction {first_order:.1e}"
    ))
}

// --- 6, 7 --------------------------------------------------------------------

struct CircuitRun {
    config: RunConfig,
    report: EvalReport,
}

fn circuit_runs(root: &std::path::Path) -> Result<Vec<CircuitRun>, String> {
    (0..10u64)
        .map(|seed| {
            let dir = root.join(format!("circuit_{seed}"));
            let path = simulate_dataset("two_loop_circuit", seed, &dir, workers()).map_err(|e| e.to_string())?;
            let config = RunConfig::load(&path).map_err(|e| e.to_string())?;
            let report = run_pipeline(&config, false).map_err(|e| format!("seed {seed}: {e}"))?;
            Ok(CircuitRun { config, report })
        })
        .collect()
}

fn stationary(runs: &[CircuitRun]) -> Outcome {
    let scene = two_loop_circuit();
    let script = &scene.trajectory.rest_intervals;
    let window = runs[0].config.stationary.window;
    let mut worst: f64 = 0.0;
    for (seed, run) in runs.iter().enumerate() {
        let out = &run.config.paths.output;
        let intervals = read_intervals(&fs::read_to_string(out.join(STATIONARY)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let optimized = read_tum(&fs::read_to_string(out.join(OPTIMIZED)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(intervals.len() == script.len(), || {
            format!("seed {seed}: {} intervals detected, {} scripted", intervals.len(), script.len())
        })?;
        for (iv, rest) in intervals.iter().zip(script) {
            let (t0, t1) = (optimized.timestamps[iv.start_index], optimized.timestamps[iv.end_index]);
            let off = (t0 - rest.start).abs().max((t1 - rest.end).abs());
            worst = worst.max(off);
            ensure(off <= window, || {
                format!("seed {seed}: [{t0}, {t1}] vs scripted [{}, {}]", rest.start, rest.end)
            })?;
            let first = optimized.poses[iv.start_index];
            for k in iv.start_index..=iv.end_index {
                ensure(optimized.poses[k].to_tum() == first.to_tum(), || {
                    format!("seed {seed}: pose {k} differs from pose {}", iv.start_index)
                })?;
            }
        }
        ensure(run.report.bias_segments == 4, || {
            format!("seed {seed}: {} bias segments", run.report.bias_segments)
        })?;
    }
    Ok(format!(
        "10 seeds: 3 rests within {worst:.2} s of the script (window {window} s); 4 segments; aliased poses identical"
    ))
}

fn drift(runs: &[CircuitRun], elapsed: Duration) -> Outcome {
    let mut ratios = Vec::new();
    for (seed, run) in runs.iter().enumerate() {
        let (Some(ate), Some(odom)) = (run.report.ate_rmse, run.report.odometry_ate_rmse) else {
            return Err(format!("seed {seed}: no ATE in the report"));
        };
        ratios.push(ate / odom);
        let trace = &run.report.optimizer.chi2_trace;
        ensure(trace.windows(2).all(|w| w[1] <= w[0]), || format!("seed {seed}: chi2 increased: {trace:?}"))?;
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[4] + sorted[5]);
    ensure(median <= 0.2, || format!("median ATE ratio {median:.3} ({ratios:.3?})"))?;
    within(elapsed, Duration::from_secs(600))?;
    Ok(format!(
        "median ATE ratio {median:.3} over 10 seeds (worst {:.3}); chi2 non-increasing; {elapsed:.0?}",
        sorted[9]
    ))
}

// --- 8 -----------------------------------------------------------------------

fn covis() -> Outcome {
    let rig = RigCalibration::fixture();
    const D: f64 = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let n = rng.gen_range(0..200);
        let a: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-6.0..6.0))).collect();
        let rel = random_pose(&mut rng, 0.5);
        let b: Vec<Vector3<f64>> = a
            .iter()
            .map(|p| rel.inverse().transform_point(p) + Vector3::from_fn(|_, _| rng.gen_range(-0.03..0.03)))
            .collect();
        let world = random_pose(&mut rng, 10.0);
        let (ca, cb) = (PointCloud::new(a), PointCloud::new(b));
        let m = proxy_correspondences((trial, trial + 1), &ca, &cb, &rel, &world, &rig, D);
        ensure(m.counts.len() == 5 && m.counts.iter().all(|r| r.len() == 5), || {
            format!("trial {trial}: matrix is not 5x5")
        })?;
        let swapped = proxy_correspondences((trial + 1, trial), &cb, &ca, &rel.inverse(), &world.compose(&rel), &rig, D);
        ensure(swapped == m.transpose(), || format!("trial {trial}: swap is not the transpose"))?;
    }

    // grid spacing 0.2 m shifted by 0.06 m: every cross distance exceeds 0.05 m
    let grid: Vec<Vector3<f64>> = (0..10)
        .flat_map(|x| (0..10).map(move |y| Vector3::new(2.0 + 0.2 * x as f64, -1.0 + 0.2 * y as f64, 0.3)))
        .collect();
    let shifted: Vec<Vector3<f64>> = grid.iter().map(|p| p + Vector3::new(0.06, 0.0, 0.0)).collect();
    let m = proxy_correspondences(
        (0, 1),
        &PointCloud::new(grid),
        &PointCloud::new(shifted),
        &Pose3::identity(),
        &Pose3::identity(),
        &rig,
        D,
    );
    ensure(m == CovisMatrix::zeros(0, 1, 5), || format!("disjoint clouds counted {}", m.total()))?;

    let t_ij = Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0));
    let p = Vector3::new(5.0, 0.0, 0.0);
    let m = proxy_correspondences(
        (0, 1),
        &PointCloud::new(vec![p]),
        &PointCloud::new(vec![t_ij.inverse().transform_point(&p)]),
        &t_ij,
        &Pose3::identity(),
        &rig,
        D,
    );
    let mut expected = CovisMatrix::zeros(0, 1, 5);
    expected.counts[0][0] = 1;
    ensure(m == expected, || format!("single point gave {:?}", m.counts))?;
    Ok("5x5 on 20 random pairs; swap transposes; disjoint → 0; single point → counts[0][0] = 1".into())
}

// --- 9 -----------------------------------------------------------------------

fn determinism(root: &std::path::Path) -> Outcome {
    let dir = root.join("determinism");
    let path = simulate_dataset("box_room", 9, &dir, 1).map_err(|e| e.to_string())?;
    let mut config = RunConfig::load(&path).map_err(|e| e.to_string())?;
    let odometry = read_tum(&fs::read_to_string(&config.paths.trajectory).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let candidates = propose_edges(&odometry.poses, &config.proposal);
    let scans = ScanDirectory::new(&config.paths.scans);
    let register = |workers: usize| {
        let batch = register_edges(
            &candidates,
            &scans,
            &odometry.poses,
            &config.registration,
            config.seed,
            Execution::from_workers(workers),
        );
        write_constraints(&batch.constraints)
    };
    let one = register(1);
    let four = register(4);
    ensure(!one.is_empty() && one == four, || "1 vs 4 workers: constraint files differ".into())?;

    let mut outputs = Vec::new();
    for (run, workers) in [(0, 1), (1, 4)] {
        config.paths.output = dir.join(format!("run_{run}"));
        config.workers = workers;
        run_pipeline(&config, false).map_err(|e| e.to_string())?;
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&config.paths.output)
            .map_err(|e| e.to_string())?
            .map(|e| {
                let e = e.expect("dir entry");
                (e.file_name().into_string().expect("utf-8"), fs::read(e.path()).expect("readable"))
            })
            .filter(|(name, _)| name != pgslam::pipeline::TIMING)
            .collect();
        files.sort();
        outputs.push(files);
    }
    ensure(outputs[0] == outputs[1], || {
        let differ: Vec<&String> = outputs[0]
            .iter()
            .zip(&outputs[1])
            .filter(|(a, b)| a != b)
            .map(|(a, _)| &a.0)
            .collect();
        format!("pipeline reruns differ in {differ:?}")
    })?;
    Ok(format!(
        "{} constraints identical for 1 and 4 workers; {} pipeline artifacts identical across reruns",
        one.lines().count(),
        outputs[0].len()
    ))
}

// --- 10 ----------------------------------------------------------------------

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let poses: Vec<Pose3> = (0..50).map(|_| random_pose(&mut rng, 100.0)).collect();
    let timestamps: Vec<f64> = (0..50).map(|k| 1.7e9 + k as f64 * 0.1 + rng.gen_range(0.0..1e-3)).collect();
    let traj = Trajectory::new(timestamps, poses.clone());
    let back = read_tum(&write_tum(&traj)).map_err(|e| e.to_string())?;
    ensure(back == traj, || "TUM round trip is not exact".into())?;

    let mut graph = FactorGraph::new(Values::from_poses(poses));
    let info = |rng: &mut ChaCha8Rng| {
        let a = Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + Matrix6::identity() * 1e-3
    };
    let measured = random_pose(&mut rng, 1.0);
    let information = info(&mut rng);
    graph
        .add(Factor::PriorPose {
            pose: 0,
            measured,
            information,
        })
        .map_err(|e| e.to_string())?;
    for k in 1..50 {
        let j = rng.gen_range(0..50);
        let measured = random_pose(&mut rng, 3.0);
        let information = info(&mut rng);
        graph
            .add(Factor::BetweenPose {
                i: k,
                j,
                measured,
                information,
            })
            .map_err(|e| e.to_string())?;
    }
    let text = export_g2o(&graph);
    let parsed = import_g2o(&text).map_err(|e| e.to_string())?;
    ensure(parsed.initial.poses == graph.initial.poses, || "g2o vertices changed".into())?;
    ensure(parsed.factors() == graph.factors(), || "g2o edges changed".into())?;
    ensure(export_g2o(&parsed) == text, || "g2o re-export differs".into())?;

    let mut bad_tum = write_tum(&traj);
    bad_tum.push_str("1.0 2.0 oops 0 0 0 0 1\n");
    let tum_line = read_tum(&bad_tum).err().and_then(|e| e.line());
    ensure(tum_line == Some(51), || format!("TUM error line {tum_line:?}"))?;
    let bad_g2o = text.replacen("EDGE_SE3:QUAT 1", "EDGE_SE3:QUAT x", 1);
    let g2o_line = import_g2o(&bad_g2o).err().and_then(|e| e.line());
    let expected = text.lines().position(|l| l.starts_with("EDGE_SE3:QUAT 1 ")).map(|k| k + 1);
    ensure(g2o_line.is_some() && g2o_line == expected, || format!("g2o error line {g2o_line:?}, expected {expected:?}"))?;
    let bad_imu = format!("{}\n0.0,0,0,0,0,0,9.81\n0.01,0,0,0,0,0\n", io::IMU_CSV_HEADER);
    let imu_line = io::read_imu_csv(&bad_imu).err().and_then(|e| e.line());
    ensure(imu_line == Some(3), || format!("IMU CSV error line {imu_line:?}"))?;
    Ok("TUM and g2o round trips bit-exact; malformed TUM, g2o and IMU lines reported by number".into())
}

// --- driver ------------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |k: usize| selected.is_empty() || selected.contains(&k);
    let scratch = tempfile::tempdir().expect("scratch directory");
    let root: PathBuf = scratch.path().to_path_buf();

    let circuit: OnceCell<(Result<Vec<CircuitRun>, String>, Duration)> = OnceCell::new();
    let circuit_runs = || {
        circuit.get_or_init(|| {
            let clock = Instant::now();
            let runs = circuit_runs(&root);
            (runs, clock.elapsed())
        })
    };

    let names = [
        "geometry",
        "registration oracle",
        "gradient checks",
        "filter gates",
        "preintegration",
        "stationary handling",
        "end-to-end drift reduction",
        "covis",
        "determinism",
        "g2o/TUM round trips",
    ];
    let mut failed = 0;
    for (k, name) in names.iter().enumerate() {
        let id = k + 1;
        if !wants(id) {
            continue;
        }
        let clock = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match id {
            1 => geometry(),
            2 => registration(),
            3 => gradients(),
            4 => filter_gates(),
            5 => preintegration(),
            6 => match circuit_runs() {
                (Ok(runs), _) => stationary(runs),
                (Err(e), _) => Err(e.clone()),
            },
            7 => match circuit_runs() {
                (Ok(runs), elapsed) => drift(runs, *elapsed),
                (Err(e), _) => Err(e.clone()),
            },
            8 => covis(),
            9 => determinism(&root),
            10 => round_trips(),
            _ => unreachable!(),
        }))
        .unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
