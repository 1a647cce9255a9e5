use nalgebra::{UnitQuaternion, Vector3, Vector6};
use pgslam::geometry::{se3_exp, PointCloud, Pose3, Twist6};
use pgslam::registration::{
    icp_point_to_plane, point_to_plane_gradient, point_to_plane_loss, sgld_posterior,
    Correspondence, RegistrationError, RegistrationParams,
};
use pgslam::sim::scenes::{box_room_world, single_plane_world, three_planes_world};
use pgslam::sim::{simulate_scan, LidarModel, WorldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(world: &WorldModel, a: Pose3, rel: Pose3, lidar: &LidarModel) -> (PointCloud, PointCloud) {
    let b = a.compose(&rel);
    (simulate_scan(world, &b, lidar, 1), simulate_scan(world, &a, lidar, 2))
}

fn errors(est: &Pose3, truth: &Pose3) -> (f64, f64) {
    let d = truth.between(est);
    (d.translation.norm(), d.rotation_angle().to_degrees())
}

fn box_room_truth() -> (Pose3, Pose3) {
    let a = Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3),
        Vector3::new(-1.0, -0.5, 1.2),
    );
    let rel = Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, 5f64.to_radians()),
        Vector3::new(0.1, 0.0, 0.0),
    );
    (a, rel)
}

fn perturbation(rng: &mut ChaCha8Rng, trans: f64, rot_deg: f64) -> Pose3 {
    let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
    let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
    let angle = rng.gen_range(0.0..rot_deg).to_radians();
    Pose3::new(
        UnitQuaternion::from_scaled_axis(axis * angle),
        dir * rng.gen_range(0.0..trans),
    )
}

#[test]
fn icp_identity_on_identical_clouds() {
    let world = box_room_world();
    let scan = simulate_scan(&world, &Pose3::from_translation(Vector3::new(0.0, 0.0, 1.2)), &LidarModel::default(), 0);
    let r = icp_point_to_plane(&scan, &scan, &Pose3::identity(), &RegistrationParams::default()).unwrap();
    assert!(r.mean_pose.log().norm() < 1e-12);
    assert!(r.rms_residual < 1e-12);
    assert!(r.converged);
}

#[test]
fn icp_recovers_box_room_offset() {
    let world = box_room_world();
    let (a, rel) = box_room_truth();
    let (src, tgt) = pair(&world, a, rel, &LidarModel::default());
    let params = RegistrationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let init = rel.compose(&perturbation(&mut rng, 0.2, 10.0));
        let r = icp_point_to_plane(&src, &tgt, &init, &params).unwrap();
        let (dt, dr) = errors(&r.mean_pose, &rel);
        assert!(dt < 1e-3 && dr < 0.05, "error {dt} m {dr} deg");
        assert!(r.converged);
    }
}

#[test]
fn icp_fails_without_correspondences() {
    let world = box_room_world();
    let scan = simulate_scan(&world, &Pose3::from_translation(Vector3::new(0.0, 0.0, 1.2)), &LidarModel::default(), 0);
    let far = Pose3::from_translation(Vector3::new(100.0, 0.0, 0.0));
    let err = icp_point_to_plane(&scan, &scan, &far, &RegistrationParams::default()).unwrap_err();
    assert!(matches!(err, RegistrationError::NoCorrespondences { iteration: 0, .. }));
}

#[test]
fn sgld_mean_tracks_icp_optimum() {
    let lidar = LidarModel::default();
    let params = RegistrationParams::default();
    let rel = se3_exp(&Twist6::new(0.01, -0.02, 0.05, 0.1, 0.05, -0.03));
    let corner = Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, 0.78),
        Vector3::new(3.0, 3.0, 3.0),
    );
    for (world, a) in [(three_planes_world(), corner), (box_room_world(), box_room_truth().0)] {
        let (src, tgt) = pair(&world, a, rel, &lidar);
        let init = rel.compose(&se3_exp(&Twist6::new(0.02, 0.0, -0.03, 0.05, -0.05, 0.02)));
        let icp = icp_point_to_plane(&src, &tgt, &init, &params).unwrap();
        let sg = sgld_posterior(&src, &tgt, &init, &params, 11).unwrap();
        let (dt, dr) = errors(&sg.mean_pose, &icp.mean_pose);
        assert!(dt < 5e-3 && dr < 0.1, "sgld vs icp {dt} m {dr} deg");
        let cov = sg.covariance.unwrap();
        assert!((cov - cov.transpose()).abs().max() <= 1e-12);
        assert!(cov.symmetric_eigen().eigenvalues.min() > 0.0);
    }
}

#[test]
fn sgld_is_seed_reproducible() {
    let world = box_room_world();
    let (a, rel) = box_room_truth();
    let (src, tgt) = pair(&world, a, rel, &LidarModel::default());
    let params = RegistrationParams::default();
    let x = sgld_posterior(&src, &tgt, &rel, &params, 5).unwrap();
    let y = sgld_posterior(&src, &tgt, &rel, &params, 5).unwrap();
    let z = sgld_posterior(&src, &tgt, &rel, &params, 6).unwrap();
    assert_eq!(x, y);
    assert_ne!(x.covariance, z.covariance);
}

#[test]
fn single_plane_is_degenerate_in_plane() {
    let world = single_plane_world();
    let lidar = LidarModel {
        elevation_range: [-80.0, -20.0],
        ..LidarModel::default()
    };
    let a = Pose3::from_translation(Vector3::new(0.0, 0.0, 2.0));
    let rel = Pose3::from_translation(Vector3::new(0.1, 0.05, 0.0));
    let (src, tgt) = pair(&world, a, rel, &lidar);
    let params = RegistrationParams {
        keep_samples: true,
        ..RegistrationParams::default()
    };
    let r = sgld_posterior(&src, &tgt, &rel, &params, 1).unwrap();
    let cov = r.covariance.unwrap();
    let normal_var = cov[(5, 5)];
    for k in [3, 4] {
        assert!(cov[(k, k)] >= 10.0 * normal_var, "in-plane {} vs normal {}", cov[(k, k)], normal_var);
    }
    let samples = r.samples.unwrap();
    assert_eq!(samples.len(), params.sgld_steps - params.sgld_burn_in);
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-6;
    for _ in 0..100 {
        let pairs: Vec<Correspondence> = (0..20)
            .map(|_| Correspondence {
                source: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                target: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                normal: Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize(),
            })
            .collect();
        let t = se3_exp(&Twist6(Vector6::from_fn(|_, _| rng.gen_range(-0.8..0.8))));
        let g = point_to_plane_gradient(&pairs, &t);
        let fd = Vector6::from_fn(|k, _| {
            let mut e = Vector6::zeros();
            e[k] = h;
            (point_to_plane_loss(&pairs, &t.retract(&Twist6(e)))
                - point_to_plane_loss(&pairs, &t.retract(&Twist6(-e))))
                / (2.0 * h)
        });
        let rel = (g - fd).norm() / g.norm().max(1e-12);
        assert!(rel < 1e-5, "relative error {rel}");
    }
}

/// Median squared Mahalanobis distance of the truth from the SGLD mean over
/// `trials` random box-room pairs.
fn whitened_median(range_noise: f64, trials: u64) -> f64 {
    let world = box_room_world();
    let params = RegistrationParams::default();
    let lidar = LidarModel {
        range_noise_sigma: range_noise,
        ..LidarModel::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut d2: Vec<f64> = (0..trials)
        .map(|trial| {
            // keep clear of the pillar at (2, 1.5)
            let a = Pose3::new(
                UnitQuaternion::from_euler_angles(0.0, 0.0, rng.gen_range(-3.0..3.0)),
                Vector3::new(rng.gen_range(-3.5..0.5), rng.gen_range(-2.5..2.5), 1.2),
            );
            let rel = perturbation(&mut rng, 0.2, 5.0);
            let init = rel.compose(&perturbation(&mut rng, 0.05, 2.0));
            let (src, tgt) = {
                let b = a.compose(&rel);
                (simulate_scan(&world, &b, &lidar, 2 * trial), simulate_scan(&world, &a, &lidar, 2 * trial + 1))
            };
            let r = sgld_posterior(&src, &tgt, &init, &params, trial).unwrap();
            let z = r.mean_pose.local(&rel).0;
            (z.transpose() * r.covariance.unwrap().try_inverse().unwrap() * z)[0]
        })
        .collect();
    d2.sort_by(f64::total_cmp);
    d2[d2.len() / 2]
}

const CHI2_6_MEDIAN: f64 = 5.348;

#[test]
fn whitened_consistency_with_matched_noise() {
    let median = whitened_median(0.02, 200);
    assert!(
        (CHI2_6_MEDIAN / 3.0..=CHI2_6_MEDIAN * 3.0).contains(&median),
        "median {median}"
    );
}

#[test]
#[ignore = "noise-free scans leave the truth far inside the reported spread"]
fn whitened_consistency_noise_free() {
    let median = whitened_median(0.0, 200);
    assert!(
        (CHI2_6_MEDIAN / 3.0..=CHI2_6_MEDIAN * 3.0).contains(&median),
        "median {median}"
    );
}
