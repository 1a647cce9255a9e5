//! Residuals and analytic Jacobians. Poses are perturbed on the right,
//! `T exp(ξ)` with `ξ = [φ; ρ]`; velocities and biases additively.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use crate::geometry::{
    hat, se3_log, so3_exp, so3_log, so3_right_jacobian, so3_right_jacobian_inv, GeometryError,
    Pose3, Twist6,
};
use crate::imu::{ImuBias, Preintegrated};

pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;
pub type Vector9 = SMatrix<f64, 9, 1>;

/// `log(Z⁻¹ T_i⁻¹ T_j)`.
pub fn between_residual(t_i: &Pose3, t_j: &Pose3, measured: &Pose3) -> Result<Twist6, GeometryError> {
    se3_log(&measured.inverse().compose(&t_i.between(t_j)))
}

/// Residual with Jacobians with respect to `ξ_i` and `ξ_j`.
pub fn between_linearized(t_i: &Pose3, t_j: &Pose3, measured: &Pose3) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let r = measured.inverse().compose(&t_i.between(t_j)).log();
    let jr_inv = crate::geometry::se3_right_jacobian_inv(&r);
    let j_i = -jr_inv * t_j.between(t_i).adjoint();
    (r.0, j_i, jr_inv)
}

/// `log(Z⁻¹ T)` with its Jacobian.
pub fn prior_linearized(t: &Pose3, measured: &Pose3) -> (Vector6<f64>, Matrix6<f64>) {
    let r = measured.local(t);
    (r.0, crate::geometry::se3_right_jacobian_inv(&r))
}

/// Navigation state at one keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pose: Pose3,
    /// world frame, m/s
    pub velocity: Vector3<f64>,
}

/// Preintegrated-IMU residual `[r_R; r_v; r_p]`, bias corrected to first
/// order through the stored Jacobians.
pub fn imu_residual(
    state_i: &NavState,
    state_j: &NavState,
    bias: &ImuBias,
    pre: &Preintegrated,
    gravity: &Vector3<f64>,
) -> Vector9 {
    imu_linearized(state_i, state_j, bias, pre, gravity).residual
}

/// IMU residual with Jacobians. Pose blocks are 9×6 over `[φ; ρ]`,
/// velocity blocks 9×3, the bias block 9×6 over `[gyro; accel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuLinearization {
    pub residual: Vector9,
    pub d_pose_i: Matrix9x6,
    pub d_vel_i: Matrix9x3,
    pub d_pose_j: Matrix9x6,
    pub d_vel_j: Matrix9x3,
    pub d_bias: Matrix9x6,
}

pub fn imu_linearized(
    state_i: &NavState,
    state_j: &NavState,
    bias: &ImuBias,
    pre: &Preintegrated,
    gravity: &Vector3<f64>,
) -> ImuLinearization {
    let dt = pre.duration;
    let ri = state_i.pose.rotation_matrix();
    let rj = state_j.pose.rotation_matrix();
    let ri_t = ri.transpose();
    let (pi, pj) = (state_i.pose.translation, state_j.pose.translation);
    let (vi, vj) = (state_i.velocity, state_j.velocity);

    let dbg = bias.gyro - pre.linearization_bias.gyro;
    let jb = &pre.bias_jacobians;
    let jrg: Matrix3<f64> = jb.fixed_view::<3, 3>(0, 0).into_owned();
    let corr = pre.corrected(bias);

    let rot_err = so3_log(&(corr.rotation.inverse() * state_i.pose.rotation.inverse() * state_j.pose.rotation));
    let v_world = vj - vi - gravity * dt;
    let p_world = pj - pi - vi * dt - gravity * (0.5 * dt * dt);
    let v_body = ri_t * v_world;
    let p_body = ri_t * p_world;

    let mut residual = Vector9::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&rot_err);
    residual.fixed_rows_mut::<3>(3).copy_from(&(v_body - corr.velocity));
    residual.fixed_rows_mut::<3>(6).copy_from(&(p_body - corr.position));

    let jr_inv = so3_right_jacobian_inv(&rot_err);
    let i3 = Matrix3::identity();

    let mut d_pose_i = Matrix9x6::zeros();
    d_pose_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * rj.transpose() * ri));
    d_pose_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat(&v_body));
    d_pose_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&hat(&p_body));
    d_pose_i.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-i3));

    let mut d_pose_j = Matrix9x6::zeros();
    d_pose_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    d_pose_j.fixed_view_mut::<3, 3>(6, 3).copy_from(&(ri_t * rj));

    let mut d_vel_i = Matrix9x3::zeros();
    d_vel_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ri_t));
    d_vel_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ri_t * dt));

    let mut d_vel_j = Matrix9x3::zeros();
    d_vel_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&ri_t);

    let mut d_bias = Matrix9x6::zeros();
    let exp_r = so3_exp(&rot_err).to_rotation_matrix().into_inner();
    d_bias
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * exp_r.transpose() * so3_right_jacobian(&(jrg * dbg)) * jrg));
    d_bias
        .fixed_view_mut::<6, 6>(3, 0)
        .copy_from(&(-jb.fixed_view::<6, 6>(3, 0)));

    ImuLinearization {
        residual,
        d_pose_i,
        d_vel_i,
        d_pose_j,
        d_vel_j,
        d_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use crate::imu::{preintegrate, ImuNoise, ImuSample, GRAVITY};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose3 {
        se3_exp(&Twist6(Vector6::from_fn(|_, _| rng.gen_range(-1.5..1.5))))
    }

    #[test]
    fn consistent_between_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, z) = (random_pose(&mut rng), random_pose(&mut rng));
        let r = between_residual(&a, &a.compose(&z), &z).unwrap();
        assert!(r.norm() < 1e-12);
        let r = between_residual(&a, &a, &Pose3::identity()).unwrap();
        assert!(r.norm() < 1e-15);
    }

    #[test]
    fn between_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..100 {
            let (ti, tj) = (random_pose(&mut rng), random_pose(&mut rng));
            let z = ti.between(&tj).retract(&Twist6(Vector6::from_fn(|_, _| rng.gen_range(-0.3..0.3))));
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
                        between_residual(&a, &b, &z).unwrap().0[r]
                    };
                    (eval(e) - eval(-e)) / (2.0 * h)
                });
                let rel = (analytic - fd).norm() / analytic.norm();
                assert!(rel < 1e-5, "relative error {rel}");
            }
        }
    }

    fn random_preintegration(rng: &mut ChaCha8Rng) -> Preintegrated {
        let bias = ImuBias::new(
            Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
            Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1)),
        );
        let w0 = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let a0 = Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)) + Vector3::new(0.0, 0.0, 9.81);
        let samples: Vec<ImuSample> = (0..=50)
            .map(|k| {
                let t = k as f64 * 0.01;
                ImuSample {
                    timestamp: t,
                    angular_velocity: w0 * (1.0 + t),
                    linear_acceleration: a0 + Vector3::new(t.sin(), t.cos(), 0.0),
                }
            })
            .collect();
        preintegrate(&samples, &bias, &ImuNoise::default()).unwrap()
    }

    fn stack(lin: &ImuLinearization) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(9, 24);
        m.view_mut((0, 0), (9, 6)).copy_from(&lin.d_pose_i);
        m.view_mut((0, 6), (9, 3)).copy_from(&lin.d_vel_i);
        m.view_mut((0, 9), (9, 6)).copy_from(&lin.d_pose_j);
        m.view_mut((0, 15), (9, 3)).copy_from(&lin.d_vel_j);
        m.view_mut((0, 18), (9, 6)).copy_from(&lin.d_bias);
        m
    }

    fn perturb(x: &(NavState, NavState, ImuBias), d: &[f64]) -> (NavState, NavState, ImuBias) {
        let v6 = |o: usize| Vector6::from_column_slice(&d[o..o + 6]);
        let v3 = |o: usize| Vector3::from_column_slice(&d[o..o + 3]);
        (
            NavState {
                pose: x.0.pose.retract(&Twist6(v6(0))),
                velocity: x.0.velocity + v3(6),
            },
            NavState {
                pose: x.1.pose.retract(&Twist6(v6(9))),
                velocity: x.1.velocity + v3(15),
            },
            ImuBias::new(x.2.gyro + v3(18), x.2.accel + v3(21)),
        )
    }

    #[test]
    fn imu_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let pre = random_preintegration(&mut rng);
            let x = (
                NavState {
                    pose: random_pose(&mut rng),
                    velocity: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
                },
                NavState {
                    pose: random_pose(&mut rng),
                    velocity: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
                },
                ImuBias::new(
                    pre.linearization_bias.gyro + Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
                    pre.linearization_bias.accel + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05)),
                ),
            );
            let analytic = stack(&imu_linearized(&x.0, &x.1, &x.2, &pre, &GRAVITY));
            let mut fd = DMatrix::zeros(9, 24);
            for c in 0..24 {
                let mut d = [0.0; 24];
                d[c] = h;
                let plus = perturb(&x, &d);
                d[c] = -h;
                let minus = perturb(&x, &d);
                let col = (imu_residual(&plus.0, &plus.1, &plus.2, &pre, &GRAVITY)
                    - imu_residual(&minus.0, &minus.1, &minus.2, &pre, &GRAVITY))
                    / (2.0 * h);
                fd.column_mut(c).copy_from(&col);
            }
            let rel = (&analytic - &fd).norm() / analytic.norm();
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn consistent_imu_states_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pre = random_preintegration(&mut rng);
        let si = NavState {
            pose: random_pose(&mut rng),
            velocity: Vector3::new(0.3, -0.2, 0.1),
        };
        let ri = si.pose.rotation;
        let dt = pre.duration;
        let sj = NavState {
            pose: Pose3::new(
                ri * pre.delta_rotation,
                si.pose.translation + si.velocity * dt + GRAVITY * (0.5 * dt * dt) + ri * pre.delta_position,
            ),
            velocity: si.velocity + GRAVITY * dt + ri * pre.delta_velocity,
        };
        let r = imu_residual(&si, &sj, &pre.linearization_bias, &pre, &GRAVITY);
        assert!(r.norm() < 1e-9, "{r}");
    }
}
