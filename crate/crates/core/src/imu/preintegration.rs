use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{ImuBias, ImuError, ImuNoise, ImuSample};
use crate::geometry::{hat, so3_exp, so3_left_jacobian, so3_log, so3_right_jacobian};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;

/// Accumulated IMU deltas between two keyframes.
///
/// Error-state and residual ordering is `[rotation, velocity, position]`;
/// bias Jacobian columns are `[gyro, accel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preintegrated {
    pub delta_rotation: UnitQuaternion<f64>,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    pub covariance: Matrix9,
    pub bias_jacobians: Matrix9x6,
    pub duration: f64,
    pub linearization_bias: ImuBias,
}

impl Preintegrated {
    pub fn new(bias: ImuBias) -> Self {
        Self {
            delta_rotation: UnitQuaternion::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            covariance: Matrix9::zeros(),
            bias_jacobians: Matrix9x6::zeros(),
            duration: 0.0,
            linearization_bias: bias,
        }
    }

    /// Integrates one measurement held constant over `dt`.
    ///
    /// The rotation is integrated exactly under the held angular rate, and
    /// the velocity and position updates use the closed-form single and
    /// double integrals of `Exp(ω s)`, so a piecewise-constant input is
    /// integrated without discretization error.
    pub fn integrate(
        &mut self,
        gyro: &Vector3<f64>,
        accel: &Vector3<f64>,
        dt: f64,
        noise: &ImuNoise,
    ) {
        let w = gyro - self.linearization_bias.gyro;
        let a = accel - self.linearization_bias.accel;
        let phi = w * dt;
        let step = so3_exp(&phi);
        let step_t = step.to_rotation_matrix().into_inner().transpose();
        let dr = self.delta_rotation.to_rotation_matrix().into_inner();
        let jl = so3_left_jacobian(&phi);
        let h = so3_double_integral(&phi);
        let jr = so3_right_jacobian(&phi);
        let a_hat = hat(&a);
        let dt2 = dt * dt;

        let dv_inc = jl * a * dt;
        let dp_inc = h * a * dt2;

        let mut f = Matrix9::identity();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&step_t);
        f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-dr * hat(&dv_inc)));
        f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-dr * hat(&dp_inc)));
        f.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Matrix3::identity() * dt));

        // Direct bias sensitivities of this step; the gyro column of the
        // translational rows uses the first-order expansion of Jl and H.
        let mut c = Matrix9x6::zeros();
        c.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr * dt));
        c.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(dr * a_hat * (0.5 * dt2)));
        c.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(dr * a_hat * (dt2 * dt / 6.0)));
        c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-dr * jl * dt));
        c.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-dr * h * dt2));

        let gyro_var = noise.gyro_noise_density.powi(2) / dt;
        let accel_var = noise.accel_noise_density.powi(2) / dt;
        let gyro_in = c.fixed_columns::<3>(0);
        let accel_in = c.fixed_columns::<3>(3);
        self.covariance = f * self.covariance * f.transpose()
            + gyro_in * gyro_in.transpose() * gyro_var
            + accel_in * accel_in.transpose() * accel_var;
        self.covariance = symmetrize(&self.covariance);
        self.bias_jacobians = f * self.bias_jacobians + c;

        self.delta_position += self.delta_velocity * dt + dr * dp_inc;
        self.delta_velocity += dr * dv_inc;
        self.delta_rotation =
            UnitQuaternion::new_normalize((self.delta_rotation * step).into_inner());
        self.duration += dt;
    }

    /// Concatenates `next`, which must start where `self` ends and share its
    /// linearization bias.
    pub fn append(&self, next: &Preintegrated) -> Result<Preintegrated, ImuError> {
        if self.linearization_bias != next.linearization_bias {
            return Err(ImuError::BiasMismatch);
        }
        let r1 = self.delta_rotation.to_rotation_matrix().into_inner();
        let r2 = next.delta_rotation.to_rotation_matrix().into_inner();
        let t2 = next.duration;

        let mut f = Matrix9::identity();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2.transpose());
        f.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-r1 * hat(&next.delta_velocity)));
        f.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(-r1 * hat(&next.delta_position)));
        f.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Matrix3::identity() * t2));
        let mut g = Matrix9::identity();
        g.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1);
        g.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1);

        Ok(Preintegrated {
            delta_rotation: UnitQuaternion::new_normalize(
                (self.delta_rotation * next.delta_rotation).into_inner(),
            ),
            delta_velocity: self.delta_velocity + r1 * next.delta_velocity,
            delta_position: self.delta_position
                + self.delta_velocity * t2
                + r1 * next.delta_position,
            covariance: symmetrize(
                &(f * self.covariance * f.transpose() + g * next.covariance * g.transpose()),
            ),
            bias_jacobians: f * self.bias_jacobians + g * next.bias_jacobians,
            duration: self.duration + next.duration,
            linearization_bias: self.linearization_bias,
        })
    }

    /// First-order deltas re-linearized at `bias`.
    pub fn corrected(&self, bias: &ImuBias) -> CorrectedDeltas {
        let dbg = bias.gyro - self.linearization_bias.gyro;
        let dba = bias.accel - self.linearization_bias.accel;
        let j = &self.bias_jacobians;
        let jrg = j.fixed_view::<3, 3>(0, 0);
        let jvg = j.fixed_view::<3, 3>(3, 0);
        let jva = j.fixed_view::<3, 3>(3, 3);
        let jpg = j.fixed_view::<3, 3>(6, 0);
        let jpa = j.fixed_view::<3, 3>(6, 3);
        CorrectedDeltas {
            rotation: self.delta_rotation * so3_exp(&(jrg * dbg)),
            velocity: self.delta_velocity + jvg * dbg + jva * dba,
            position: self.delta_position + jpg * dbg + jpa * dba,
        }
    }

    /// Rotation delta as a rotation vector, handy in tests and logs.
    pub fn delta_rotation_vector(&self) -> Vector3<f64> {
        so3_log(&self.delta_rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedDeltas {
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

/// Preintegrates `samples`; each sample's reading is held until the next
/// timestamp, so the last sample only closes the final interval.
pub fn preintegrate(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: &ImuNoise,
) -> Result<Preintegrated, ImuError> {
    if samples.len() < 2 {
        return Err(ImuError::TooFewSamples(samples.len()));
    }
    let mut pre = Preintegrated::new(*bias);
    for (k, pair) in samples.windows(2).enumerate() {
        let dt = pair[1].timestamp - pair[0].timestamp;
        if !(dt > 0.0) {
            return Err(ImuError::NonMonotonic { index: k + 1 });
        }
        pre.integrate(
            &pair[0].angular_velocity,
            &pair[0].linear_acceleration,
            dt,
            noise,
        );
    }
    Ok(pre)
}

/// Preintegrates the zero-order-hold signal over `[start, end]`: the
/// reading in force at `start` is held from `start`, and the interval is
/// closed at `end` whether or not a sample falls there.
pub fn preintegrate_span(
    samples: &[ImuSample],
    start: f64,
    end: f64,
    bias: &ImuBias,
    noise: &ImuNoise,
) -> Result<Preintegrated, ImuError> {
    const EPS: f64 = 1e-9;
    let not_covered = ImuError::NotCovered { start, end };
    if !(end > start) {
        return Err(not_covered);
    }
    let first = samples
        .partition_point(|s| s.timestamp <= start + EPS)
        .checked_sub(1)
        .ok_or(not_covered.clone())?;
    let last = samples.partition_point(|s| s.timestamp < end - EPS);
    if last >= samples.len() && samples.last().map_or(true, |s| s.timestamp < end - EPS) {
        return Err(not_covered);
    }
    let mut window: Vec<ImuSample> = samples[first..last].to_vec();
    window[0].timestamp = start;
    window.push(ImuSample {
        timestamp: end,
        ..samples[last.min(samples.len() - 1)]
    });
    preintegrate(&window, bias, noise)
}

/// `∫₀¹∫₀ˢ Exp(u φ) du ds = Σ φ^ⁿ / (n + 2)!`.
pub(crate) fn so3_double_integral(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let (a, b) = if theta < 0.1 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2 * t2 * t2 / 3628800.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        ((theta - s) / (t2 * theta), (0.5 * t2 + c - 1.0) / (t2 * t2))
    };
    Matrix3::identity() * 0.5 + k * a + k * k * b
}

fn symmetrize(m: &Matrix9) -> Matrix9 {
    (m + m.transpose()) * 0.5
}
