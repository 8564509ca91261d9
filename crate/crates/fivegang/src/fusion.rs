//! Complementary-filter orientation fusion for 9-DoF frames.
//!
//! Convention: world frame is ENU (x east, y north, z up); the orientation
//! quaternion maps body vectors into the world. At rest the accelerometer
//! reads the reaction to gravity (body-frame "up") and the magnetometer the
//! horizontal north direction, so an aligned body yields the identity
//! orientation.

use thiserror::Error;

const DEGENERATE_CROSS_NORM: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("accelerometer and magnetometer vectors are parallel; no absolute reference")]
    DegenerateReference,
    #[error("blend weight alpha {0} not in [0, 1]")]
    BadAlpha(f64),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

/// Unit quaternion (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orientation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(mut self) -> Orientation {
        let n = self.norm();
        self.w /= n;
        self.x /= n;
        self.y /= n;
        self.z /= n;
        self
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Orientation) -> Orientation {
        Orientation {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }

    /// Exact exponential map of a body rate over `dt` seconds.
    pub fn from_axis_rate(rate: [f64; 3], dt_s: f64) -> Orientation {
        let theta = (rate[0] * rate[0] + rate[1] * rate[1] + rate[2] * rate[2]).sqrt() * dt_s;
        if theta < 1e-15 {
            return Orientation::IDENTITY;
        }
        let mag = theta / dt_s;
        let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
        Orientation {
            w: c,
            x: s * rate[0] / mag,
            y: s * rate[1] / mag,
            z: s * rate[2] / mag,
        }
    }

    /// Shortest-arc spherical interpolation from `self` (t = 0) to `to` (t = 1).
    pub fn slerp(&self, to: &Orientation, t: f64) -> Orientation {
        let mut b = *to;
        let mut dot = self.w * b.w + self.x * b.x + self.y * b.y + self.z * b.z;
        if dot < 0.0 {
            b = Orientation {
                w: -b.w,
                x: -b.x,
                y: -b.y,
                z: -b.z,
            };
            dot = -dot;
        }
        if dot > 1.0 - 1e-12 {
            // Nearly parallel: linear blend avoids the 0/0 below.
            return Orientation {
                w: self.w + t * (b.w - self.w),
                x: self.x + t * (b.x - self.x),
                y: self.y + t * (b.y - self.y),
                z: self.z + t * (b.z - self.z),
            }
            .normalized();
        }
        let theta = dot.acos();
        let (sa, sb) = (
            ((1.0 - t) * theta).sin() / theta.sin(),
            (t * theta).sin() / theta.sin(),
        );
        Orientation {
            w: sa * self.w + sb * b.w,
            x: sa * self.x + sb * b.x,
            y: sa * self.y + sb * b.y,
            z: sa * self.z + sb * b.z,
        }
        .normalized()
    }

    /// Angle of the rotation taking `self` to `other`, in radians.
    pub fn angle_to(&self, other: &Orientation) -> f64 {
        let dot = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z)
            .abs()
            .min(1.0);
        2.0 * dot.acos()
    }

    /// Yaw about the world z axis (ZYX convention).
    pub fn yaw(&self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// TRIAD-style absolute orientation from one accelerometer and one
/// magnetometer reading.
pub fn absolute_from_accel_mag(accel: [f64; 3], mag: [f64; 3]) -> Result<Orientation, FusionError> {
    if norm3(cross(accel, mag)) < DEGENERATE_CROSS_NORM {
        return Err(FusionError::DegenerateReference);
    }
    let up = unit(accel);
    let east = unit(cross(mag, up));
    let north = cross(up, east);
    // Rows of the body->world rotation are the world axes in body coords.
    let r = [east, north, up];
    // Shepperd's method.
    let trace = r[0][0] + r[1][1] + r[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Orientation {
            w: 0.25 * s,
            x: (r[2][1] - r[1][2]) / s,
            y: (r[0][2] - r[2][0]) / s,
            z: (r[1][0] - r[0][1]) / s,
        }
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        Orientation {
            w: (r[2][1] - r[1][2]) / s,
            x: 0.25 * s,
            y: (r[0][1] + r[1][0]) / s,
            z: (r[0][2] + r[2][0]) / s,
        }
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        Orientation {
            w: (r[0][2] - r[2][0]) / s,
            x: (r[0][1] + r[1][0]) / s,
            y: 0.25 * s,
            z: (r[1][2] + r[2][1]) / s,
        }
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        Orientation {
            w: (r[1][0] - r[0][1]) / s,
            x: (r[0][2] + r[2][0]) / s,
            y: (r[1][2] + r[2][1]) / s,
            z: 0.25 * s,
        }
    };
    Ok(q.normalized())
}

/// One complementary-filter step: integrate the gyro over `dt_s`, then pull
/// the result toward the accel/mag absolute estimate with weight `1 - alpha`.
pub fn fuse_orientation(
    prev: &Orientation,
    gyro: [f64; 3],
    accel: [f64; 3],
    mag: [f64; 3],
    dt_s: f64,
    alpha: f64,
) -> Result<Orientation, FusionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FusionError::BadAlpha(alpha));
    }
    if dt_s <= 0.0 {
        return Err(FusionError::BadTimeStep(dt_s));
    }
    let integrated = prev.mul(&Orientation::from_axis_rate(gyro, dt_s));
    let absolute = absolute_from_accel_mag(accel, mag)?;
    Ok(integrated.slerp(&absolute, 1.0 - alpha).normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const REST_ACCEL: [f64; 3] = [0.0, 0.0, 9.81];
    const REST_MAG: [f64; 3] = [0.0, 1.0, 0.0];

    #[test]
    fn aligned_rest_frame_snaps_to_identity() {
        let start = Orientation::from_axis_rate([0.0, 0.0, 1.0], 0.5); // arbitrary offset
        let fused =
            fuse_orientation(&start, [0.0; 3], REST_ACCEL, REST_MAG, 0.01, 0.0).unwrap();
        assert!(fused.angle_to(&Orientation::IDENTITY) < 1e-9);
    }

    #[test]
    fn pure_gyro_integration_matches_closed_form() {
        // alpha = 1: yaw after T seconds of constant rate w about z is w*T.
        let omega = 0.35;
        let dt = 1e-3;
        let steps = 2_000;
        let mut q = Orientation::IDENTITY;
        for _ in 0..steps {
            q = fuse_orientation(&q, [0.0, 0.0, omega], REST_ACCEL, REST_MAG, dt, 1.0).unwrap();
        }
        let expect = omega * dt * steps as f64;
        assert!((q.yaw() - expect).abs() < 1e-6, "yaw {} vs {expect}", q.yaw());
    }

    #[test]
    fn noisy_stationary_input_converges_to_reference() {
        let mut rng = crate::rng::stream_rng(5, "imu");
        let mut noisy = |base: [f64; 3], sigma: f64| {
            [
                base[0] + sigma * (rng.random::<f64>() - 0.5),
                base[1] + sigma * (rng.random::<f64>() - 0.5),
                base[2] + sigma * (rng.random::<f64>() - 0.5),
            ]
        };
        // Start well away from the reference.
        let mut q = Orientation::from_axis_rate([0.6, -0.4, 1.0], 1.0);
        let reference = absolute_from_accel_mag(REST_ACCEL, REST_MAG).unwrap();
        for _ in 0..10_000 {
            let gyro = noisy([0.0; 3], 0.02);
            let accel = noisy(REST_ACCEL, 0.05);
            let mag = noisy(REST_MAG, 0.01);
            q = fuse_orientation(&q, gyro, accel, mag, 0.01, 0.98).unwrap();
        }
        assert!(q.angle_to(&reference) < 0.01, "residual {}", q.angle_to(&reference));
    }

    #[test]
    fn norm_stays_unit_through_long_runs() {
        let mut rng = crate::rng::stream_rng(6, "imu2");
        let mut q = Orientation::IDENTITY;
        for _ in 0..5_000 {
            let gyro = [
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ];
            q = fuse_orientation(&q, gyro, REST_ACCEL, REST_MAG, 0.02, 0.9).unwrap();
            assert!((q.norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn parallel_reference_vectors_are_degenerate() {
        let err = absolute_from_accel_mag([0.0, 0.0, 9.81], [0.0, 0.0, 0.5]).unwrap_err();
        assert_eq!(err, FusionError::DegenerateReference);
    }

    #[test]
    fn parameter_ranges_validated() {
        let q = Orientation::IDENTITY;
        assert!(matches!(
            fuse_orientation(&q, [0.0; 3], REST_ACCEL, REST_MAG, 0.01, 1.5),
            Err(FusionError::BadAlpha(_))
        ));
        assert!(matches!(
            fuse_orientation(&q, [0.0; 3], REST_ACCEL, REST_MAG, 0.0, 0.5),
            Err(FusionError::BadTimeStep(_))
        ));
    }
}
