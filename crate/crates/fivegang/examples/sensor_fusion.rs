//! Complementary-filter orientation fusion: gyro integration keeps the
//! estimate smooth, the accel/mag absolute reference keeps it from
//! drifting.

use fivegang::fusion::{fuse_orientation, Orientation};
use fivegang::rng::stream_rng;
use rand::Rng;

fn main() {
    let dt = 0.01;
    let alpha = 0.98;
    let mut rng = stream_rng(3, "imu");
    let mut noisy = |base: [f64; 3], sigma: f64| {
        [
            base[0] + sigma * (rng.random::<f64>() - 0.5),
            base[1] + sigma * (rng.random::<f64>() - 0.5),
            base[2] + sigma * (rng.random::<f64>() - 0.5),
        ]
    };

    // Spin about z for two seconds, then hold still with noisy sensors.
    let omega = 0.8;
    let mut q = Orientation::IDENTITY;
    for _ in 0..200 {
        let gyro = noisy([0.0, 0.0, omega], 0.01);
        let accel = noisy([0.0, 0.0, 9.81], 0.05);
        let mag = noisy([0.0, 1.0, 0.0], 0.01);
        q = fuse_orientation(&q, gyro, accel, mag, dt, alpha).unwrap();
    }
    println!(
        "after 2 s at {omega} rad/s: yaw = {:.3} rad (gyro-dominated tracking)",
        q.yaw()
    );

    for step in 0..1500 {
        let gyro = noisy([0.0; 3], 0.01);
        let accel = noisy([0.0, 0.0, 9.81], 0.05);
        let mag = noisy([0.0, 1.0, 0.0], 0.01);
        q = fuse_orientation(&q, gyro, accel, mag, dt, alpha).unwrap();
        if step % 300 == 299 {
            println!(
                "stationary {:>4.1} s: yaw residual {:+.4} rad, |q| - 1 = {:+.1e}",
                (step + 1) as f64 * dt,
                q.yaw(),
                q.norm() - 1.0
            );
        }
    }
    println!("absolute reference pulled the estimate back toward identity");
}
