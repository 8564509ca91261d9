//! Baseline anomaly detection: learn per-index statistics in a training
//! phase, then alarm when a window deviates too far from the reference.

use fivegang::cloud::{train, Detector};
use fivegang::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let dim = 48;
    let mut rng = stream_rng(21, "baseline");
    let window = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                (i as f64 * 0.3).sin() * 2.0 + 0.2 * z
            })
            .collect()
    };

    let training: Vec<Vec<f64>> = (0..150).map(|_| window(&mut rng)).collect();
    let model = train(&training, 4.0).unwrap();
    println!(
        "trained on {} windows of {dim} samples, threshold k = {}",
        model.trained_on, model.threshold_k
    );

    let clean = window(&mut rng);
    println!(
        "clean window score:    {:.2} -> alarm: {}",
        model.score(&clean).unwrap(),
        model.detect("demo", 0, &clean).unwrap().is_some()
    );

    let mut anomalous = window(&mut rng);
    let idx = rng.random_range(0..dim);
    anomalous[idx] += 6.0 * 0.2; // a six-sigma excursion on one index
    let alarm = model.detect("demo", 1_000_000, &anomalous).unwrap();
    match alarm {
        Some(alarm) => println!(
            "planted 6-sigma window: score {:.2} -> ALARM at t={} us",
            alarm.score, alarm.t_us
        ),
        None => println!("planted anomaly was missed"),
    }
}
