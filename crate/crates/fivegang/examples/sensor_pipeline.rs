//! The full sensor-to-cloud path: two correlated 9-DoF sensors encode
//! windows with compressed sensing, one ships only DSC syndromes, both
//! RLNC-code their windows across a lossy radio, and the cloud rebuilds
//! the signals, trains a baseline, and alarms on an injected burst.

use fivegang::metrics::MetricRecord;
use fivegang::runner::{execute, load_scenario};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/sensor-pipeline.json");
    let scenario = load_scenario(&path).expect("bundled scenario is valid");
    let (report, jsonl) = execute(&scenario).expect("run succeeds");

    println!("per-window reconstruction quality:");
    for line in jsonl.lines() {
        let Ok(record) = serde_json::from_str::<MetricRecord>(line) else {
            continue;
        };
        if let MetricRecord::Reconstruction {
            stream,
            window,
            score,
            rel_l2_error,
            alarm,
            ..
        } = record
        {
            println!(
                "  {stream:<12} window {window}: rel L2 error {:.2e}{}{}",
                rel_l2_error.unwrap_or(f64::NAN),
                score.map(|s| format!(", score {s:.2}")).unwrap_or_default(),
                if alarm { "  << ALARM" } else { "" }
            );
        }
    }
    let cloud = &report.snapshot.cloud;
    println!(
        "\ngenerations complete {} / incomplete {}, windows reconstructed {}",
        cloud.generations_completed, cloud.generations_incomplete, cloud.windows_reconstructed
    );
    for (flow, counters) in &report.snapshot.flows {
        println!(
            "{flow}: {} coded packets sent, {} delivered, {} lost to the 10% radio",
            counters.sent, counters.delivered, counters.lost
        );
    }
    println!("alarms raised: {}", report.snapshot.alarms_raised);
    for alarm in &report.alarms {
        println!("  {} scored {:.1} at t={} us", alarm.stream, alarm.score, alarm.t_us);
    }
}
