//! Massive machine-type communication at desk scale: ten thousand devices
//! share one low-rate radio for a simulated minute, with exact packet
//! conservation and a battery-lifetime projection for the device class.

use fivegang::runner::{execute, load_scenario};
use std::path::Path;
use std::time::Instant;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/mmtc-scale.json");
    let scenario = load_scenario(&path).expect("bundled scenario is valid");
    println!(
        "running {} device flows for {} simulated seconds...",
        scenario.expanded_flows().len(),
        scenario.duration_us / 1_000_000
    );
    let started = Instant::now();
    let (report, _) = execute(&scenario).expect("run succeeds");
    println!("wall clock: {:?}", started.elapsed());

    let (mut sent, mut delivered, mut lost, mut violations) = (0u64, 0u64, 0u64, 0u64);
    for counters in report.snapshot.flows.values() {
        sent += counters.sent;
        delivered += counters.delivered;
        lost += counters.lost;
        if counters.sent != counters.delivered + counters.lost {
            violations += 1;
        }
    }
    println!(
        "packets: sent {sent}, delivered {delivered}, lost {lost} ({:.2}% over a 1% lossy radio)",
        lost as f64 * 100.0 / sent as f64
    );
    println!("flows violating sent == delivered + lost: {violations}");
    for p in &report.battery_projections {
        println!(
            "battery projection for {}: {:.0} s at {:.0} uW ({:.2} years)",
            p.node,
            p.projected_lifetime_s,
            p.average_power_uw,
            p.projected_lifetime_s / 3.1536e7
        );
    }
}
