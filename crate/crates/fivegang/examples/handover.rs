//! Make-before-break handover: migrate a live flow between wireless
//! interfaces with zero packet loss, then rerun the same traffic with the
//! order inverted to show why the ordering matters.

use fivegang::runner::{execute, load_scenario};
use fivegang::scenario::HandoverMode;
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/handover.json");
    let scenario = load_scenario(&path).expect("bundled scenario is valid");

    let (report, jsonl) = execute(&scenario).expect("run succeeds");
    println!("== make before break ==");
    for line in jsonl.lines().filter(|l| l.contains("\"type\":\"handover\"")) {
        println!("  {line}");
    }
    let flow = &report.snapshot.flows["f1"];
    let ho = &report.handover_reports[0];
    println!(
        "flow f1: sent {} delivered {} lost {}",
        flow.sent, flow.delivered, flow.lost
    );
    println!(
        "handover: lost {} in-flight-at-switch {} dual-active {} us reroute {} us",
        ho.packets_lost_during_handover,
        ho.packets_in_flight_at_switch,
        ho.dual_active_us,
        ho.reroute_time_us
    );

    let mut counterfactual = scenario.clone();
    counterfactual.handover.as_mut().unwrap().mode = HandoverMode::BreakBeforeMake;
    let (bbm, _) = execute(&counterfactual).expect("run succeeds");
    let flow = &bbm.snapshot.flows["f1"];
    println!("\n== break before make (counterfactual) ==");
    println!(
        "flow f1: sent {} delivered {} lost {}  <- the gap costs packets",
        flow.sent, flow.delivered, flow.lost
    );
}
