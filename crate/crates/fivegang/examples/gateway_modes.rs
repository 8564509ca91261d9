//! Edge-gateway transmission modes under identical traffic: online ships
//! every reading immediately, interval batches on a schedule, sleep waits
//! for its wake predicate, each with visibly different transfer costs.

use fivegang::runner::{execute, load_scenario};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/gateway-modes.json");
    let scenario = load_scenario(&path).expect("bundled scenario is valid");
    let (report, _) = execute(&scenario).expect("run succeeds");

    println!(
        "{:<12} {:>8} {:>8} {:>10} {:>12} {:>10}",
        "gateway", "ingested", "batches", "records", "bytes", "cost"
    );
    for (name, c) in &report.snapshot.gateways {
        println!(
            "{name:<12} {:>8} {:>8} {:>10} {:>12} {:>10.3}",
            c.ingested, c.batches, c.records_shipped, c.batch_bytes, c.transfer_cost
        );
    }
    let gw = &report.snapshot.gateways;
    println!(
        "\nbatch ordering online >= interval >= sleep: {}",
        gw["gw_online"].batches >= gw["gw_interval"].batches
            && gw["gw_interval"].batches >= gw["gw_sleep"].batches
    );
    println!(
        "interval cheaper than online (connection events cost money): {}",
        gw["gw_interval"].transfer_cost < gw["gw_online"].transfer_cost
    );
}
