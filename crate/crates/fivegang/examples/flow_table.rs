//! SDN match-action switching: the controller installs rules, the switch
//! looks packets up by (ingress port, flow id), highest priority wins.

use fivegang::ap::{Action, FlowTable, RuleMatch};
use fivegang::time::SimTime;
use std::collections::BTreeSet;

fn main() {
    let ports: BTreeSet<u32> = [1, 2, 3].into_iter().collect();
    let mut table = FlowTable::new();
    let now = SimTime::ZERO;

    let wildcard = table
        .install(0, RuleMatch::any(), Action::Forward(1), now, &ports)
        .unwrap();
    let video = table
        .install(10, RuleMatch::flow("video"), Action::Forward(2), now, &ports)
        .unwrap();
    table
        .install(
            20,
            RuleMatch {
                ingress_port: Some(9),
                flow_id: None,
            },
            Action::Drop,
            now,
            &ports,
        )
        .unwrap();
    println!("installed wildcard={wildcard}, video={video}, quarantine for port 9");

    for (port, flow) in [(0, "telemetry"), (0, "video"), (9, "video"), (9, "anything")] {
        let action = table.lookup(port, flow);
        println!("lookup port={port} flow={flow:<10} -> {action:?}");
    }

    // Removing the video rule falls back to the wildcard path.
    table.remove(video);
    println!("after removal: video -> {:?}", table.lookup(0, "video"));
    println!("table misses so far: {}", table.miss_count);
}
