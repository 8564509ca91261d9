//! Integration checks on whole scenario runs: conservation, determinism,
//! and the engine-level contracts that only show up with real wiring.

use fivegang::runner::{execute, load_scenario};
use fivegang::scenario::validate;
use std::path::Path;

fn scenario_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

#[test]
fn bundled_scenarios_validate() {
    for name in [
        "handover.json",
        "sensor-pipeline.json",
        "gateway-modes.json",
        "mmtc-scale.json",
    ] {
        load_scenario(&scenario_path(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn minimal_flow_scenario_conserves_packets() {
    let doc = serde_json::json!({
        "seed": 5,
        "duration_us": 2_000_000,
        "links": [
            {"id": "l1", "profile": "embb", "loss_probability": 0.2, "from": "src", "to": "cloud"}
        ],
        "flows": [
            {"id": "f1", "link": "l1", "packets": 500, "payload_bytes": 64, "rate_pps": 1000.0}
        ]
    });
    let scenario = validate(&doc.to_string()).unwrap();
    let (report, _) = execute(&scenario).unwrap();
    let c = &report.snapshot.flows["f1"];
    assert_eq!(c.sent, 500);
    assert_eq!(c.sent, c.delivered + c.lost);
    assert!(c.lost > 50, "a 20% lossy link should lose packets: {c:?}");
    assert_eq!(report.snapshot.latency.count, c.delivered);
}

#[test]
fn rerun_is_byte_identical() {
    let scenario = load_scenario(&scenario_path("handover.json")).unwrap();
    let (report_a, jsonl_a) = execute(&scenario).unwrap();
    let (report_b, jsonl_b) = execute(&scenario).unwrap();
    assert_eq!(jsonl_a, jsonl_b);
    assert_eq!(report_a.snapshot, report_b.snapshot);
}

#[test]
fn never_true_sleep_predicate_ships_nothing() {
    // Mode semantics invariant: with an unreachable wake predicate the
    // sleep gateway emits zero batches while online ships every reading.
    let mut scenario = load_scenario(&scenario_path("gateway-modes.json")).unwrap();
    let gateways = match &mut scenario.gateway {
        fivegang::scenario::GatewaySection::Many(v) => v,
        _ => unreachable!("bundled scenario uses a list"),
    };
    for gw in gateways.iter_mut() {
        if let fivegang::gateway::GatewayMode::Sleep {
            wake_buffered_bytes,
            ..
        } = &mut gw.mode
        {
            *wake_buffered_bytes = Some(u64::MAX);
        }
    }
    let (report, _) = execute(&scenario).unwrap();
    let gw = &report.snapshot.gateways;
    assert_eq!(gw["gw_sleep"].batches, 0);
    assert!(gw["gw_online"].batches >= gw["gw_interval"].batches);
    assert!(gw["gw_interval"].batches >= gw["gw_sleep"].batches);
}

#[test]
fn make_before_break_never_misses_a_lookup() {
    // Reconfiguration atomicity: during the rule swap no packet observes
    // the flow bound to zero interfaces, so the miss counter stays zero.
    let scenario = load_scenario(&scenario_path("handover.json")).unwrap();
    let (report, _) = execute(&scenario).unwrap();
    assert_eq!(report.snapshot.table_misses, 0);
    // The counterfactual proves the counter is live.
    let mut bbm = scenario.clone();
    bbm.handover.as_mut().unwrap().mode = fivegang::scenario::HandoverMode::BreakBeforeMake;
    let (bbm_report, _) = execute(&bbm).unwrap();
    assert!(bbm_report.snapshot.table_misses > 0);
}

#[test]
fn telemetry_driven_policy_executes_handover() {
    // Degrade the bound interface and let the radio manager decide on its
    // own: loss EWMA crosses the threshold, the plan executes, and the
    // flow finishes on the clean interface.
    let doc = serde_json::json!({
        "seed": 904,
        "duration_us": 6_000_000,
        "profiles": {
            "dirty": {"base": "urllc", "loss_probability": 0.5},
            "clean": {"base": "urllc", "loss_probability": 0.0}
        },
        "links": [
            {"id": "wl_a", "channel": "A", "profile": "dirty", "from": "ap:1", "to": "cloud"},
            {"id": "wl_b", "channel": "B", "profile": "clean", "from": "ap:2", "to": "cloud"}
        ],
        "ap": {
            "ingress_ports": [0],
            "ifaces": [
                {"iface": 1, "link": "wl_a"},
                {"iface": 2, "link": "wl_b"}
            ],
            "rules": [{"priority": 10, "flow_id": "f1", "forward_iface": 1}],
            "telemetry_period_us": 50_000,
            "auto_handover": true,
            "policy": {"loss_threshold": 0.2, "min_improvement": 0.1, "hold_down_us": 1_000_000}
        },
        "flows": [
            {"id": "f1", "ingress_port": 0, "packets": 5000, "payload_bytes": 64, "rate_pps": 1000.0}
        ]
    });
    let scenario = validate(&doc.to_string()).unwrap();
    let (report, jsonl) = execute(&scenario).unwrap();
    let reports = &report.handover_reports;
    assert_eq!(reports.len(), 1, "policy should trigger exactly one migration");
    assert!(reports[0].completed);
    assert_eq!(reports[0].new_iface, 2);
    assert!(
        jsonl.lines().any(|l| l.contains("\"state\":\"Complete\"")),
        "handover state records present"
    );
    // After migrating to the clean channel the tail of the flow stops
    // losing packets; the dirty head lost plenty.
    let flow = &report.snapshot.flows["f1"];
    assert!(flow.lost > 0);
    assert!(flow.delivered > flow.lost);
}

#[test]
fn establish_failure_aborts_without_touching_the_flow() {
    let mut scenario = load_scenario(&scenario_path("handover.json")).unwrap();
    scenario.handover.as_mut().unwrap().fail_establish = true;
    let (report, _) = execute(&scenario).unwrap();
    let flow = &report.snapshot.flows["f1"];
    assert_eq!(flow.delivered, flow.sent, "flow continues uninterrupted");
    assert_eq!(flow.lost, 0);
    let ho = &report.handover_reports[0];
    assert!(!ho.completed);
    assert_eq!(ho.packets_lost_during_handover, 0);
}

#[test]
fn dead_battery_halts_transmissions_mid_run() {
    // Capacity funds only a handful of windows; afterwards the node goes
    // silent and the energy counter freezes at (or just past) capacity.
    let doc = serde_json::json!({
        "seed": 77,
        "duration_us": 4_000_000,
        "profiles": {"radio": {"base": "embb"}},
        "links": [
            {"id": "up", "profile": "radio", "from": "node:n1", "to": "cloud"}
        ],
        "nodes": [{
            "id": "n1",
            "role": "source",
            "link": "up",
            "sample_period_us": 10_000,
            "battery": {
                "capacity_uj": 900.0,
                "tx_cost_uj_per_byte": 0.2,
                "sample_cost_uj": 5.0,
                "idle_cost_uj_per_s": 10.0
            },
            "pipeline": {
                "window_n": 8,
                "cs": null,
                "quantizer": {"bits_per_sample": 8, "clip_min": -12.0, "clip_max": 12.0},
                "dsc": null,
                "rlnc": {"k": 2, "redundancy": 1.0}
            }
        }]
    });
    let scenario = validate(&doc.to_string()).unwrap();
    let (report, _) = execute(&scenario).unwrap();
    let flow = &report.snapshot.flows["plant/n1"];
    // 400 samples would fit in the run; the battery dies long before that.
    assert!(flow.sent > 0, "node transmitted before dying");
    assert!(flow.sent < 20, "dead node kept transmitting: {}", flow.sent);
    let drawn = report.snapshot.energy_uj["node:n1"];
    assert!(drawn >= 900.0, "node died at {drawn} uJ");
    assert!(drawn < 1200.0, "draw should stop near capacity, got {drawn}");
}

#[test]
fn strict_syndrome_code_degrades_chunks_but_keeps_reconstructing() {
    // correctable = 0 turns every injected flip into a CorrelationViolation;
    // the cloud substitutes side-information chunks, counts them, and the
    // reconstruction still lands close to the source.
    let mut scenario = load_scenario(&scenario_path("sensor-pipeline.json")).unwrap();
    let dsc = scenario.nodes[1].pipeline.as_mut().unwrap().dsc.as_mut().unwrap();
    dsc.correctable = 0;
    let (report, jsonl) = execute(&scenario).unwrap();
    assert!(
        report.snapshot.cloud.degraded_chunks > 0,
        "strict code must flag substituted chunks"
    );
    assert_eq!(report.snapshot.cloud.generations_incomplete, 0);
    for line in jsonl.lines() {
        let Ok(rec) = serde_json::from_str::<fivegang::metrics::MetricRecord>(line) else {
            continue;
        };
        if let fivegang::metrics::MetricRecord::Reconstruction {
            stream,
            rel_l2_error: Some(err),
            ..
        } = rec
        {
            // Substituted side info differs from the flipped source only in
            // low bits, so quality stays comfortably inside the budget.
            assert!(err <= 1e-3, "{stream}: {err}");
        }
    }
}

#[test]
fn mesh_relay_chain_reconstructs_at_the_cloud() {
    // source -> relay -> cloud: the relay recodes every receipt and the
    // sink decodes from recoded packets alone.
    let doc = serde_json::json!({
        "seed": 31,
        "duration_us": 2_200_000,
        "profiles": {"radio": {"base": "embb", "loss_probability": 0.0}},
        "links": [
            {"id": "hop1", "profile": "radio", "from": "node:src", "to": "node:fwd"},
            {"id": "hop2", "profile": "radio", "from": "node:fwd", "to": "cloud"}
        ],
        "nodes": [
            {
                "id": "src",
                "role": "source",
                "link": "hop1",
                "sample_period_us": 8000,
                "signal": {
                    "tones": [[], [], [], [{"freq_hz": 7.8125, "amplitude": 0.4, "phase": 0.0}], [], [], [], [], []]
                },
                "pipeline": {
                    "window_n": 16,
                    "cs": null,
                    "quantizer": {"bits_per_sample": 12, "clip_min": -12.0, "clip_max": 12.0},
                    "dsc": null,
                    "rlnc": {"k": 4, "redundancy": 1.5}
                }
            },
            {"id": "fwd", "role": "relay", "link": "hop2", "relay": {"recode_every": 1}}
        ]
    });
    let scenario = validate(&doc.to_string()).unwrap();
    let (report, _) = execute(&scenario).unwrap();
    assert!(report.snapshot.cloud.windows_reconstructed >= 10);
    assert_eq!(report.snapshot.cloud.generations_incomplete, 0);
    // The relay spent transmit energy forwarding.
    assert!(report.snapshot.energy_uj["node:fwd"] > 0.0);
}

#[test]
fn redundancy_sweep_improves_decode_completion() {
    // More coded packets per generation can only help: completion counts
    // are non-decreasing across the redundancy sweep at 10% loss.
    let scenario = load_scenario(&scenario_path("sensor-pipeline.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<serde_json::Value> = [1.0, 1.5, 2.0]
        .iter()
        .map(|v| serde_json::json!(v))
        .collect();
    let reports = fivegang::runner::sweep(
        &scenario,
        "nodes[0].pipeline.rlnc.redundancy",
        &values,
        dir.path(),
        false,
    )
    .unwrap();
    let completed: Vec<u64> = reports
        .iter()
        .map(|r| r.snapshot.cloud.generations_completed)
        .collect();
    assert_eq!(completed.len(), 3);
    assert!(
        completed[0] <= completed[1] && completed[1] <= completed[2],
        "completion counts {completed:?}"
    );
    assert_eq!(completed[2], 16, "2x redundancy completes every window");
}

#[test]
fn run_until_is_monotone_in_sent_counters() {
    let doc = serde_json::json!({
        "seed": 6,
        "duration_us": 1_000_000,
        "links": [
            {"id": "l1", "profile": "urllc", "from": "src", "to": "cloud"}
        ],
        "flows": [
            {"id": "f1", "link": "l1", "packets": 10, "payload_bytes": 32, "rate_pps": 10.0, "start_us": 500_000}
        ]
    });
    let scenario = validate(&doc.to_string()).unwrap();
    let early = fivegang::runner::run_until(&scenario, 499_999).unwrap();
    assert_eq!(early.flows.get("f1").map(|c| c.sent).unwrap_or(0), 0);
    let at_start = fivegang::runner::run_until(&scenario, 500_000).unwrap();
    assert_eq!(at_start.flows["f1"].sent, 1);
}
