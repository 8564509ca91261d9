//! Scenario execution: builds every entity from a validated scenario and
//! drives them through the deterministic engine.
//!
//! All simulation state lives in ordered maps keyed by entity id, and every
//! random draw comes from a per-entity stream derived from the scenario
//! seed, so a rerun of the same scenario is byte-identical.

use crate::ap::{
    Action, FlowTable, HandoverPlan, HandoverPolicy, HandoverReport, IfaceId,
    RadioManager, RuleMatch, TelemetrySample,
};
use crate::channel::{Link, TransmitOutcome};
use crate::cloud::{
    Alarm, AnomalyModel, Broker, CloudError, Detector, MeasurementWindow, PipelineYield,
    StreamCfg, StreamPipeline, SubId,
};
use crate::engine::Engine;
use crate::fusion::{fuse_orientation, Orientation};
use crate::gateway::{transfer_cost, Batch, Gateway, GatewayMode, Reading, Tariff};
use crate::metrics::{MetricRecord, Metrics, MetricsSnapshot};
use crate::node::{
    pipeline_encode, project_lifetime, sample, BatteryState, PipelineCfg, Relay, SensorFrame,
    SignalSpec,
};
use crate::rlnc::CodedPacket;
use crate::rng::stream_rng;
use crate::scenario::{
    parse_endpoint, Endpoint, HandoverMode, HandoverSpec, Scenario, ScenarioError,
};
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("internal wiring error: {0}")]
    Wiring(String),
}

#[derive(Clone, Debug, PartialEq)]
enum PacketKind {
    Synthetic { bytes: usize },
    Coded { stream: String, wire: Vec<u8> },
    Batch { gateway: u32, wire_bytes: usize, records: u32 },
}

#[derive(Clone, Debug, PartialEq)]
struct Packet {
    flow: String,
    seq: u64,
    sent_at: SimTime,
    kind: PacketKind,
}

impl Packet {
    fn bytes(&self) -> usize {
        match &self.kind {
            PacketKind::Synthetic { bytes } => *bytes,
            PacketKind::Coded { wire, .. } => wire.len(),
            PacketKind::Batch { wire_bytes, .. } => *wire_bytes,
        }
    }
}

#[derive(Clone, Debug)]
enum Ev {
    FlowSend {
        flow: String,
    },
    NodeSample {
        node: String,
    },
    ArriveAp {
        port: u32,
        packet: Packet,
        via_link: Option<String>,
    },
    ArriveCloud {
        packet: Packet,
        via_link: Option<String>,
    },
    ArriveNode {
        node: String,
        packet: Packet,
        via_link: Option<String>,
    },
    Telemetry {
        iface: IfaceId,
    },
    HandoverStep {
        step: HoStep,
    },
    GatewayReading {
        gateway: u32,
        traffic: usize,
        emitted: u64,
    },
    GatewayFlushPoll {
        gateway: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HoStep {
    Trigger,
    EstablishDone,
    EstablishFailed,
    Teardown,
}

struct NodeState {
    id: String,
    stream: String,
    link: Option<String>,
    signal: SignalSpec,
    pipeline: Option<PipelineCfg>,
    sample_period_us: u64,
    battery: BatteryState,
    fusion_alpha: Option<f64>,
    orientation: Orientation,
    relay: Option<Relay>,
    window: Vec<SensorFrame>,
    window_index: u32,
    last_activity: SimTime,
    noise_rng: ChaCha8Rng,
    pipe_rng: ChaCha8Rng,
    packet_seq: u64,
    halted: bool,
}

struct FlowGen {
    ingress_port: Option<u32>,
    link: Option<String>,
    packets: u64,
    payload_bytes: usize,
    rate_pps: f64,
    start_us: u64,
    sent: u64,
}

impl FlowGen {
    fn send_time(&self, index: u64) -> u64 {
        self.start_us + (index as f64 * 1e6 / self.rate_pps).round() as u64
    }
}

struct ApState {
    table: FlowTable,
    iface_links: BTreeMap<IfaceId, String>,
    forward_ports: BTreeSet<u32>,
    rm: RadioManager,
    bindings: BTreeMap<String, IfaceId>,
    rules_by_flow: BTreeMap<String, u64>,
    policy: HandoverPolicy,
    auto_handover: bool,
    telemetry_period_us: Option<u64>,
}

struct GatewayState {
    gw: Gateway,
    link: Option<String>,
    tariffs: Vec<Tariff>,
    traffic: Vec<crate::scenario::GatewayTrafficSpec>,
}

struct StreamRuntime {
    pipeline: StreamPipeline,
    training: Vec<Vec<f64>>,
    model: Option<AnomalyModel>,
}

struct CloudState {
    broker: Broker,
    pipeline_subs: BTreeMap<String, SubId>,
    streams: BTreeMap<String, StreamRuntime>,
    measurement_cache: BTreeMap<(String, u32), MeasurementWindow>,
    dependents: BTreeMap<String, Vec<String>>,
    alarms: Vec<Alarm>,
}

struct HandoverExec {
    spec: HandoverSpec,
    plan: HandoverPlan,
    old_link: String,
    new_link: String,
    started_at: SimTime,
    lost_at_start: u64,
    duplicated_at_start: u64,
    in_flight_at_switch: u64,
    dual_active_from: Option<SimTime>,
    report: Option<HandoverReport>,
}

/// Per-node battery lifetime projection included in the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryProjection {
    pub node: String,
    pub average_power_uw: f64,
    pub projected_lifetime_s: f64,
}

/// The full state of one scenario run.
pub struct World {
    engine: Engine<Ev>,
    duration: SimTime,
    seed: u64,
    metrics: Metrics,
    links: BTreeMap<String, Link>,
    link_targets: BTreeMap<String, Endpoint>,
    nodes: BTreeMap<String, NodeState>,
    flows: BTreeMap<String, FlowGen>,
    ap: Option<ApState>,
    gateways: BTreeMap<u32, GatewayState>,
    cloud: CloudState,
    handover: Option<HandoverExec>,
    anomaly: Option<crate::scenario::AnomalySpec>,
    truth_signal: BTreeMap<(String, u32), Vec<f64>>,
    in_flight: BTreeMap<(String, String), u64>,
    projections: Vec<BatteryProjection>,
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<World, WorldError> {
        let seed = scenario.seed;
        let mut links = BTreeMap::new();
        let mut link_targets = BTreeMap::new();
        for spec in &scenario.links {
            let mut profile =
                scenario.resolve_profile(&spec.profile, &format!("link {}", spec.id))?;
            if let Some(loss) = spec.loss_probability {
                profile.loss_probability = loss;
            }
            links.insert(
                spec.id.clone(),
                Link::new(&spec.id, &spec.channel, profile, seed),
            );
            link_targets.insert(spec.id.clone(), parse_endpoint(&spec.to));
        }

        let mut nodes = BTreeMap::new();
        let mut projections = Vec::new();
        for spec in scenario.expanded_nodes() {
            let stream = spec.stream_topic();
            if let Some(duty) = &spec.duty {
                projections.push(BatteryProjection {
                    node: spec.id.clone(),
                    average_power_uw: duty.average_power_uw(&spec.battery),
                    projected_lifetime_s: project_lifetime(&spec.battery, duty)
                        .map_err(|e| WorldError::Wiring(e.to_string()))?,
                });
            }
            let node = NodeState {
                noise_rng: stream_rng(seed, &format!("node:{}:noise", spec.id)),
                pipe_rng: stream_rng(seed, &format!("node:{}:pipe", spec.id)),
                id: spec.id.clone(),
                stream,
                link: spec.link.clone(),
                signal: spec.signal.clone(),
                pipeline: spec.pipeline.clone(),
                sample_period_us: spec.sample_period_us.unwrap_or(0),
                battery: spec.battery.clone(),
                fusion_alpha: spec.fusion_alpha,
                orientation: Orientation::IDENTITY,
                relay: spec
                    .relay
                    .as_ref()
                    .map(|r| Relay::new(r.recode_every))
                    .or_else(|| {
                        (spec.role == crate::scenario::NodeRole::Relay).then(|| Relay::new(1))
                    }),
                window: Vec::new(),
                window_index: 0,
                last_activity: SimTime::ZERO,
                packet_seq: 0,
                halted: false,
            };
            nodes.insert(spec.id.clone(), node);
        }

        let mut flows = BTreeMap::new();
        for spec in scenario.expanded_flows() {
            flows.insert(
                spec.id.clone(),
                FlowGen {
                    ingress_port: spec.ingress_port,
                    link: spec.link.clone(),
                    packets: spec.packets,
                    payload_bytes: spec.payload_bytes,
                    rate_pps: spec.rate_pps,
                    start_us: spec.start_us,
                    sent: 0,
                },
            );
        }

        let mut metrics = Metrics::new();
        let ap = match &scenario.ap {
            None => None,
            Some(spec) => {
                let mut rm = RadioManager::default();
                let mut iface_links = BTreeMap::new();
                let mut forward_ports = BTreeSet::new();
                for iface in &spec.ifaces {
                    let channel = links
                        .get(&iface.link)
                        .map(|l| l.channel.clone())
                        .unwrap_or_default();
                    rm.add_iface(iface.iface, &channel);
                    iface_links.insert(iface.iface, iface.link.clone());
                    forward_ports.insert(iface.iface);
                }
                let mut table = FlowTable::new();
                let mut bindings = BTreeMap::new();
                let mut rules_by_flow = BTreeMap::new();
                let mut bound_ifaces = BTreeSet::new();
                for rule in &spec.rules {
                    let action = match rule.forward_iface {
                        Some(iface) => Action::Forward(iface),
                        None => Action::Drop,
                    };
                    let rule_match = RuleMatch {
                        ingress_port: rule.ingress_port,
                        flow_id: rule.flow_id.clone(),
                    };
                    let rule_id = table
                        .install(rule.priority, rule_match, action, SimTime::ZERO, &forward_ports)
                        .map_err(|e| WorldError::Wiring(e.to_string()))?;
                    metrics.push_record(MetricRecord::Controller {
                        t_us: 0,
                        msg: "InstallRule".into(),
                        detail: format!(
                            "rule_id={rule_id} priority={} match={:?}/{:?} action={:?}",
                            rule.priority, rule.ingress_port, rule.flow_id, action
                        ),
                    });
                    if let (Some(flow), Some(iface)) = (&rule.flow_id, rule.forward_iface) {
                        bindings.insert(flow.clone(), iface);
                        rules_by_flow.insert(flow.clone(), rule_id);
                        bound_ifaces.insert(iface);
                    }
                }
                // Interfaces without any bound flow start as monitoring-only
                // standby ports: their links carry no traffic until a
                // handover activates them.
                for (iface, link_id) in &iface_links {
                    if !bound_ifaces.contains(iface) && scenario.handover.is_some() {
                        if let Some(link) = links.get_mut(link_id) {
                            link.up = false;
                        }
                    }
                }
                Some(ApState {
                    table,
                    iface_links,
                    forward_ports,
                    rm,
                    bindings,
                    rules_by_flow,
                    policy: spec.policy,
                    auto_handover: spec.auto_handover,
                    telemetry_period_us: spec.telemetry_period_us,
                })
            }
        };

        let mut gateways = BTreeMap::new();
        for spec in scenario.gateway.as_slice() {
            let mut gw = Gateway::new(
                spec.id,
                &spec.display_name(),
                spec.mode.clone(),
                spec.max_buffer_bytes,
            );
            gw.security_overhead_bytes = spec.security_overhead_bytes;
            for adapter in &spec.adapters {
                gw.register_adapter(adapter.id, adapter.kind);
            }
            gateways.insert(
                spec.id,
                GatewayState {
                    gw,
                    link: spec.link.clone(),
                    tariffs: spec.tariffs.clone(),
                    traffic: spec.traffic.clone(),
                },
            );
        }

        // Cloud: one pipeline subscription per stream, side-info dependency
        // edges for unparking.
        let mut broker = Broker::new();
        let mut pipeline_subs = BTreeMap::new();
        let mut streams = BTreeMap::new();
        let mut dependents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for spec in scenario.expanded_nodes() {
            let Some(pipeline) = &spec.pipeline else {
                continue;
            };
            let stream = spec.stream_topic();
            let cfg = StreamCfg {
                stream: stream.clone(),
                channels: crate::node::CHANNELS,
                window_n: pipeline.window_n,
                cs: pipeline.cs.clone(),
                quantizer: pipeline.quantizer,
                dsc: pipeline.dsc.clone(),
                rlnc_k: pipeline.rlnc.k,
                sparsity_k: scenario
                    .anomaly
                    .as_ref()
                    .map_or(8, |a| a.sparsity_k),
                residual_tol: scenario
                    .anomaly
                    .as_ref()
                    .map_or(1e-9, |a| a.residual_tol),
            };
            if let Some(dsc) = &pipeline.dsc {
                dependents
                    .entry(dsc.side_info.clone())
                    .or_default()
                    .push(stream.clone());
            }
            let sub = broker
                .subscribe("reconstruction-pipeline", &stream)
                .map_err(|e| WorldError::Wiring(e.to_string()))?;
            pipeline_subs.insert(stream.clone(), sub);
            streams.insert(
                stream.clone(),
                StreamRuntime {
                    pipeline: StreamPipeline::new(cfg),
                    training: Vec::new(),
                    model: None,
                },
            );
        }

        let mut world = World {
            engine: Engine::new(),
            duration: SimTime::from_micros(scenario.duration_us),
            seed,
            metrics,
            links,
            link_targets,
            nodes,
            flows,
            ap,
            gateways,
            cloud: CloudState {
                broker,
                pipeline_subs,
                streams,
                measurement_cache: BTreeMap::new(),
                dependents,
                alarms: Vec::new(),
            },
            handover: scenario.handover.as_ref().map(|spec| {
                HandoverExec {
                    spec: spec.clone(),
                    plan: HandoverPlan::new(&spec.flow, 0, spec.to_iface, ""),
                    old_link: String::new(),
                    new_link: String::new(),
                    started_at: SimTime::ZERO,
                    lost_at_start: 0,
                    duplicated_at_start: 0,
                    in_flight_at_switch: 0,
                    dual_active_from: None,
                    report: None,
                }
            }),
            anomaly: scenario.anomaly.clone(),
            truth_signal: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            projections,
        };
        world.schedule_initial()?;
        Ok(world)
    }

    fn schedule_initial(&mut self) -> Result<(), WorldError> {
        let duration_us = self.duration.as_micros();
        let flow_ids: Vec<String> = self.flows.keys().cloned().collect();
        for id in flow_ids {
            let first = {
                let f = &self.flows[&id];
                if f.packets == 0 {
                    continue;
                }
                f.send_time(0)
            };
            if first <= duration_us {
                self.engine
                    .schedule(SimTime::from_micros(first), Ev::FlowSend { flow: id })
                    .expect("fresh engine");
            }
        }
        let node_ids: Vec<String> = self.nodes.keys().cloned().collect();
        for id in node_ids {
            let node = &self.nodes[&id];
            if node.pipeline.is_some() && node.sample_period_us > 0 {
                self.engine
                    .schedule(SimTime::ZERO, Ev::NodeSample { node: id })
                    .expect("fresh engine");
            }
        }
        if let Some(ap) = &self.ap {
            if let Some(period) = ap.telemetry_period_us {
                if period > 0 {
                    let ifaces: Vec<IfaceId> = ap.iface_links.keys().copied().collect();
                    for iface in ifaces {
                        self.engine
                            .schedule(SimTime::from_micros(period), Ev::Telemetry { iface })
                            .expect("fresh engine");
                    }
                }
            }
        }
        if let Some(ho) = &self.handover {
            self.engine
                .schedule(
                    SimTime::from_micros(ho.spec.at_us),
                    Ev::HandoverStep {
                        step: HoStep::Trigger,
                    },
                )
                .expect("fresh engine");
        }
        let gw_ids: Vec<u32> = self.gateways.keys().copied().collect();
        for id in gw_ids {
            let state = &self.gateways[&id];
            for (t_idx, traffic) in state.traffic.iter().enumerate() {
                if traffic.count > 0 && traffic.start_us <= duration_us {
                    self.engine
                        .schedule(
                            SimTime::from_micros(traffic.start_us),
                            Ev::GatewayReading {
                                gateway: id,
                                traffic: t_idx,
                                emitted: 0,
                            },
                        )
                        .expect("fresh engine");
                }
            }
            if let GatewayMode::Interval { period_us } = state.gw.mode {
                if period_us > 0 && period_us <= duration_us {
                    self.engine
                        .schedule(
                            SimTime::from_micros(period_us),
                            Ev::GatewayFlushPoll { gateway: id },
                        )
                        .expect("fresh engine");
                }
            }
        }
        Ok(())
    }

    /// Execute everything up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) -> MetricsSnapshot {
        let horizon = t.min(self.duration);
        while let Some(ev) = self.engine.pop_due(horizon) {
            self.dispatch(ev.payload, ev.fire_at);
        }
        if horizon > self.engine.clock() {
            self.engine.run_until(horizon, |_, _| {});
        }
        self.snapshot()
    }

    pub fn run_to_end(&mut self) -> MetricsSnapshot {
        self.run_until(self.duration)
    }

    pub fn clock(&self) -> SimTime {
        self.engine.clock()
    }

    pub fn handover_reports(&self) -> Vec<HandoverReport> {
        self.handover
            .iter()
            .filter_map(|h| h.report.clone())
            .collect()
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.cloud.alarms
    }

    pub fn battery_projections(&self) -> &[BatteryProjection] {
        &self.projections
    }

    pub fn records(&self) -> &[MetricRecord] {
        self.metrics.records()
    }

    pub fn render_jsonl(&self) -> String {
        self.metrics.render_jsonl(self.engine.clock())
    }

    /// Device-cloud state export for the `dump` subcommand.
    pub fn dump_cloud_state(&self) -> serde_json::Value {
        let streams: BTreeMap<String, serde_json::Value> = self
            .cloud
            .streams
            .iter()
            .map(|(stream, rt)| {
                (
                    stream.clone(),
                    serde_json::json!({
                        "config": rt.pipeline.cfg,
                        "trained": rt.model.is_some(),
                        "model": rt.model,
                        "training_windows_buffered": rt.training.len(),
                        "open_generations": rt.pipeline.open_generations(),
                        "parked_windows": rt.pipeline.parked_windows(),
                        "rlnc_completions": rt.pipeline.counters.rlnc_completions,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "broker": {
                "subscriptions": self.cloud.broker.subscription_count(),
                "published": self.cloud.broker.published,
                "dedup_dropped": self.cloud.broker.dedup_dropped,
            },
            "streams": streams,
            "alarms": self.cloud.alarms,
        })
    }

    pub fn snapshot(&mut self) -> MetricsSnapshot {
        let node_energy: Vec<(String, f64)> = self
            .nodes
            .values()
            .map(|n| (format!("node:{}", n.id), n.battery.drawn_uj))
            .collect();
        for (name, uj) in node_energy {
            self.metrics.set_energy(&name, uj);
        }
        self.metrics.cloud.published = self.cloud.broker.published;
        self.metrics.cloud.dedup_dropped = self.cloud.broker.dedup_dropped;
        let mut completed = 0;
        let mut incomplete = 0;
        for rt in self.cloud.streams.values() {
            completed += rt.pipeline.counters.rlnc_completions;
            incomplete += rt.pipeline.open_generations().len() as u64;
        }
        self.metrics.cloud.generations_completed = completed;
        self.metrics.cloud.generations_incomplete = incomplete;
        if let Some(ap) = &self.ap {
            self.metrics.table_misses = ap.table.miss_count;
        }
        self.metrics.snapshot()
    }

    pub fn flow_counters(&self, flow: &str) -> crate::metrics::FlowCounters {
        self.metrics.flow_counters(flow)
    }

    // ------------------------------------------------------------------
    // Event dispatch
    // ------------------------------------------------------------------

    fn dispatch(&mut self, ev: Ev, now: SimTime) {
        match ev {
            Ev::FlowSend { flow } => self.on_flow_send(&flow, now),
            Ev::NodeSample { node } => self.on_node_sample(&node, now),
            Ev::ArriveAp {
                port,
                packet,
                via_link,
            } => self.on_arrive_ap(port, packet, via_link, now),
            Ev::ArriveCloud { packet, via_link } => self.on_arrive_cloud(packet, via_link, now),
            Ev::ArriveNode {
                node,
                packet,
                via_link,
            } => self.on_arrive_node(&node, packet, via_link, now),
            Ev::Telemetry { iface } => self.on_telemetry(iface, now),
            Ev::HandoverStep { step } => self.on_handover_step(step, now),
            Ev::GatewayReading {
                gateway,
                traffic,
                emitted,
            } => self.on_gateway_reading(gateway, traffic, emitted, now),
            Ev::GatewayFlushPoll { gateway } => self.on_gateway_flush_poll(gateway, now),
        }
    }

    /// Transmit a packet over a link; losses update flow counters, deliveries
    /// schedule the arrival event at the link's target.
    fn transmit_on_link(&mut self, link_id: &str, packet: Packet, now: SimTime) {
        let bytes = packet.bytes();
        let outcome = match self.links.get_mut(link_id) {
            Some(link) => link.transmit(bytes, now),
            None => return,
        };
        match outcome {
            Err(_) => {
                // Link down: the packet evaporates on the sender side.
                self.metrics.on_lost(&packet.flow);
            }
            Ok(TransmitOutcome::Lost) => {
                self.metrics.on_lost(&packet.flow);
            }
            Ok(TransmitOutcome::Delivered { at }) => {
                *self
                    .in_flight
                    .entry((packet.flow.clone(), link_id.to_string()))
                    .or_insert(0) += 1;
                let via_link = Some(link_id.to_string());
                let target = self.link_targets.get(link_id).cloned();
                let arrive = match target {
                    Some(Endpoint::ApPort(port)) => Ev::ArriveAp {
                        port,
                        packet,
                        via_link,
                    },
                    Some(Endpoint::Node(node)) => Ev::ArriveNode {
                        node,
                        packet,
                        via_link,
                    },
                    _ => Ev::ArriveCloud { packet, via_link },
                };
                self.engine.schedule(at, arrive).expect("delivery is in the future");
            }
        }
    }

    /// A packet arrived after riding `via_link`: settle its in-flight slot.
    fn settle_in_flight(&mut self, flow: &str, via_link: Option<&str>) {
        if let Some(link) = via_link {
            if let Some(count) = self
                .in_flight
                .get_mut(&(flow.to_string(), link.to_string()))
            {
                *count = count.saturating_sub(1);
            }
        }
    }

    fn on_flow_send(&mut self, flow_id: &str, now: SimTime) {
        let Some(flow) = self.flows.get_mut(flow_id) else {
            return;
        };
        let seq = flow.sent;
        flow.sent += 1;
        let packet = Packet {
            flow: flow_id.to_string(),
            seq,
            sent_at: now,
            kind: PacketKind::Synthetic {
                bytes: flow.payload_bytes,
            },
        };
        let ingress = flow.ingress_port;
        let link = flow.link.clone();
        let more = flow.sent < flow.packets;
        let next_at = flow.send_time(flow.sent);
        self.metrics.on_sent(flow_id);
        match (ingress, link) {
            (Some(port), _) => {
                // Wired ingress into the AP: same-instant arrival.
                self.engine
                    .schedule(
                        now,
                        Ev::ArriveAp {
                            port,
                            packet,
                            via_link: None,
                        },
                    )
                    .expect("now is never in the past");
            }
            (None, Some(link_id)) => self.transmit_on_link(&link_id, packet, now),
            (None, None) => {}
        }
        if more && next_at <= self.duration.as_micros() {
            self.engine
                .schedule(
                    SimTime::from_micros(next_at),
                    Ev::FlowSend {
                        flow: flow_id.to_string(),
                    },
                )
                .expect("future send");
        }
    }

    fn on_arrive_ap(&mut self, port: u32, packet: Packet, via_link: Option<String>, now: SimTime) {
        let flow = packet.flow.clone();
        self.settle_in_flight(&flow, via_link.as_deref());
        let Some(ap) = self.ap.as_mut() else {
            self.metrics.on_lost(&packet.flow);
            return;
        };
        match ap.table.lookup(port, &packet.flow) {
            Action::Forward(iface) => {
                let Some(link_id) = ap.iface_links.get(&iface).cloned() else {
                    self.metrics.on_lost(&packet.flow);
                    return;
                };
                self.transmit_on_link(&link_id, packet, now);
            }
            Action::Drop => {
                self.metrics.push_record(MetricRecord::Controller {
                    t_us: now.as_micros(),
                    msg: "PacketInMiss".into(),
                    detail: format!("port={port} flow={}", packet.flow),
                });
                self.metrics.on_lost(&packet.flow);
            }
        }
    }

    fn on_arrive_cloud(&mut self, packet: Packet, via_link: Option<String>, now: SimTime) {
        let flow = packet.flow.clone();
        self.settle_in_flight(&flow, via_link.as_deref());
        let delay = now - packet.sent_at;
        self.metrics.on_delivered(&packet.flow, packet.seq, delay);
        match packet.kind {
            PacketKind::Synthetic { .. } => {}
            PacketKind::Coded { stream, wire } => {
                self.on_cloud_coded(&stream, packet.seq, &wire, now);
            }
            PacketKind::Batch {
                gateway, records, ..
            } => {
                self.metrics.cloud.batches_decoded += 1;
                self.metrics.cloud.batch_records_decoded += u64::from(records);
                let _ = gateway;
            }
        }
    }

    fn on_cloud_coded(&mut self, stream: &str, seq: u64, wire: &[u8], now: SimTime) {
        let delivered = self
            .cloud
            .broker
            .publish(stream, wire, stream, seq)
            .unwrap_or(0);
        if delivered == 0 {
            return;
        }
        let Some(&sub) = self.cloud.pipeline_subs.get(stream) else {
            return;
        };
        let deliveries = self.cloud.broker.drain(sub);
        for delivery in deliveries {
            let Ok(coded) = CodedPacket::from_bytes(&delivery.payload) else {
                continue;
            };
            let produced = {
                let cache = &self.cloud.measurement_cache;
                let Some(rt) = self.cloud.streams.get_mut(stream) else {
                    continue;
                };
                let side_stream = rt.pipeline.cfg.dsc.as_ref().map(|d| d.side_info.clone());
                let lookup = |window: u32| {
                    side_stream
                        .as_ref()
                        .and_then(|s| cache.get(&(s.clone(), window)).cloned())
                };
                rt.pipeline.insert(&coded, lookup)
            };
            match produced {
                Ok(Some(yielded)) => self.finish_window(stream.to_string(), yielded, now),
                Ok(None) => {}
                Err(CloudError::Rlnc(_)) | Err(_) => {}
            }
        }
    }

    fn finish_window(&mut self, stream: String, yielded: PipelineYield, now: SimTime) {
        let window = yielded.reconstructed.window;
        self.cloud
            .measurement_cache
            .insert((stream.clone(), window), yielded.measurements);
        let degraded = yielded.reconstructed.degraded_chunks.len() as u64;
        self.metrics.cloud.windows_reconstructed += 1;
        self.metrics.cloud.degraded_chunks += degraded;

        let flat = yielded.reconstructed.flatten();
        let rel_err = self
            .truth_signal
            .get(&(stream.clone(), window))
            .map(|truth| {
                let num: f64 = flat
                    .iter()
                    .zip(truth)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let den: f64 = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
                if den == 0.0 {
                    num
                } else {
                    num / den
                }
            });

        // Anomaly stage: train on the first windows, then score.
        let mut score = None;
        let mut alarm_raised = false;
        let mut threshold = None;
        if let Some(anomaly) = self.anomaly.clone() {
            let rt = self
                .cloud
                .streams
                .get_mut(&stream)
                .expect("stream runtime exists");
            match &rt.model {
                None => {
                    rt.training.push(flat.clone());
                    if rt.training.len() >= anomaly.train_windows {
                        if let Ok(model) = crate::cloud::train(&rt.training, anomaly.threshold_k) {
                            rt.model = Some(model);
                            rt.training.clear();
                        }
                    }
                }
                Some(model) => {
                    threshold = Some(model.threshold_k);
                    if let Ok(s) = model.score(&flat) {
                        score = Some(s);
                        if let Ok(Some(alarm)) = model.detect(&stream, now.as_micros(), &flat) {
                            alarm_raised = true;
                            self.metrics.alarms_raised += 1;
                            self.cloud.alarms.push(alarm);
                            self.wake_alarm_gateways(now);
                        }
                    }
                }
            }
        }
        self.metrics.push_record(MetricRecord::Reconstruction {
            t_us: now.as_micros(),
            stream: stream.clone(),
            window,
            score,
            threshold,
            degraded_chunks: degraded,
            rel_l2_error: rel_err,
            alarm: alarm_raised,
        });

        // Publish the reconstructed window for downstream consumers.
        let recon_topic = format!("{stream}/recon");
        let recon_bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
        let _ = self.cloud.broker.publish(
            &recon_topic,
            &recon_bytes,
            &format!("cloud/{stream}"),
            u64::from(window),
        );

        // Side info just became available: unpark dependent streams.
        let dependents = self
            .cloud
            .dependents
            .get(&stream)
            .cloned()
            .unwrap_or_default();
        for dep in dependents {
            let produced = {
                let cache = &self.cloud.measurement_cache;
                let Some(rt) = self.cloud.streams.get_mut(&dep) else {
                    continue;
                };
                let side_stream = rt.pipeline.cfg.dsc.as_ref().map(|d| d.side_info.clone());
                let lookup = |w: u32| {
                    side_stream
                        .as_ref()
                        .and_then(|s| cache.get(&(s.clone(), w)).cloned())
                };
                rt.pipeline.unpark(window, lookup)
            };
            if let Ok(Some(yielded)) = produced {
                self.finish_window(dep, yielded, now);
            }
        }
    }

    fn wake_alarm_gateways(&mut self, now: SimTime) {
        let ids: Vec<u32> = self.gateways.keys().copied().collect();
        for id in ids {
            let wake = matches!(
                self.gateways[&id].gw.mode,
                GatewayMode::Sleep {
                    wake_on_alarm: true,
                    ..
                }
            );
            if wake {
                self.gateways.get_mut(&id).expect("exists").gw.alarm_flag = true;
                self.try_gateway_flush(id, now, false);
            }
        }
    }

    fn on_arrive_node(
        &mut self,
        node_id: &str,
        packet: Packet,
        via_link: Option<String>,
        now: SimTime,
    ) {
        let flow = packet.flow.clone();
        self.settle_in_flight(&flow, via_link.as_deref());
        let PacketKind::Coded { stream, wire } = packet.kind else {
            return;
        };
        let Ok(coded) = CodedPacket::from_bytes(&wire) else {
            return;
        };
        let (recoded, uplink, tx_cost, dead) = {
            let Some(node) = self.nodes.get_mut(node_id) else {
                return;
            };
            let Some(relay) = node.relay.as_mut() else {
                return;
            };
            let out = relay.forward(&stream, coded, &mut node.pipe_rng);
            (
                out,
                node.link.clone(),
                node.battery.tx_cost_uj_per_byte,
                node.battery.is_dead(),
            )
        };
        let Some(recoded) = recoded else {
            return;
        };
        if dead {
            return;
        }
        let wire = recoded.to_bytes();
        if let Some(node) = self.nodes.get_mut(node_id) {
            node.battery.draw(wire.len() as f64 * tx_cost);
        }
        let Some(uplink) = uplink else {
            return;
        };
        let next = Packet {
            flow,
            seq: packet.seq,
            sent_at: packet.sent_at,
            kind: PacketKind::Coded { stream, wire },
        };
        self.transmit_on_link(&uplink, next, now);
    }

    fn on_node_sample(&mut self, node_id: &str, now: SimTime) {
        let (packets, stream, uplink) = {
            let Some(node) = self.nodes.get_mut(node_id) else {
                return;
            };
            if node.halted {
                return;
            }
            // Idle draw accrues between activity points.
            let idle_s = (now - node.last_activity) as f64 / 1e6;
            node.battery.draw(idle_s * node.battery.idle_cost_uj_per_s);
            node.last_activity = now;

            let frame = match sample(
                &node.signal,
                now,
                node.window_index,
                &mut node.battery,
                &mut node.noise_rng,
            ) {
                Ok(frame) => frame,
                Err(_) => {
                    node.halted = true;
                    return;
                }
            };
            if let Some(alpha) = node.fusion_alpha {
                let dt = node.sample_period_us as f64 / 1e6;
                if let Ok(q) = fuse_orientation(
                    &node.orientation,
                    frame.gyro,
                    frame.accel,
                    frame.mag,
                    dt,
                    alpha,
                ) {
                    node.orientation = q;
                }
            }
            node.window.push(frame);

            let mut emitted = None;
            if let Some(cfg) = node.pipeline.clone() {
                if node.window.len() == cfg.window_n {
                    let frames = std::mem::take(&mut node.window);
                    let window = node.window_index;
                    node.window_index += 1;
                    match pipeline_encode(&frames, &cfg, window, &mut node.battery, &mut node.pipe_rng)
                    {
                        Ok(out) => {
                            emitted = Some((out, frames, window));
                        }
                        Err(_) => {
                            node.halted = true;
                        }
                    }
                }
            }
            let stream = node.stream.clone();
            let uplink = node.link.clone();

            // Schedule the next sample while the node lives.
            if !node.halted && node.sample_period_us > 0 {
                let next = now + node.sample_period_us;
                if next <= self.duration {
                    self.engine
                        .schedule(
                            next,
                            Ev::NodeSample {
                                node: node_id.to_string(),
                            },
                        )
                        .expect("future sample");
                }
            }
            let Some((out, frames, window)) = emitted else {
                return;
            };
            // Ground truth for reconstruction-quality records: the signal
            // the node actually sensed this window.
            let truth: Vec<f64> = (0..crate::node::CHANNELS)
                .flat_map(|c| frames.iter().map(move |f| f.channel(c)))
                .collect();
            self.truth_signal.insert((stream.clone(), window), truth);
            (out.packets, stream, uplink)
        };
        let Some(uplink) = uplink else {
            return;
        };
        for coded in packets {
            let seq = {
                let node = self.nodes.get_mut(node_id).expect("node exists");
                let seq = node.packet_seq;
                node.packet_seq += 1;
                seq
            };
            self.metrics.on_sent(&stream);
            let packet = Packet {
                flow: stream.clone(),
                seq,
                sent_at: now,
                kind: PacketKind::Coded {
                    stream: stream.clone(),
                    wire: coded.to_bytes(),
                },
            };
            self.transmit_on_link(&uplink, packet, now);
        }
    }

    fn on_telemetry(&mut self, iface: IfaceId, now: SimTime) {
        let sample = {
            let Some(ap) = self.ap.as_ref() else {
                return;
            };
            let Some(link_id) = ap.iface_links.get(&iface) else {
                return;
            };
            let link = self.links.get_mut(link_id).expect("iface link exists");
            // Monitoring probe: the interface observes its channel whether
            // or not it carries flow traffic.
            let profile = link.profile.clone();
            let mut probe_rng = stream_rng(self.seed, &format!("telemetry:{iface}:{}", now.as_micros()));
            let lost = probe_rng.random::<f64>() < profile.loss_probability;
            let latency = if profile.latency_budget_us <= 1 {
                0.0
            } else {
                probe_rng
                    .random_range(profile.latency_budget_us / 2..profile.latency_budget_us)
                    as f64
            };
            TelemetrySample {
                lost,
                latency_us: latency,
                busy_fraction: 0.0,
            }
        };
        let plan = {
            let ap = self.ap.as_mut().expect("checked above");
            let _ = ap.rm.report(iface, sample, now);
            if ap.auto_handover && self.handover.is_none() {
                let bindings: Vec<(String, IfaceId)> = ap
                    .bindings
                    .iter()
                    .map(|(f, i)| (f.clone(), *i))
                    .collect();
                let mut found = None;
                for (flow, bound) in bindings {
                    if let Ok(Some(plan)) =
                        ap.rm
                            .evaluate_handover(&flow, Some(bound), &ap.policy, now)
                    {
                        found = Some(plan);
                        break;
                    }
                }
                found
            } else {
                None
            }
        };
        if let Some(plan) = plan {
            self.handover = Some(HandoverExec {
                spec: HandoverSpec {
                    flow: plan.flow_id.clone(),
                    at_us: now.as_micros(),
                    to_iface: plan.new_iface,
                    mode: HandoverMode::MakeBeforeBreak,
                    establish_delay_us: 3_000,
                    fail_establish: false,
                },
                plan,
                old_link: String::new(),
                new_link: String::new(),
                started_at: now,
                lost_at_start: 0,
                duplicated_at_start: 0,
                in_flight_at_switch: 0,
                dual_active_from: None,
                report: None,
            });
            self.engine
                .schedule(now, Ev::HandoverStep { step: HoStep::Trigger })
                .expect("now");
        }
        // Keep probing.
        if let Some(ap) = &self.ap {
            if let Some(period) = ap.telemetry_period_us {
                let next = now + period;
                if next <= self.duration {
                    self.engine
                        .schedule(next, Ev::Telemetry { iface })
                        .expect("future telemetry");
                }
            }
        }
    }

    fn handover_record(&mut self, now: SimTime, flow: &str, state: &str) {
        self.metrics.push_record(MetricRecord::Handover {
            t_us: now.as_micros(),
            flow: flow.to_string(),
            state: state.to_string(),
        });
    }

    fn controller_record(&mut self, now: SimTime, msg: &str, detail: String) {
        self.metrics.push_record(MetricRecord::Controller {
            t_us: now.as_micros(),
            msg: msg.to_string(),
            detail,
        });
    }

    fn on_handover_step(&mut self, step: HoStep, now: SimTime) {
        match step {
            HoStep::Trigger => self.handover_trigger(now),
            HoStep::EstablishDone => self.handover_establish_done(now),
            HoStep::EstablishFailed => self.handover_establish_failed(now),
            HoStep::Teardown => self.handover_teardown(now),
        }
    }

    fn handover_trigger(&mut self, now: SimTime) {
        let (flow, mode, establish_delay, fail) = {
            let Some(ho) = self.handover.as_ref() else {
                return;
            };
            (
                ho.spec.flow.clone(),
                ho.spec.mode,
                ho.spec.establish_delay_us,
                ho.spec.fail_establish,
            )
        };
        let Some(ap) = self.ap.as_ref() else { return };
        let Some(&old_iface) = ap.bindings.get(&flow) else {
            return;
        };
        let new_iface = {
            let ho = self.handover.as_ref().expect("present");
            ho.spec.to_iface
        };
        let old_link = ap.iface_links.get(&old_iface).cloned().unwrap_or_default();
        let new_link = ap.iface_links.get(&new_iface).cloned().unwrap_or_default();
        let new_channel = self
            .links
            .get(&new_link)
            .map(|l| l.channel.clone())
            .unwrap_or_default();
        let counters = self.metrics.flow_counters(&flow);
        {
            let ho = self.handover.as_mut().expect("present");
            ho.plan = HandoverPlan::new(&flow, old_iface, new_iface, &new_channel);
            ho.old_link = old_link.clone();
            ho.new_link = new_link.clone();
            ho.started_at = now;
            ho.lost_at_start = counters.lost;
            ho.duplicated_at_start = counters.duplicated;
        }
        match mode {
            HandoverMode::MakeBeforeBreak => {
                let ho = self.handover.as_mut().expect("present");
                ho.plan.begin_establish().expect("fresh plan");
                self.handover_record(now, &flow, "Establishing");
                let step = if fail {
                    HoStep::EstablishFailed
                } else {
                    HoStep::EstablishDone
                };
                self.engine
                    .schedule(now + establish_delay, Ev::HandoverStep { step })
                    .expect("future establish");
            }
            HandoverMode::BreakBeforeMake => {
                // Counterfactual ordering: tear the old path down first.
                if let Some(link) = self.links.get_mut(&old_link) {
                    link.up = false;
                }
                self.controller_record(now, "PortDown", format!("iface={old_iface}"));
                let removed = {
                    let ap = self.ap.as_mut().expect("present");
                    ap.bindings.remove(&flow);
                    ap.rules_by_flow
                        .remove(&flow)
                        .map(|rule_id| (rule_id, ap.table.remove(rule_id)))
                };
                if let Some((rule_id, _)) = removed {
                    self.controller_record(now, "RemoveRule", format!("rule_id={rule_id}"));
                }
                self.handover_record(now, &flow, "BrokenBeforeMake");
                self.engine
                    .schedule(
                        now + establish_delay,
                        Ev::HandoverStep {
                            step: HoStep::EstablishDone,
                        },
                    )
                    .expect("future establish");
            }
        }
    }

    fn handover_establish_done(&mut self, now: SimTime) {
        let (flow, old_iface, new_iface, new_link, old_link, mode) = {
            let Some(ho) = self.handover.as_ref() else {
                return;
            };
            (
                ho.spec.flow.clone(),
                ho.plan.old_iface,
                ho.plan.new_iface,
                ho.new_link.clone(),
                ho.old_link.clone(),
                ho.spec.mode,
            )
        };
        if let Some(link) = self.links.get_mut(&new_link) {
            link.up = true;
        }
        self.controller_record(now, "PortUp", format!("iface={new_iface}"));
        match mode {
            HandoverMode::MakeBeforeBreak => {
                {
                    let ho = self.handover.as_mut().expect("present");
                    ho.plan.mark_dual_active().expect("establishing");
                    ho.dual_active_from = Some(now);
                    ho.in_flight_at_switch = *self
                        .in_flight
                        .get(&(flow.clone(), old_link.clone()))
                        .unwrap_or(&0);
                }
                self.handover_record(now, &flow, "DualActive");
                // Atomic reroute: install the higher-priority rule, then
                // remove the old one, all within this event.
                let (new_rule, old_rule) = {
                    let ap = self.ap.as_mut().expect("present");
                    let new_rule = ap
                        .table
                        .install(
                            100,
                            RuleMatch::flow(&flow),
                            Action::Forward(new_iface),
                            now,
                            &ap.forward_ports,
                        )
                        .expect("iface validated at build");
                    let old_rule = ap.rules_by_flow.insert(flow.clone(), new_rule);
                    ap.bindings.insert(flow.clone(), new_iface);
                    if let Some(old) = old_rule {
                        ap.table.remove(old);
                    }
                    (new_rule, old_rule)
                };
                self.controller_record(
                    now,
                    "InstallRule",
                    format!("rule_id={new_rule} flow={flow} action=Forward({new_iface})"),
                );
                if let Some(old) = old_rule {
                    self.controller_record(now, "RemoveRule", format!("rule_id={old}"));
                }
                {
                    let ho = self.handover.as_mut().expect("present");
                    ho.plan.mark_rerouted().expect("dual active");
                }
                self.handover_record(now, &flow, "Rerouted");
                // Drain in-flight traffic before tearing the old link down.
                let drain_us = {
                    let ap = self.ap.as_ref().expect("present");
                    let ewma = ap
                        .rm
                        .state(old_iface)
                        .map(|s| s.latency_ewma_us)
                        .unwrap_or(0.0);
                    let budget = self
                        .links
                        .get(&old_link)
                        .map(|l| l.profile.latency_budget_us)
                        .unwrap_or(0);
                    (2.0 * ewma).max(budget as f64) as u64
                };
                self.engine
                    .schedule(
                        now + drain_us.max(1),
                        Ev::HandoverStep {
                            step: HoStep::Teardown,
                        },
                    )
                    .expect("future teardown");
            }
            HandoverMode::BreakBeforeMake => {
                let new_rule = {
                    let ap = self.ap.as_mut().expect("present");
                    let new_rule = ap
                        .table
                        .install(
                            100,
                            RuleMatch::flow(&flow),
                            Action::Forward(new_iface),
                            now,
                            &ap.forward_ports,
                        )
                        .expect("iface validated at build");
                    ap.rules_by_flow.insert(flow.clone(), new_rule);
                    ap.bindings.insert(flow.clone(), new_iface);
                    new_rule
                };
                self.controller_record(
                    now,
                    "InstallRule",
                    format!("rule_id={new_rule} flow={flow} action=Forward({new_iface})"),
                );
                self.handover_record(now, &flow, "Restored");
                self.finish_handover_report(now, true);
            }
        }
    }

    fn handover_establish_failed(&mut self, now: SimTime) {
        let flow = {
            let Some(ho) = self.handover.as_mut() else {
                return;
            };
            ho.plan.abort_establish().expect("establishing");
            ho.spec.flow.clone()
        };
        self.handover_record(now, &flow, "EstablishFailed");
        self.finish_handover_report(now, false);
    }

    fn handover_teardown(&mut self, now: SimTime) {
        let (flow, old_iface, old_link, allowed) = {
            let Some(ho) = self.handover.as_ref() else {
                return;
            };
            (
                ho.spec.flow.clone(),
                ho.plan.old_iface,
                ho.old_link.clone(),
                ho.plan.teardown_allowed(),
            )
        };
        assert!(allowed, "teardown is legal only in Rerouted");
        if let Some(link) = self.links.get_mut(&old_link) {
            link.up = false;
        }
        self.controller_record(now, "PortDown", format!("iface={old_iface}"));
        {
            let ho = self.handover.as_mut().expect("present");
            ho.plan.mark_complete().expect("rerouted");
        }
        if let Some(ap) = self.ap.as_mut() {
            ap.rm.last_handover_completed = Some(now);
        }
        self.handover_record(now, &flow, "Complete");
        self.finish_handover_report(now, true);
    }

    fn finish_handover_report(&mut self, now: SimTime, completed: bool) {
        let counters = {
            let Some(ho) = self.handover.as_ref() else {
                return;
            };
            self.metrics.flow_counters(&ho.spec.flow)
        };
        let ho = self.handover.as_mut().expect("present");
        ho.report = Some(HandoverReport {
            flow_id: ho.spec.flow.clone(),
            old_iface: ho.plan.old_iface,
            new_iface: ho.plan.new_iface,
            packets_in_flight_at_switch: ho.in_flight_at_switch,
            packets_lost_during_handover: counters.lost - ho.lost_at_start,
            duplicates: counters.duplicated - ho.duplicated_at_start,
            reroute_time_us: now - ho.started_at,
            dual_active_us: ho.dual_active_from.map_or(0, |from| now - from),
            completed,
        });
    }

    fn on_gateway_reading(&mut self, gateway: u32, traffic_idx: usize, emitted: u64, now: SimTime) {
        let (reading, adapter, next) = {
            let Some(state) = self.gateways.get(&gateway) else {
                return;
            };
            let Some(traffic) = state.traffic.get(traffic_idx) else {
                return;
            };
            let t_s = now.as_secs_f64();
            let value = traffic.value_base
                + traffic.value_amplitude
                    * (2.0 * std::f64::consts::PI * traffic.freq_hz * t_s).sin();
            let reading = Reading {
                adapter: traffic.adapter,
                channel: traffic.channel,
                t_us: now.as_micros(),
                value,
            };
            let next = (emitted + 1 < traffic.count).then(|| now + traffic.period_us);
            (reading, traffic.adapter, next)
        };
        {
            let state = self.gateways.get_mut(&gateway).expect("exists");
            if state.gw.ingest(adapter, reading).is_ok() {
                let name = state.gw.name.clone();
                self.metrics
                    .gateways
                    .entry(name)
                    .or_default()
                    .ingested += 1;
            }
        }
        self.try_gateway_flush(gateway, now, true);
        if let Some(next_at) = next {
            if next_at <= self.duration {
                self.engine
                    .schedule(
                        next_at,
                        Ev::GatewayReading {
                            gateway,
                            traffic: traffic_idx,
                            emitted: emitted + 1,
                        },
                    )
                    .expect("future reading");
            }
        }
    }

    fn on_gateway_flush_poll(&mut self, gateway: u32, now: SimTime) {
        self.try_gateway_flush(gateway, now, false);
        let Some(state) = self.gateways.get(&gateway) else {
            return;
        };
        if let GatewayMode::Interval { period_us } = state.gw.mode {
            let next = now + period_us;
            if next <= self.duration {
                self.engine
                    .schedule(next, Ev::GatewayFlushPoll { gateway })
                    .expect("future poll");
            }
        }
    }

    fn try_gateway_flush(&mut self, gateway: u32, now: SimTime, ingest_edge: bool) {
        let batch = {
            let Some(state) = self.gateways.get_mut(&gateway) else {
                return;
            };
            if !state.gw.should_flush(now.as_micros(), ingest_edge) {
                return;
            }
            state.gw.flush(now.as_micros())
        };
        let Some(batch) = batch else { return };
        self.ship_batch(gateway, batch, now);
    }

    fn ship_batch(&mut self, gateway: u32, batch: Batch, now: SimTime) {
        let (name, link, tariff) = {
            let state = self.gateways.get(&gateway).expect("exists");
            let tariff = crate::gateway::select_provider(&state.tariffs).copied();
            (state.gw.name.clone(), state.link.clone(), tariff)
        };
        let cost = tariff
            .as_ref()
            .map(|t| transfer_cost(&batch, t))
            .unwrap_or(0.0);
        {
            let counters = self.metrics.gateways.entry(name.clone()).or_default();
            counters.batches += 1;
            counters.batch_bytes += batch.byte_size as u64;
            counters.records_shipped += u64::from(batch.record_count);
            counters.transfer_cost += cost;
        }
        self.metrics.push_record(MetricRecord::Batch {
            t_us: now.as_micros(),
            gateway: name.clone(),
            seq: batch.seq,
            records: batch.record_count,
            bytes: batch.byte_size as u64,
            cost,
        });
        let flow = format!("gw:{name}");
        let packet = Packet {
            flow: flow.clone(),
            seq: u64::from(batch.seq),
            sent_at: now,
            kind: PacketKind::Batch {
                gateway,
                wire_bytes: batch.byte_size,
                records: batch.record_count,
            },
        };
        self.metrics.on_sent(&flow);
        match link {
            Some(link_id) => self.transmit_on_link(&link_id, packet, now),
            None => {
                // Direct wiring: the batch lands at the cloud immediately.
                self.engine
                    .schedule(
                        now,
                        Ev::ArriveCloud {
                            packet,
                            via_link: None,
                        },
                    )
                    .expect("now");
            }
        }
    }
}
