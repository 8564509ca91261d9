//! Scenario file schema and validation.
//!
//! Scenarios are human-writable JSON. `validate` parses the document and
//! cross-checks every entity reference and numeric range before any
//! simulation state is built; each failure names the offending JSON path.

use crate::ap::HandoverPolicy;
use crate::channel::{make_profile, ChannelProfile, ProfileKind};
use crate::gateway::{AdapterKind, GatewayMode, Tariff};
use crate::node::{BatteryState, DutyCycle, PipelineCfg, SignalSpec};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("dangling reference at {path}: {message}")]
    DanglingReference { path: String, message: String },
    #[error("invalid range at {path}: {message}")]
    InvalidRange { path: String, message: String },
}

impl ScenarioError {
    fn dangling(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::DanglingReference {
            path: path.into(),
            message: message.into(),
        }
    }

    fn range(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::InvalidRange {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Channel profile override: start from a preset, replace named fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink_capacity_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink_capacity_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user_rate_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_budget_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_density_per_km2: Option<u64>,
}

fn preset_by_name(name: &str) -> Option<ChannelProfile> {
    match name {
        "embb" => Some(make_profile(ProfileKind::Embb)),
        "urllc" => Some(make_profile(ProfileKind::Urllc)),
        "mmtc" => Some(make_profile(ProfileKind::Mmtc)),
        "custom" => Some(make_profile(ProfileKind::Custom)),
        _ => None,
    }
}

impl ProfileSpec {
    pub fn resolve(&self, path: &str) -> Result<ChannelProfile, ScenarioError> {
        let base_name = self.base.as_deref().unwrap_or("custom");
        let mut profile = preset_by_name(base_name).ok_or_else(|| {
            ScenarioError::dangling(format!("{path}.base"), format!("unknown preset {base_name:?}"))
        })?;
        if let Some(v) = self.downlink_capacity_bps {
            profile.downlink_capacity_bps = v;
        }
        if let Some(v) = self.uplink_capacity_bps {
            profile.uplink_capacity_bps = v;
        }
        if let Some(v) = self.per_user_rate_bps {
            profile.per_user_rate_bps = v;
        }
        if let Some(v) = self.latency_budget_us {
            profile.latency_budget_us = v;
        }
        if let Some(v) = self.loss_probability {
            profile.loss_probability = v;
        }
        if let Some(v) = self.device_density_per_km2 {
            profile.device_density_per_km2 = v;
        }
        profile
            .validate()
            .map_err(|e| ScenarioError::range(path.to_string(), e.to_string()))?;
        Ok(profile)
    }
}

/// Where packets leaving a link land.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    ApPort(u32),
    Cloud,
    Node(String),
    Gateway(u32),
    External(String),
}

pub fn parse_endpoint(s: &str) -> Endpoint {
    if s == "cloud" {
        Endpoint::Cloud
    } else if let Some(rest) = s.strip_prefix("ap:") {
        rest.parse().map(Endpoint::ApPort).unwrap_or_else(|_| Endpoint::External(s.into()))
    } else if let Some(rest) = s.strip_prefix("node:") {
        Endpoint::Node(rest.to_string())
    } else if let Some(rest) = s.strip_prefix("gateway:") {
        rest.parse().map(Endpoint::Gateway).unwrap_or_else(|_| Endpoint::External(s.into()))
    } else {
        Endpoint::External(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    #[serde(default = "default_channel")]
    pub channel: String,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_probability: Option<f64>,
    pub from: String,
    pub to: String,
}

fn default_channel() -> String {
    "A".to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Source,
    Relay,
    /// A source wired straight at the sink (its uplink lands at the cloud).
    SinkAdjacent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySpec {
    #[serde(default = "default_recode_every")]
    pub recode_every: usize,
}

fn default_recode_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    pub role: NodeRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    #[serde(default = "SignalSpec::quiet")]
    pub signal: SignalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period_us: Option<u64>,
    #[serde(default)]
    pub battery: BatteryState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay: Option<RelaySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duty: Option<DutyCycle>,
}

impl NodeSpec {
    pub fn stream_topic(&self) -> String {
        self.stream
            .clone()
            .unwrap_or_else(|| format!("plant/{}", self.id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingress_port: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    pub packets: u64,
    pub payload_bytes: usize,
    pub rate_pps: f64,
    #[serde(default)]
    pub start_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfaceSpec {
    pub iface: u32,
    pub link: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub priority: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingress_port: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<String>,
    /// Forward target interface; absent means drop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_iface: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    #[serde(default)]
    pub ingress_ports: Vec<u32>,
    pub ifaces: Vec<IfaceSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry_period_us: Option<u64>,
    #[serde(default)]
    pub policy: HandoverPolicy,
    /// Evaluate the handover policy on every telemetry report and execute
    /// the produced plan; scripted `handover` sections work without it.
    #[serde(default)]
    pub auto_handover: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverMode {
    MakeBeforeBreak,
    BreakBeforeMake,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverSpec {
    pub flow: String,
    pub at_us: u64,
    pub to_iface: u32,
    #[serde(default = "default_handover_mode")]
    pub mode: HandoverMode,
    #[serde(default = "default_establish_delay")]
    pub establish_delay_us: u64,
    /// Simulate the new link failing to come up; the plan must abort with
    /// the old path untouched.
    #[serde(default)]
    pub fail_establish: bool,
}

fn default_handover_mode() -> HandoverMode {
    HandoverMode::MakeBeforeBreak
}

fn default_establish_delay() -> u64 {
    3_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub id: u32,
    pub kind: AdapterKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayTrafficSpec {
    pub adapter: u32,
    pub channel: u32,
    pub period_us: u64,
    pub count: u64,
    #[serde(default)]
    pub start_us: u64,
    #[serde(default)]
    pub value_base: f64,
    #[serde(default)]
    pub value_amplitude: f64,
    #[serde(default)]
    pub freq_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub adapters: Vec<AdapterSpec>,
    pub mode: GatewayMode,
    #[serde(default = "default_buffer_bytes")]
    pub max_buffer_bytes: usize,
    #[serde(default)]
    pub security_overhead_bytes: usize,
    #[serde(default)]
    pub tariffs: Vec<Tariff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default)]
    pub traffic: Vec<GatewayTrafficSpec>,
}

fn default_buffer_bytes() -> usize {
    1 << 20
}

impl GatewaySpec {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("gw{}", self.id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    #[serde(default = "default_train_windows")]
    pub train_windows: usize,
    #[serde(default = "default_threshold_k")]
    pub threshold_k: f64,
    #[serde(default = "default_sparsity_k")]
    pub sparsity_k: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
}

fn default_train_windows() -> usize {
    4
}
fn default_threshold_k() -> f64 {
    4.0
}
fn default_sparsity_k() -> usize {
    8
}
fn default_residual_tol() -> f64 {
    1e-9
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec {
            train_windows: default_train_windows(),
            threshold_k: default_threshold_k(),
            sparsity_k: default_sparsity_k(),
            residual_tol: default_residual_tol(),
        }
    }
}

/// `gateway` accepts a single object or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GatewaySection {
    One(Box<GatewaySpec>),
    Many(Vec<GatewaySpec>),
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection::Many(Vec::new())
    }
}

impl GatewaySection {
    pub fn as_slice(&self) -> &[GatewaySpec] {
        match self {
            GatewaySection::One(g) => std::slice::from_ref(g),
            GatewaySection::Many(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileSpec>,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<ApSpec>,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handover: Option<HandoverSpec>,
}

impl Scenario {
    /// Resolve a profile reference: a name defined in `profiles` or one of
    /// the built-in presets.
    pub fn resolve_profile(&self, name: &str, path: &str) -> Result<ChannelProfile, ScenarioError> {
        if let Some(spec) = self.profiles.get(name) {
            return spec.resolve(&format!("profiles.{name}"));
        }
        preset_by_name(name)
            .ok_or_else(|| ScenarioError::dangling(path, format!("unknown profile {name:?}")))
    }

    /// Expand `count` templates into concrete entries with numbered ids.
    pub fn expanded_flows(&self) -> Vec<FlowSpec> {
        let mut out = Vec::new();
        for flow in &self.flows {
            match flow.count {
                Some(count) if count > 1 => {
                    for i in 0..count {
                        let mut f = flow.clone();
                        f.id = format!("{}{:05}", flow.id, i);
                        f.count = None;
                        out.push(f);
                    }
                }
                _ => {
                    let mut f = flow.clone();
                    f.count = None;
                    out.push(f);
                }
            }
        }
        out
    }

    pub fn expanded_nodes(&self) -> Vec<NodeSpec> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.count {
                Some(count) if count > 1 => {
                    for i in 0..count {
                        let mut n = node.clone();
                        n.id = format!("{}{:05}", node.id, i);
                        n.count = None;
                        out.push(n);
                    }
                }
                _ => {
                    let mut n = node.clone();
                    n.count = None;
                    out.push(n);
                }
            }
        }
        out
    }
}

/// Parse and cross-check a scenario document.
pub fn validate(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })?;
    check(&scenario)?;
    Ok(scenario)
}

fn check(s: &Scenario) -> Result<(), ScenarioError> {
    if s.duration_us == 0 {
        return Err(ScenarioError::range("duration_us", "must be positive"));
    }
    for (name, spec) in &s.profiles {
        spec.resolve(&format!("profiles.{name}"))?;
    }

    let node_ids: BTreeSet<&str> = s.nodes.iter().map(|n| n.id.as_str()).collect();
    if node_ids.len() != s.nodes.len() {
        return Err(ScenarioError::range("nodes", "duplicate node ids"));
    }
    let link_ids: BTreeSet<&str> = s.links.iter().map(|l| l.id.as_str()).collect();
    if link_ids.len() != s.links.len() {
        return Err(ScenarioError::range("links", "duplicate link ids"));
    }
    let flow_ids: BTreeSet<&str> = s.flows.iter().map(|f| f.id.as_str()).collect();
    if flow_ids.len() != s.flows.len() {
        return Err(ScenarioError::range("flows", "duplicate flow ids"));
    }
    let gateway_ids: BTreeSet<u32> = s.gateway.as_slice().iter().map(|g| g.id).collect();
    if gateway_ids.len() != s.gateway.as_slice().len() {
        return Err(ScenarioError::range("gateway", "duplicate gateway ids"));
    }
    let ap_ports: BTreeSet<u32> = s
        .ap
        .as_ref()
        .map(|ap| ap.ingress_ports.iter().copied().collect())
        .unwrap_or_default();
    let iface_ids: BTreeSet<u32> = s
        .ap
        .as_ref()
        .map(|ap| ap.ifaces.iter().map(|i| i.iface).collect())
        .unwrap_or_default();

    for (i, link) in s.links.iter().enumerate() {
        let path = format!("links[{i}]");
        s.resolve_profile(&link.profile, &format!("{path}.profile"))?;
        if let Some(loss) = link.loss_probability {
            if !(0.0..=1.0).contains(&loss) {
                return Err(ScenarioError::range(
                    format!("{path}.loss_probability"),
                    format!("{loss} not in [0, 1]"),
                ));
            }
        }
        for (field, value) in [("from", &link.from), ("to", &link.to)] {
            match parse_endpoint(value) {
                Endpoint::ApPort(port) => {
                    if s.ap.is_none() {
                        return Err(ScenarioError::dangling(
                            format!("{path}.{field}"),
                            "references the aggregation point but none is configured",
                        ));
                    }
                    // Egress side of an AP iface link references the iface.
                    if field == "from" && !iface_ids.contains(&port) && !ap_ports.contains(&port) {
                        return Err(ScenarioError::dangling(
                            format!("{path}.{field}"),
                            format!("ap port {port} is neither an ingress port nor an iface"),
                        ));
                    }
                    if field == "to" && !ap_ports.contains(&port) {
                        return Err(ScenarioError::dangling(
                            format!("{path}.{field}"),
                            format!("ap ingress port {port} not declared"),
                        ));
                    }
                }
                Endpoint::Node(id) => {
                    if !node_ids.contains(id.as_str()) {
                        return Err(ScenarioError::dangling(
                            format!("{path}.{field}"),
                            format!("unknown node {id:?}"),
                        ));
                    }
                }
                Endpoint::Gateway(id) => {
                    if !gateway_ids.contains(&id) {
                        return Err(ScenarioError::dangling(
                            format!("{path}.{field}"),
                            format!("unknown gateway {id}"),
                        ));
                    }
                }
                Endpoint::Cloud | Endpoint::External(_) => {}
            }
        }
    }

    let streams: BTreeSet<String> = s.nodes.iter().map(NodeSpec::stream_topic).collect();
    for (i, node) in s.nodes.iter().enumerate() {
        let path = format!("nodes[{i}]");
        if let Some(link) = &node.link {
            if !link_ids.contains(link.as_str()) {
                return Err(ScenarioError::dangling(
                    format!("{path}.link"),
                    format!("unknown link {link:?}"),
                ));
            }
        }
        if let Some(alpha) = node.fusion_alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(ScenarioError::range(
                    format!("{path}.fusion_alpha"),
                    format!("{alpha} not in [0, 1]"),
                ));
            }
        }
        if node.battery.capacity_uj <= 0.0 {
            return Err(ScenarioError::range(
                format!("{path}.battery.capacity_uj"),
                "must be positive",
            ));
        }
        if let Some(pipeline) = &node.pipeline {
            let ppath = format!("{path}.pipeline");
            if pipeline.window_n == 0 {
                return Err(ScenarioError::range(format!("{ppath}.window_n"), "must be >= 1"));
            }
            if node.sample_period_us.unwrap_or(0) == 0 {
                return Err(ScenarioError::range(
                    format!("{path}.sample_period_us"),
                    "required and positive when a pipeline is configured",
                ));
            }
            if node.link.is_none() {
                return Err(ScenarioError::dangling(
                    format!("{path}.link"),
                    "pipeline nodes must name an uplink",
                ));
            }
            if let Some(cs) = &pipeline.cs {
                if cs.m == 0 || cs.m > pipeline.window_n {
                    return Err(ScenarioError::range(
                        format!("{ppath}.cs.m"),
                        format!("{} not in 1..={}", cs.m, pipeline.window_n),
                    ));
                }
            }
            if !(1..=16).contains(&pipeline.quantizer.bits_per_sample) {
                return Err(ScenarioError::range(
                    format!("{ppath}.quantizer.bits_per_sample"),
                    "must be in 1..=16",
                ));
            }
            if pipeline.quantizer.clip_min >= pipeline.quantizer.clip_max {
                return Err(ScenarioError::range(
                    format!("{ppath}.quantizer"),
                    "clip_min must be below clip_max",
                ));
            }
            if pipeline.rlnc.k == 0 {
                return Err(ScenarioError::range(format!("{ppath}.rlnc.k"), "must be >= 1"));
            }
            if pipeline.rlnc.redundancy < 1.0 {
                return Err(ScenarioError::range(
                    format!("{ppath}.rlnc.redundancy"),
                    "must be >= 1.0",
                ));
            }
            if let Some(dsc) = &pipeline.dsc {
                if !(0.0..=1.0).contains(&dsc.lsb_flip_rate) {
                    return Err(ScenarioError::range(
                        format!("{ppath}.dsc.lsb_flip_rate"),
                        "must be in [0, 1]",
                    ));
                }
                if pipeline.quantizer.bits_per_sample <= 7 && dsc.lsb_flip_rate > 0.0 {
                    return Err(ScenarioError::range(
                        format!("{ppath}.dsc.lsb_flip_rate"),
                        "flip injection requires more than 7 bits per sample",
                    ));
                }
                if !streams.contains(&dsc.side_info) {
                    return Err(ScenarioError::dangling(
                        format!("{ppath}.dsc.side_info"),
                        format!("no node publishes stream {:?}", dsc.side_info),
                    ));
                }
            }
        }
        if node.relay.is_some() && node.role != NodeRole::Relay {
            return Err(ScenarioError::range(
                format!("{path}.relay"),
                "forwarding config requires role \"relay\"",
            ));
        }
        if node.role == NodeRole::Relay && node.link.is_none() {
            return Err(ScenarioError::dangling(
                format!("{path}.link"),
                "relay nodes must name an uplink",
            ));
        }
    }

    for (i, flow) in s.flows.iter().enumerate() {
        let path = format!("flows[{i}]");
        match (&flow.ingress_port, &flow.link) {
            (Some(port), None) => {
                if !ap_ports.contains(port) {
                    return Err(ScenarioError::dangling(
                        format!("{path}.ingress_port"),
                        format!("ap ingress port {port} not declared"),
                    ));
                }
            }
            (None, Some(link)) => {
                if !link_ids.contains(link.as_str()) {
                    return Err(ScenarioError::dangling(
                        format!("{path}.link"),
                        format!("unknown link {link:?}"),
                    ));
                }
            }
            (Some(_), Some(_)) | (None, None) => {
                return Err(ScenarioError::range(
                    path,
                    "exactly one of ingress_port or link must be set",
                ));
            }
        }
        if flow.rate_pps <= 0.0 {
            return Err(ScenarioError::range(format!("{path}.rate_pps"), "must be positive"));
        }
        if flow.payload_bytes > u16::MAX as usize {
            return Err(ScenarioError::range(
                format!("{path}.payload_bytes"),
                "must fit a u16",
            ));
        }
    }

    if let Some(ap) = &s.ap {
        if iface_ids.len() != ap.ifaces.len() {
            return Err(ScenarioError::range("ap.ifaces", "duplicate iface ids"));
        }
        for (i, iface) in ap.ifaces.iter().enumerate() {
            if !link_ids.contains(iface.link.as_str()) {
                return Err(ScenarioError::dangling(
                    format!("ap.ifaces[{i}].link"),
                    format!("unknown link {:?}", iface.link),
                ));
            }
        }
        for (i, rule) in ap.rules.iter().enumerate() {
            if let Some(iface) = rule.forward_iface {
                if !iface_ids.contains(&iface) {
                    return Err(ScenarioError::dangling(
                        format!("ap.rules[{i}].forward_iface"),
                        format!("unknown iface {iface}"),
                    ));
                }
            }
            if let Some(flow) = &rule.flow_id {
                if !flow_ids.contains(flow.as_str()) {
                    return Err(ScenarioError::dangling(
                        format!("ap.rules[{i}].flow_id"),
                        format!("unknown flow {flow:?}"),
                    ));
                }
            }
            if let Some(port) = rule.ingress_port {
                if !ap_ports.contains(&port) {
                    return Err(ScenarioError::dangling(
                        format!("ap.rules[{i}].ingress_port"),
                        format!("ap ingress port {port} not declared"),
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&ap.policy.loss_threshold) {
            return Err(ScenarioError::range(
                "ap.policy.loss_threshold",
                "must be in [0, 1]",
            ));
        }
    }

    if let Some(h) = &s.handover {
        if s.ap.is_none() {
            return Err(ScenarioError::dangling(
                "handover",
                "requires an aggregation point",
            ));
        }
        if !flow_ids.contains(h.flow.as_str()) {
            return Err(ScenarioError::dangling(
                "handover.flow",
                format!("unknown flow {:?}", h.flow),
            ));
        }
        if !iface_ids.contains(&h.to_iface) {
            return Err(ScenarioError::dangling(
                "handover.to_iface",
                format!("unknown iface {}", h.to_iface),
            ));
        }
        if h.at_us >= s.duration_us {
            return Err(ScenarioError::range(
                "handover.at_us",
                "must fall inside the run duration",
            ));
        }
    }

    for (g, gw) in s.gateway.as_slice().iter().enumerate() {
        let path = format!("gateway[{g}]");
        let adapter_ids: BTreeSet<u32> = gw.adapters.iter().map(|a| a.id).collect();
        if adapter_ids.len() != gw.adapters.len() {
            return Err(ScenarioError::range(format!("{path}.adapters"), "duplicate ids"));
        }
        for (i, t) in gw.traffic.iter().enumerate() {
            if !adapter_ids.contains(&t.adapter) {
                return Err(ScenarioError::dangling(
                    format!("{path}.traffic[{i}].adapter"),
                    format!("unknown adapter {}", t.adapter),
                ));
            }
            if t.period_us == 0 {
                return Err(ScenarioError::range(
                    format!("{path}.traffic[{i}].period_us"),
                    "must be positive",
                ));
            }
        }
        if let GatewayMode::Interval { period_us } = gw.mode {
            if period_us == 0 {
                return Err(ScenarioError::range(
                    format!("{path}.mode.period_us"),
                    "must be positive",
                ));
            }
        }
        if let Some(link) = &gw.link {
            if !link_ids.contains(link.as_str()) {
                return Err(ScenarioError::dangling(
                    format!("{path}.link"),
                    format!("unknown link {link:?}"),
                ));
            }
        }
        if !gw.traffic.is_empty() && gw.tariffs.is_empty() {
            return Err(ScenarioError::dangling(
                format!("{path}.tariffs"),
                "at least one tariff is required to ship batches",
            ));
        }
        for (i, t) in gw.tariffs.iter().enumerate() {
            if t.cost_per_byte < 0.0 || t.cost_per_connection_event < 0.0 {
                return Err(ScenarioError::range(
                    format!("{path}.tariffs[{i}]"),
                    "costs must be non-negative",
                ));
            }
        }
    }

    if let Some(anomaly) = &s.anomaly {
        if anomaly.train_windows < 2 {
            return Err(ScenarioError::range(
                "anomaly.train_windows",
                "must be >= 2",
            ));
        }
        if anomaly.threshold_k <= 0.0 {
            return Err(ScenarioError::range("anomaly.threshold_k", "must be positive"));
        }
    }

    Ok(())
}
