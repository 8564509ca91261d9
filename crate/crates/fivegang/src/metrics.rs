//! Run-wide counters, the latency histogram, and the metrics record stream.
//!
//! Everything here is plain data held in ordered maps so that snapshot
//! serialization is byte-stable for a fixed scenario and seed.

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounters {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub duplicated: u64,
    pub reordered: u64,
}

/// Tracks which sequence numbers a flow has delivered. Sequences arrive
/// mostly in order, so a watermark plus a small out-of-order set stays tiny.
#[derive(Clone, Debug, Default)]
pub struct SeqTracker {
    watermark: u64,
    ahead: BTreeSet<u64>,
    highest: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqObservation {
    New { reordered: bool },
    Duplicate,
}

impl SeqTracker {
    pub fn observe(&mut self, seq: u64) -> SeqObservation {
        if seq < self.watermark || self.ahead.contains(&seq) {
            return SeqObservation::Duplicate;
        }
        let reordered = matches!(self.highest, Some(h) if seq < h);
        self.highest = Some(self.highest.map_or(seq, |h| h.max(seq)));
        self.ahead.insert(seq);
        while self.ahead.remove(&self.watermark) {
            self.watermark += 1;
        }
        SeqObservation::New { reordered }
    }
}

/// Power-of-two bucketed delay histogram. Bucket `i` counts delays with
/// `bit_length(delay_us) == i`; bucket 0 counts zero-delay deliveries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub buckets: Vec<u64>,
    pub count: u64,
    pub sum_us: u64,
    pub min_us: Option<u64>,
    pub max_us: Option<u64>,
}

impl LatencyHistogram {
    pub fn record(&mut self, delay_us: u64) {
        let idx = (64 - delay_us.leading_zeros()) as usize;
        if self.buckets.len() <= idx {
            self.buckets.resize(idx + 1, 0);
        }
        self.buckets[idx] += 1;
        self.count += 1;
        self.sum_us += delay_us;
        self.min_us = Some(self.min_us.map_or(delay_us, |m| m.min(delay_us)));
        self.max_us = Some(self.max_us.map_or(delay_us, |m| m.max(delay_us)));
    }

    pub fn mean_us(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_us as f64 / self.count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayCounters {
    pub ingested: u64,
    pub evictions: u64,
    pub batches: u64,
    pub batch_bytes: u64,
    pub records_shipped: u64,
    pub transfer_cost: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudCounters {
    pub published: u64,
    pub dedup_dropped: u64,
    pub generations_completed: u64,
    pub generations_incomplete: u64,
    pub windows_reconstructed: u64,
    pub degraded_chunks: u64,
    pub batches_decoded: u64,
    pub batch_records_decoded: u64,
}

/// Final aggregate state of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub flows: BTreeMap<String, FlowCounters>,
    pub latency: LatencyHistogram,
    pub energy_uj: BTreeMap<String, f64>,
    pub alarms_raised: u64,
    pub table_misses: u64,
    pub gateways: BTreeMap<String, GatewayCounters>,
    pub cloud: CloudCounters,
}

/// One line of the metrics JSON-lines stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricRecord {
    Schema {
        version: u32,
    },
    /// Controller-to-switch protocol audit line.
    Controller {
        t_us: u64,
        msg: String,
        detail: String,
    },
    Handover {
        t_us: u64,
        flow: String,
        state: String,
    },
    /// Per reconstructed window; doubles as the alarm record when `alarm`.
    Reconstruction {
        t_us: u64,
        stream: String,
        window: u32,
        score: Option<f64>,
        threshold: Option<f64>,
        degraded_chunks: u64,
        rel_l2_error: Option<f64>,
        alarm: bool,
    },
    Batch {
        t_us: u64,
        gateway: String,
        seq: u32,
        records: u32,
        bytes: u64,
        cost: f64,
    },
    Snapshot {
        t_us: u64,
        #[serde(flatten)]
        snapshot: MetricsSnapshot,
    },
}

#[derive(Default)]
struct FlowState {
    counters: FlowCounters,
    tracker: SeqTracker,
    in_flight: u64,
}

/// Mutable collector the world writes into while events execute.
#[derive(Default)]
pub struct Metrics {
    flows: BTreeMap<String, FlowState>,
    latency: LatencyHistogram,
    energy_uj: BTreeMap<String, f64>,
    pub alarms_raised: u64,
    pub table_misses: u64,
    pub gateways: BTreeMap<String, GatewayCounters>,
    pub cloud: CloudCounters,
    records: Vec<MetricRecord>,
}

impl Metrics {
    pub fn new() -> Self {
        Metrics::default()
    }

    fn flow(&mut self, flow: &str) -> &mut FlowState {
        self.flows.entry(flow.to_string()).or_default()
    }

    pub fn on_sent(&mut self, flow: &str) {
        let f = self.flow(flow);
        f.counters.sent += 1;
        f.in_flight += 1;
    }

    pub fn on_lost(&mut self, flow: &str) {
        let f = self.flow(flow);
        f.counters.lost += 1;
        f.in_flight = f.in_flight.saturating_sub(1);
    }

    /// Record a delivery; duplicates are counted separately and never enter
    /// `delivered` or the latency histogram.
    pub fn on_delivered(&mut self, flow: &str, seq: u64, delay_us: u64) {
        let f = self.flow(flow);
        match f.tracker.observe(seq) {
            SeqObservation::Duplicate => {
                f.counters.duplicated += 1;
            }
            SeqObservation::New { reordered } => {
                f.counters.delivered += 1;
                if reordered {
                    f.counters.reordered += 1;
                }
                f.in_flight = f.in_flight.saturating_sub(1);
                self.latency.record(delay_us);
            }
        }
    }

    pub fn flow_counters(&self, flow: &str) -> FlowCounters {
        self.flows
            .get(flow)
            .map(|f| f.counters)
            .unwrap_or_default()
    }

    pub fn in_flight(&self, flow: &str) -> u64 {
        self.flows.get(flow).map(|f| f.in_flight).unwrap_or(0)
    }

    pub fn draw_energy(&mut self, node: &str, uj: f64) {
        *self.energy_uj.entry(node.to_string()).or_insert(0.0) += uj;
    }

    /// Overwrite a node's energy reading; the world syncs battery state
    /// into the snapshot this way.
    pub fn set_energy(&mut self, node: &str, uj: f64) {
        self.energy_uj.insert(node.to_string(), uj);
    }

    pub fn push_record(&mut self, record: MetricRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            flows: self
                .flows
                .iter()
                .map(|(k, v)| (k.clone(), v.counters))
                .collect(),
            latency: self.latency.clone(),
            energy_uj: self.energy_uj.clone(),
            alarms_raised: self.alarms_raised,
            table_misses: self.table_misses,
            gateways: self.gateways.clone(),
            cloud: self.cloud,
        }
    }

    /// Snapshot plus the record stream, rendered as the JSON-lines document.
    pub fn render_jsonl(&self, at: SimTime) -> String {
        let mut out = String::new();
        let schema = MetricRecord::Schema {
            version: METRICS_SCHEMA_VERSION,
        };
        out.push_str(&serde_json::to_string(&schema).expect("schema record serializes"));
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        let snap = MetricRecord::Snapshot {
            t_us: at.as_micros(),
            snapshot: self.snapshot(),
        };
        out.push_str(&serde_json::to_string(&snap).expect("snapshot serializes"));
        out.push('\n');
        out
    }
}
