//! Scenario runner: validated scenario in, metrics artifacts out.
//!
//! `run` executes one scenario and writes `metrics.jsonl`, `report.json`,
//! and optionally `metrics.csv` into the output directory. `sweep` reruns a
//! scenario over a list of values patched into one scalar field, each run
//! with a derived seed. `dump` exports the device-cloud state as JSON.

use crate::ap::HandoverReport;
use crate::cloud::Alarm;
use crate::metrics::{MetricRecord, MetricsSnapshot, METRICS_SCHEMA_VERSION};
use crate::scenario::{validate, Scenario, ScenarioError};
use crate::time::SimTime;
use crate::world::{BatteryProjection, World, WorldError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("parameter path {path}: {message}")]
    BadParameterPath { path: String, message: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code contract: 2 validation, 3 runtime, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::BadParameterPath { .. } => 2,
            RunError::World(_) => 3,
            RunError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Final artifact of one run; serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub experiment: Option<String>,
    pub seed: u64,
    pub duration_us: u64,
    pub snapshot: MetricsSnapshot,
    pub handover_reports: Vec<HandoverReport>,
    pub alarms: Vec<Alarm>,
    pub battery_projections: Vec<BatteryProjection>,
    pub wall_clock_ms: u64,
}

/// Content digest of the canonicalized scenario JSON (keys sorted, compact
/// encoding), so every report is traceable to its exact inputs.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let value = serde_json::to_value(scenario).expect("scenario serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Execute a validated scenario in memory; no files written.
pub fn execute(scenario: &Scenario) -> Result<(RunReport, String), RunError> {
    let started = std::time::Instant::now();
    let mut world = World::build(scenario)?;
    let snapshot = world.run_to_end();
    let jsonl = world.render_jsonl();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario_hash: scenario_hash(scenario),
        experiment: scenario.experiment.clone(),
        seed: scenario.seed,
        duration_us: scenario.duration_us,
        snapshot,
        handover_reports: world.handover_reports(),
        alarms: world.alarms().to_vec(),
        battery_projections: world.battery_projections().to_vec(),
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    Ok((report, jsonl))
}

/// Fixed-column CSV projection of the run: metric, entity, t_us, value.
pub fn render_csv(report: &RunReport, records: &[MetricRecord]) -> String {
    let mut out = String::from("metric,entity,t_us,value\n");
    let t = report.duration_us;
    let mut push = |metric: &str, entity: &str, t_us: u64, value: f64| {
        out.push_str(&format!("{metric},{entity},{t_us},{value}\n"));
    };
    for (flow, c) in &report.snapshot.flows {
        push("flow_sent", flow, t, c.sent as f64);
        push("flow_delivered", flow, t, c.delivered as f64);
        push("flow_lost", flow, t, c.lost as f64);
        push("flow_duplicated", flow, t, c.duplicated as f64);
        push("flow_reordered", flow, t, c.reordered as f64);
    }
    for (node, uj) in &report.snapshot.energy_uj {
        push("energy_uj", node, t, *uj);
    }
    for (gw, c) in &report.snapshot.gateways {
        push("gateway_batches", gw, t, c.batches as f64);
        push("gateway_batch_bytes", gw, t, c.batch_bytes as f64);
        push("gateway_transfer_cost", gw, t, c.transfer_cost);
        push("gateway_evictions", gw, t, c.evictions as f64);
    }
    push("alarms_raised", "cloud", t, report.snapshot.alarms_raised as f64);
    push("table_misses", "ap", t, report.snapshot.table_misses as f64);
    push(
        "latency_mean_us",
        "all_flows",
        t,
        report.snapshot.latency.mean_us(),
    );
    for rec in records {
        if let MetricRecord::Reconstruction {
            t_us,
            stream,
            rel_l2_error: Some(err),
            ..
        } = rec
        {
            push("reconstruction_rel_l2_error", stream, *t_us, *err);
        }
    }
    out
}

/// Run a scenario and write artifacts into `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path, csv: bool) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let started = std::time::Instant::now();
    let mut world = World::build(scenario)?;
    let snapshot = world.run_to_end();
    let jsonl = world.render_jsonl();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario_hash: scenario_hash(scenario),
        experiment: scenario.experiment.clone(),
        seed: scenario.seed,
        duration_us: scenario.duration_us,
        snapshot,
        handover_reports: world.handover_reports(),
        alarms: world.alarms().to_vec(),
        battery_projections: world.battery_projections().to_vec(),
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };

    let metrics_path = out_dir.join("metrics.jsonl");
    std::fs::write(&metrics_path, &jsonl).map_err(|e| io_err(&metrics_path, e))?;
    let report_path = out_dir.join("report.json");
    let report_json =
        serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, report_json).map_err(|e| io_err(&report_path, e))?;
    if csv {
        let csv_path = out_dir.join("metrics.csv");
        std::fs::write(&csv_path, render_csv(&report, world.records()))
            .map_err(|e| io_err(&csv_path, e))?;
    }
    Ok(report)
}

/// Run the scenario and export the device-cloud state as JSON.
pub fn dump(scenario: &Scenario) -> Result<serde_json::Value, RunError> {
    let mut world = World::build(scenario)?;
    world.run_to_end();
    Ok(world.dump_cloud_state())
}

/// Translate "links[0].loss_probability" into a JSON pointer.
fn to_json_pointer(path: &str) -> String {
    let mut out = String::new();
    for part in path.split('.') {
        let (name, indexes) = match part.find('[') {
            Some(at) => (&part[..at], &part[at..]),
            None => (part, ""),
        };
        if !name.is_empty() {
            out.push('/');
            out.push_str(name);
        }
        for idx in indexes.split('[').filter(|s| !s.is_empty()) {
            out.push('/');
            out.push_str(idx.trim_end_matches(']'));
        }
    }
    out
}

/// Patch one scalar in the scenario document.
fn patch_scenario(
    base: &Scenario,
    path: &str,
    value: &serde_json::Value,
) -> Result<Scenario, RunError> {
    let mut doc = serde_json::to_value(base).expect("scenario serializes");
    let pointer = to_json_pointer(path);
    let slot = doc
        .pointer_mut(&pointer)
        .ok_or_else(|| RunError::BadParameterPath {
            path: path.to_string(),
            message: "path does not resolve".into(),
        })?;
    if slot.is_array() || slot.is_object() {
        return Err(RunError::BadParameterPath {
            path: path.to_string(),
            message: "path resolves to a composite value, expected a scalar".into(),
        });
    }
    *slot = value.clone();
    let text = serde_json::to_string(&doc).expect("document serializes");
    Ok(validate(&text)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: serde_json::Value,
    pub seed: u64,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub alarms: u64,
    pub generations_completed: u64,
}

/// One run per value; each run derives seed `base_seed + index` and lands in
/// `out_dir/run-<index>/`. An aggregate `sweep.csv` summarizes the runs.
pub fn sweep(
    base: &Scenario,
    parameter_path: &str,
    values: &[serde_json::Value],
    out_dir: &Path,
    csv: bool,
) -> Result<Vec<RunReport>, RunError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut reports = Vec::with_capacity(values.len());
    let mut rows = Vec::with_capacity(values.len());
    for (index, value) in values.iter().enumerate() {
        let mut patched = patch_scenario(base, parameter_path, value)?;
        patched.seed = base.seed + index as u64;
        let run_dir = out_dir.join(format!("run-{index}"));
        let report = run(&patched, &run_dir, csv)?;
        let totals = report
            .snapshot
            .flows
            .values()
            .fold((0u64, 0u64, 0u64), |acc, c| {
                (acc.0 + c.sent, acc.1 + c.delivered, acc.2 + c.lost)
            });
        rows.push(SweepRow {
            index,
            value: value.clone(),
            seed: patched.seed,
            sent: totals.0,
            delivered: totals.1,
            lost: totals.2,
            alarms: report.snapshot.alarms_raised,
            generations_completed: report.snapshot.cloud.generations_completed,
        });
        reports.push(report);
    }
    let mut agg = String::from("index,value,seed,sent,delivered,lost,alarms,generations_completed\n");
    for row in &rows {
        agg.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.index,
            row.value,
            row.seed,
            row.sent,
            row.delivered,
            row.lost,
            row.alarms,
            row.generations_completed
        ));
    }
    let agg_path = out_dir.join("sweep.csv");
    std::fs::write(&agg_path, agg).map_err(|e| io_err(&agg_path, e))?;
    Ok(reports)
}

/// Convenience: validate a scenario file from disk.
pub fn load_scenario(path: &Path) -> Result<Scenario, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(validate(&text)?)
}

/// First line of every metrics.jsonl file.
pub fn schema_line() -> String {
    serde_json::to_string(&MetricRecord::Schema {
        version: METRICS_SCHEMA_VERSION,
    })
    .expect("schema record serializes")
}

/// Shared helper for tests and examples that need a quick world.
pub fn build_world(scenario: &Scenario) -> Result<World, RunError> {
    Ok(World::build(scenario)?)
}

/// Run a scenario until an arbitrary instant, returning the snapshot.
pub fn run_until(scenario: &Scenario, t_us: u64) -> Result<MetricsSnapshot, RunError> {
    let mut world = World::build(scenario)?;
    Ok(world.run_until(SimTime::from_micros(t_us)))
}
