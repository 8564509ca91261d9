//! Deterministic discrete-event simulator and codec library for 5G-era
//! industrial sensor networks.
//!
//! The library models the full path from battery-powered 9-DoF sensor
//! devices to a device cloud:
//!
//! - sensor-side encoding: compressed sensing ([`cs`]), syndrome-based
//!   distributed source coding ([`dsc`]), and generation-based random
//!   linear network coding ([`rlnc`]) over GF(2^8) ([`gf256`]);
//! - an SDN-style aggregation point with a controller-managed flow table,
//!   link telemetry, and make-before-break handover ([`ap`]);
//! - an edge gateway with online/interval/sleep transmission modes and
//!   lossless delta-varint batch compression ([`gateway`]);
//! - a cloud stage with topic pub/sub, at-least-once dedup, the three-stage
//!   reconstruction pipeline, and z-score anomaly detection ([`cloud`]);
//! - a deterministic engine, seeded channel models with ITU-derived
//!   profiles, and metrics collection ([`engine`], [`channel`],
//!   [`metrics`]) that everything else runs inside ([`world`], [`runner`],
//!   [`scenario`]).
//!
//! Runs are reproducible: a scenario file plus a 64-bit seed yields
//! byte-identical metrics output on every execution.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --example rlnc_roundtrip      # encode/recode/decode over GF(2^8)
//! cargo run --example cs_recovery         # sparse recovery by matching pursuit
//! cargo run --example dsc_side_info       # syndrome coding with side information
//! cargo run --example sensor_fusion       # complementary-filter orientation
//! cargo run --example flow_table          # SDN match-action lookups
//! cargo run --example pub_sub_broker      # topic matching and dedup
//! cargo run --example anomaly_detection   # baseline training and alarms
//! cargo run --example handover            # zero-loss make-before-break demo
//! cargo run --example sensor_pipeline     # full encode -> cloud reconstruction
//! cargo run --example gateway_modes       # online vs interval vs sleep costs
//! cargo run --example mmtc_scale          # many-device conservation run
//! ```
//!
//! Scenario files for the bundled demos live in `scenarios/`. The thin
//! `fivegang` binary drives the same machinery from the command line with
//! `validate`, `run`, `sweep`, and `dump` subcommands.

pub mod ap;
pub mod channel;
pub mod cloud;
pub mod cs;
pub mod dsc;
pub mod engine;
pub mod fusion;
pub mod gateway;
pub mod gf256;
pub mod metrics;
pub mod node;
pub mod rlnc;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod time;
pub mod world;

pub use engine::{Engine, Event, EventId, ScheduleError};
pub use metrics::{MetricRecord, Metrics, MetricsSnapshot};
pub use runner::{run, scenario_hash, sweep, RunError, RunReport};
pub use scenario::{validate, Scenario, ScenarioError};
pub use time::SimTime;
pub use world::World;
