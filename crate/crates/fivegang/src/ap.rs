//! Aggregation point: SDN-style switch with a controller-managed flow
//! table, per-interface link telemetry, and the make-before-break handover
//! state machine.
//!
//! The switch is a pure match-action lookup: highest priority wins, ties go
//! to the lowest rule id, no match means drop plus a table-miss count. The
//! radio manager smooths telemetry with EWMAs and proposes a handover plan
//! when the current interface degrades past policy thresholds and a clearly
//! better alternative exists.

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type PortId = u32;
pub type IfaceId = u32;

pub const EWMA_BETA: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ApError {
    #[error("action references unknown port {0}")]
    UnknownPort(PortId),
    #[error("unknown interface {0}")]
    UnknownInterface(IfaceId),
    #[error("flow {0} is not bound to any interface")]
    FlowUnbound(String),
    #[error("handover step {step} illegal in state {state:?}")]
    IllegalTransition {
        state: HandoverState,
        step: &'static str,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub ingress_port: Option<PortId>,
    pub flow_id: Option<String>,
}

impl RuleMatch {
    /// Empty match: the wildcard rule.
    pub fn any() -> Self {
        RuleMatch::default()
    }

    pub fn flow(flow_id: &str) -> Self {
        RuleMatch {
            ingress_port: None,
            flow_id: Some(flow_id.to_string()),
        }
    }

    pub fn matches(&self, ingress_port: PortId, flow_id: &str) -> bool {
        self.ingress_port.is_none_or(|p| p == ingress_port)
            && self.flow_id.as_ref().is_none_or(|f| f == flow_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward(PortId),
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRule {
    pub rule_id: u64,
    pub priority: i32,
    pub rule_match: RuleMatch,
    pub action: Action,
    pub installed_at: SimTime,
}

/// Ordered match-action rules. Lookup is a pure function of the table
/// contents and the packet key.
#[derive(Debug, Default)]
pub struct FlowTable {
    rules: Vec<FlowRule>,
    next_rule_id: u64,
    pub miss_count: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        FlowTable::default()
    }

    /// Install a rule; it is active for the very next lookup. Forward
    /// actions must reference a known port.
    pub fn install(
        &mut self,
        priority: i32,
        rule_match: RuleMatch,
        action: Action,
        now: SimTime,
        ports: &BTreeSet<PortId>,
    ) -> Result<u64, ApError> {
        if let Action::Forward(port) = action {
            if !ports.contains(&port) {
                return Err(ApError::UnknownPort(port));
            }
        }
        let rule_id = self.next_rule_id;
        self.next_rule_id += 1;
        self.rules.push(FlowRule {
            rule_id,
            priority,
            rule_match,
            action,
            installed_at: now,
        });
        Ok(rule_id)
    }

    pub fn remove(&mut self, rule_id: u64) -> bool {
        let before = self.rules.len();
        self.rules.retain(|r| r.rule_id != rule_id);
        before != self.rules.len()
    }

    pub fn rules(&self) -> &[FlowRule] {
        &self.rules
    }

    /// Deterministic lookup: highest priority wins, ties break to the
    /// lowest rule id; no match drops and bumps the miss counter.
    pub fn lookup(&mut self, ingress_port: PortId, flow_id: &str) -> Action {
        let best = self
            .rules
            .iter()
            .filter(|r| r.rule_match.matches(ingress_port, flow_id))
            .max_by_key(|r| (r.priority, std::cmp::Reverse(r.rule_id)));
        match best {
            Some(rule) => rule.action,
            None => {
                self.miss_count += 1;
                Action::Drop
            }
        }
    }
}

/// Smoothed per-interface quality telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub iface_id: IfaceId,
    pub channel: String,
    pub loss_ewma: f64,
    pub latency_ewma_us: f64,
    pub utilization_ewma: f64,
    pub last_report: SimTime,
    pub reports: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TelemetrySample {
    pub lost: bool,
    pub latency_us: f64,
    pub busy_fraction: f64,
}

/// Radio-management entity: holds the link states and the handover policy
/// decision logic.
#[derive(Debug, Default)]
pub struct RadioManager {
    states: BTreeMap<IfaceId, LinkState>,
    pub last_handover_completed: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverPolicy {
    pub loss_threshold: f64,
    pub min_improvement: f64,
    pub hold_down_us: u64,
}

impl Default for HandoverPolicy {
    fn default() -> Self {
        HandoverPolicy {
            loss_threshold: 0.05,
            min_improvement: 0.1,
            hold_down_us: 1_000_000,
        }
    }
}

impl RadioManager {
    pub fn add_iface(&mut self, iface_id: IfaceId, channel: &str) {
        self.states.insert(
            iface_id,
            LinkState {
                iface_id,
                channel: channel.to_string(),
                loss_ewma: 0.0,
                latency_ewma_us: 0.0,
                utilization_ewma: 0.0,
                last_report: SimTime::ZERO,
                reports: 0,
            },
        );
    }

    pub fn state(&self, iface_id: IfaceId) -> Option<&LinkState> {
        self.states.get(&iface_id)
    }

    /// Fold one telemetry sample into the interface's EWMAs. The first
    /// report initializes each EWMA to the sample exactly.
    pub fn report(
        &mut self,
        iface_id: IfaceId,
        sample: TelemetrySample,
        now: SimTime,
    ) -> Result<&LinkState, ApError> {
        let state = self
            .states
            .get_mut(&iface_id)
            .ok_or(ApError::UnknownInterface(iface_id))?;
        let loss = if sample.lost { 1.0 } else { 0.0 };
        if state.reports == 0 {
            state.loss_ewma = loss;
            state.latency_ewma_us = sample.latency_us;
            state.utilization_ewma = sample.busy_fraction;
        } else {
            state.loss_ewma = (1.0 - EWMA_BETA) * state.loss_ewma + EWMA_BETA * loss;
            state.latency_ewma_us =
                (1.0 - EWMA_BETA) * state.latency_ewma_us + EWMA_BETA * sample.latency_us;
            state.utilization_ewma =
                (1.0 - EWMA_BETA) * state.utilization_ewma + EWMA_BETA * sample.busy_fraction;
        }
        state.reports += 1;
        state.last_report = now;
        Ok(state)
    }

    /// Policy evaluation: plan a handover iff the bound interface's loss
    /// exceeds the threshold, the best alternative improves on it by at
    /// least `min_improvement`, and no handover completed within the
    /// hold-down window. Alternative choice: lowest loss, then lowest
    /// latency, then lowest interface id.
    pub fn evaluate_handover(
        &self,
        flow_id: &str,
        bound_iface: Option<IfaceId>,
        policy: &HandoverPolicy,
        now: SimTime,
    ) -> Result<Option<HandoverPlan>, ApError> {
        let current_id = bound_iface.ok_or_else(|| ApError::FlowUnbound(flow_id.to_string()))?;
        let current = self
            .states
            .get(&current_id)
            .ok_or(ApError::UnknownInterface(current_id))?;
        if let Some(done) = self.last_handover_completed {
            if now.since(done) < policy.hold_down_us {
                return Ok(None);
            }
        }
        if current.loss_ewma <= policy.loss_threshold {
            return Ok(None);
        }
        let best = self
            .states
            .values()
            .filter(|s| s.iface_id != current_id)
            .min_by(|a, b| {
                a.loss_ewma
                    .total_cmp(&b.loss_ewma)
                    .then(a.latency_ewma_us.total_cmp(&b.latency_ewma_us))
                    .then(a.iface_id.cmp(&b.iface_id))
            });
        let Some(best) = best else {
            return Ok(None);
        };
        if best.loss_ewma <= current.loss_ewma - policy.min_improvement {
            Ok(Some(HandoverPlan::new(
                flow_id,
                current_id,
                best.iface_id,
                &best.channel,
            )))
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandoverState {
    Idle,
    Establishing,
    DualActive,
    Rerouted,
    Complete,
}

/// A planned migration of one flow between interfaces. State moves only
/// along Idle -> Establishing -> DualActive -> Rerouted -> Complete; tearing
/// down the old link is legal only once Rerouted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverPlan {
    pub flow_id: String,
    pub old_iface: IfaceId,
    pub new_iface: IfaceId,
    pub new_channel: String,
    pub state: HandoverState,
}

impl HandoverPlan {
    pub fn new(flow_id: &str, old_iface: IfaceId, new_iface: IfaceId, new_channel: &str) -> Self {
        HandoverPlan {
            flow_id: flow_id.to_string(),
            old_iface,
            new_iface,
            new_channel: new_channel.to_string(),
            state: HandoverState::Idle,
        }
    }

    fn step(&mut self, from: HandoverState, to: HandoverState, step: &'static str) -> Result<(), ApError> {
        if self.state != from {
            return Err(ApError::IllegalTransition {
                state: self.state,
                step,
            });
        }
        self.state = to;
        Ok(())
    }

    pub fn begin_establish(&mut self) -> Result<(), ApError> {
        self.step(HandoverState::Idle, HandoverState::Establishing, "establish")
    }

    pub fn mark_dual_active(&mut self) -> Result<(), ApError> {
        self.step(
            HandoverState::Establishing,
            HandoverState::DualActive,
            "dual_active",
        )
    }

    pub fn mark_rerouted(&mut self) -> Result<(), ApError> {
        self.step(HandoverState::DualActive, HandoverState::Rerouted, "reroute")
    }

    pub fn mark_complete(&mut self) -> Result<(), ApError> {
        self.step(HandoverState::Rerouted, HandoverState::Complete, "complete")
    }

    pub fn teardown_allowed(&self) -> bool {
        self.state == HandoverState::Rerouted
    }

    /// Establish failure aborts from Establishing back to Idle; the old
    /// link is untouched.
    pub fn abort_establish(&mut self) -> Result<(), ApError> {
        self.step(HandoverState::Establishing, HandoverState::Idle, "abort")
    }
}

/// Counters measured over one handover, computed from flow metrics rather
/// than assumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverReport {
    pub flow_id: String,
    pub old_iface: IfaceId,
    pub new_iface: IfaceId,
    pub packets_in_flight_at_switch: u64,
    pub packets_lost_during_handover: u64,
    pub duplicates: u64,
    pub reroute_time_us: u64,
    pub dual_active_us: u64,
    pub completed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ports(ids: &[PortId]) -> BTreeSet<PortId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn single_rule_forwards_matching_packet() {
        let mut table = FlowTable::new();
        table
            .install(
                10,
                RuleMatch::flow("f1"),
                Action::Forward(1),
                SimTime::ZERO,
                &ports(&[1]),
            )
            .unwrap();
        assert_eq!(table.lookup(0, "f1"), Action::Forward(1));
    }

    #[test]
    fn higher_priority_wins() {
        let mut table = FlowTable::new();
        let p = ports(&[1, 2]);
        table
            .install(10, RuleMatch::any(), Action::Forward(1), SimTime::ZERO, &p)
            .unwrap();
        table
            .install(20, RuleMatch::any(), Action::Forward(2), SimTime::ZERO, &p)
            .unwrap();
        assert_eq!(table.lookup(0, "x"), Action::Forward(2));
    }

    #[test]
    fn equal_priority_breaks_to_lowest_rule_id() {
        let mut table = FlowTable::new();
        let p = ports(&[1, 2]);
        let first = table
            .install(5, RuleMatch::any(), Action::Forward(1), SimTime::ZERO, &p)
            .unwrap();
        let second = table
            .install(5, RuleMatch::any(), Action::Forward(2), SimTime::ZERO, &p)
            .unwrap();
        assert!(first < second);
        assert_eq!(table.lookup(0, "x"), Action::Forward(1));
    }

    #[test]
    fn empty_table_drops_and_counts_miss() {
        let mut table = FlowTable::new();
        assert_eq!(table.lookup(3, "f"), Action::Drop);
        assert_eq!(table.miss_count, 1);
    }

    #[test]
    fn wildcard_matches_everything() {
        let mut table = FlowTable::new();
        table
            .install(1, RuleMatch::any(), Action::Drop, SimTime::ZERO, &ports(&[]))
            .unwrap();
        for (port, flow) in [(0, "a"), (7, "b"), (123, "zzz")] {
            assert_eq!(table.lookup(port, flow), Action::Drop);
        }
        assert_eq!(table.miss_count, 0);
    }

    #[test]
    fn unknown_port_rejected() {
        let mut table = FlowTable::new();
        let err = table
            .install(1, RuleMatch::any(), Action::Forward(9), SimTime::ZERO, &ports(&[1]))
            .unwrap_err();
        assert_eq!(err, ApError::UnknownPort(9));
    }

    #[test]
    fn removal_is_explicit() {
        let mut table = FlowTable::new();
        let p = ports(&[1]);
        let id = table
            .install(1, RuleMatch::any(), Action::Forward(1), SimTime::ZERO, &p)
            .unwrap();
        assert!(table.remove(id));
        assert!(!table.remove(id));
        assert_eq!(table.lookup(0, "f"), Action::Drop);
    }

    /// Linear-scan oracle: filter matching rules, maximize (priority, -id).
    fn oracle_lookup(rules: &[FlowRule], port: PortId, flow: &str) -> Action {
        let mut best: Option<&FlowRule> = None;
        for r in rules {
            if !r.rule_match.matches(port, flow) {
                continue;
            }
            best = match best {
                None => Some(r),
                Some(b) => {
                    if (r.priority, std::cmp::Reverse(r.rule_id))
                        > (b.priority, std::cmp::Reverse(b.rule_id))
                    {
                        Some(r)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best.map_or(Action::Drop, |r| r.action)
    }

    #[test]
    fn random_tables_agree_with_linear_scan_oracle() {
        let mut rng = crate::rng::stream_rng(7, "tables");
        let flows = ["fa", "fb", "fc"];
        let port_set = ports(&[0, 1, 2, 3]);
        for _ in 0..1000 {
            let mut table = FlowTable::new();
            for _ in 0..rng.random_range(0..8) {
                let rule_match = RuleMatch {
                    ingress_port: if rng.random::<bool>() {
                        Some(rng.random_range(0..4))
                    } else {
                        None
                    },
                    flow_id: if rng.random::<bool>() {
                        Some(flows[rng.random_range(0..3)].to_string())
                    } else {
                        None
                    },
                };
                let action = if rng.random::<bool>() {
                    Action::Forward(rng.random_range(0..4))
                } else {
                    Action::Drop
                };
                table
                    .install(rng.random_range(0..5), rule_match, action, SimTime::ZERO, &port_set)
                    .unwrap();
            }
            for _ in 0..10 {
                let port = rng.random_range(0..4);
                let flow = flows[rng.random_range(0..3)];
                let expect = oracle_lookup(table.rules(), port, flow);
                assert_eq!(table.lookup(port, flow), expect);
            }
        }
    }

    fn rm_with(ifaces: &[(IfaceId, &str)]) -> RadioManager {
        let mut rm = RadioManager::default();
        for (id, ch) in ifaces {
            rm.add_iface(*id, ch);
        }
        rm
    }

    #[test]
    fn first_report_initializes_ewma_exactly() {
        let mut rm = rm_with(&[(1, "A")]);
        let s = rm
            .report(
                1,
                TelemetrySample {
                    lost: true,
                    latency_us: 740.0,
                    busy_fraction: 0.25,
                },
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(s.loss_ewma, 1.0);
        assert_eq!(s.latency_ewma_us, 740.0);
        assert_eq!(s.utilization_ewma, 0.25);
    }

    #[test]
    fn constant_samples_converge_geometrically() {
        let mut rm = rm_with(&[(1, "A")]);
        // Seed the EWMA away from the constant, then feed 100 constants:
        // residual = 0.9^99 * |start - c| < 1e-3 for unit-scale gaps.
        rm.report(
            1,
            TelemetrySample {
                lost: true,
                latency_us: 1000.0,
                busy_fraction: 1.0,
            },
            SimTime::ZERO,
        )
        .unwrap();
        for i in 0..100 {
            rm.report(
                1,
                TelemetrySample {
                    lost: false,
                    latency_us: 200.0,
                    busy_fraction: 0.1,
                },
                SimTime::from_micros(i),
            )
            .unwrap();
        }
        let s = rm.state(1).unwrap();
        assert!(s.loss_ewma < 1e-3);
        assert!((s.latency_ewma_us - 200.0).abs() < 1.0);
        assert!((s.utilization_ewma - 0.1).abs() < 1e-3);
    }

    #[test]
    fn all_loss_stream_approaches_one_monotonically() {
        let mut rm = rm_with(&[(1, "A")]);
        let mut prev = -1.0;
        for i in 0..50 {
            let s = rm
                .report(
                    1,
                    TelemetrySample {
                        lost: true,
                        latency_us: 0.0,
                        busy_fraction: 0.0,
                    },
                    SimTime::from_micros(i),
                )
                .unwrap();
            assert!(s.loss_ewma >= prev);
            prev = s.loss_ewma;
        }
        assert!((prev - 1.0).abs() < 1e-2);
    }

    #[test]
    fn unknown_interface_rejected() {
        let mut rm = rm_with(&[]);
        let err = rm
            .report(
                9,
                TelemetrySample {
                    lost: false,
                    latency_us: 0.0,
                    busy_fraction: 0.0,
                },
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, ApError::UnknownInterface(9));
    }

    fn force_loss(rm: &mut RadioManager, iface: IfaceId, loss: f64) {
        let s = rm.states.get_mut(&iface).unwrap();
        s.loss_ewma = loss;
        s.reports = 10;
    }

    #[test]
    fn below_threshold_plans_nothing() {
        let mut rm = rm_with(&[(1, "A"), (2, "B")]);
        force_loss(&mut rm, 1, 0.02);
        force_loss(&mut rm, 2, 0.0);
        let plan = rm
            .evaluate_handover("f", Some(1), &HandoverPolicy::default(), SimTime::ZERO)
            .unwrap();
        assert!(plan.is_none());
    }

    #[test]
    fn clear_improvement_plans_migration() {
        let mut rm = rm_with(&[(1, "A"), (2, "B")]);
        force_loss(&mut rm, 1, 0.30);
        force_loss(&mut rm, 2, 0.01);
        let plan = rm
            .evaluate_handover("f", Some(1), &HandoverPolicy::default(), SimTime::ZERO)
            .unwrap()
            .expect("plan");
        assert_eq!(plan.new_iface, 2);
        assert_eq!(plan.new_channel, "B");
        assert_eq!(plan.state, HandoverState::Idle);
    }

    #[test]
    fn hold_down_suppresses_planning() {
        let mut rm = rm_with(&[(1, "A"), (2, "B")]);
        force_loss(&mut rm, 1, 0.30);
        force_loss(&mut rm, 2, 0.01);
        rm.last_handover_completed = Some(SimTime::from_micros(100));
        let policy = HandoverPolicy::default();
        let suppressed = rm
            .evaluate_handover("f", Some(1), &policy, SimTime::from_micros(500_000))
            .unwrap();
        assert!(suppressed.is_none());
        let allowed = rm
            .evaluate_handover("f", Some(1), &policy, SimTime::from_micros(1_200_000))
            .unwrap();
        assert!(allowed.is_some());
    }

    #[test]
    fn unbound_flow_is_an_error() {
        let rm = rm_with(&[(1, "A")]);
        let err = rm
            .evaluate_handover("f", None, &HandoverPolicy::default(), SimTime::ZERO)
            .unwrap_err();
        assert_eq!(err, ApError::FlowUnbound("f".into()));
    }

    #[test]
    fn tie_break_matches_exhaustive_comparison_oracle() {
        let mut rng = crate::rng::stream_rng(13, "ties");
        for _ in 0..500 {
            let mut rm = rm_with(&[(1, "A"), (2, "B"), (3, "C"), (4, "D")]);
            force_loss(&mut rm, 1, 0.5);
            let mut candidates = Vec::new();
            for iface in [2u32, 3, 4] {
                // Coarse grid forces frequent exact ties.
                let loss = f64::from(rng.random_range(0..3)) * 0.05;
                let latency = f64::from(rng.random_range(0..3)) * 100.0;
                let s = rm.states.get_mut(&iface).unwrap();
                s.loss_ewma = loss;
                s.latency_ewma_us = latency;
                s.reports = 5;
                candidates.push((loss, latency, iface));
            }
            let plan = rm
                .evaluate_handover("f", Some(1), &HandoverPolicy::default(), SimTime::ZERO)
                .unwrap();
            // Oracle: full sort by (loss, latency, iface id).
            candidates.sort_by(|a, b| {
                a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            let best = candidates[0];
            match plan {
                Some(p) => {
                    assert!(best.0 <= 0.5 - 0.1);
                    assert_eq!(p.new_iface, best.2);
                }
                None => assert!(best.0 > 0.5 - 0.1),
            }
        }
    }

    #[test]
    fn state_machine_only_walks_the_chain() {
        let mut plan = HandoverPlan::new("f", 1, 2, "B");
        assert!(!plan.teardown_allowed());
        assert!(plan.mark_rerouted().is_err());
        plan.begin_establish().unwrap();
        assert!(plan.begin_establish().is_err());
        plan.mark_dual_active().unwrap();
        assert!(!plan.teardown_allowed());
        plan.mark_rerouted().unwrap();
        assert!(plan.teardown_allowed());
        plan.mark_complete().unwrap();
        assert_eq!(plan.state, HandoverState::Complete);
        assert!(plan.mark_complete().is_err());
    }

    #[test]
    fn establish_failure_aborts_to_idle() {
        let mut plan = HandoverPlan::new("f", 1, 2, "B");
        plan.begin_establish().unwrap();
        plan.abort_establish().unwrap();
        assert_eq!(plan.state, HandoverState::Idle);
    }
}
