//! Communication accounting.
//!
//! The counter model is a fixed contract, independent of how the engine
//! happens to move bytes in process:
//!
//! - an executed island stage costs, per pair, exactly 2 weight messages
//!   (the island-weight exchange) plus M payload particles for each side
//!   that adopts its partner's block; a swap-avoided outcome costs 0 payload;
//! - an executed particle-level butterfly stage costs, per pair, 2M weight
//!   messages at stage 1 (the per-particle weight vectors cross once each
//!   way) and 2 at later stages (weights are island-constant by then), plus
//!   one payload particle per draw whose source lies on the partner side;
//! - a global (BPF) resampling round costs one weight message per particle
//!   (every local weight must leave its PE) plus one payload particle per
//!   draw whose source island differs from the drawing PE;
//! - an island-assignment round (IPF) costs one weight message per PE plus
//!   M payload particles per PE that adopts another island's block.
//!
//! Adaptive-control reductions (ESS evaluations) are not counted; only
//! resampling-essential traffic is.

use crate::resample::{outcome_payload, ExchangeOutcome, ExchangeRecord};

/// Counters for one filter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepComm {
    /// Executed pairwise butterfly stages (island- or particle-level).
    pub stage_rounds: u64,
    /// Scalar weights communicated between PEs (or gathered off a PE).
    pub weight_msgs: u64,
    /// Particle states moved between PEs.
    pub payload_particles: u64,
}

impl StepComm {
    fn add(&mut self, other: &StepComm) {
        self.stage_rounds += other.stage_rounds;
        self.weight_msgs += other.weight_msgs;
        self.payload_particles += other.payload_particles;
    }
}

/// Run-level communication statistics: totals plus the per-step breakdown.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommStats {
    pub totals: StepComm,
    pub per_step: Vec<StepComm>,
}

/// What a recorded cross-PE message carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgKind {
    Weight,
    WeightVec,
    Decision,
    Request,
    Block,
}

/// Address of the coordinator in message records.
pub const COORDINATOR: u16 = u16::MAX;

/// One cross-PE message, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsgRecord {
    pub step: u32,
    /// Butterfly stage the message belongs to, if any.
    pub stage: Option<u8>,
    pub from: u16,
    pub to: u16,
    pub kind: MsgKind,
}

/// Coordinator-side ledger: counters always on, message trace optional.
#[derive(Debug)]
pub struct CommLedger {
    current: StepComm,
    per_step: Vec<StepComm>,
    started: bool,
    cur_step: u32,
    exchange_log: Vec<ExchangeRecord>,
    trace: Option<Vec<MsgRecord>>,
}

impl CommLedger {
    pub fn new(trace_messages: bool) -> Self {
        Self {
            current: StepComm::default(),
            per_step: Vec::new(),
            started: false,
            cur_step: 0,
            exchange_log: Vec::new(),
            trace: if trace_messages { Some(Vec::new()) } else { None },
        }
    }

    pub fn begin_step(&mut self, step: u32) {
        if self.started {
            self.per_step.push(self.current);
        }
        self.current = StepComm::default();
        self.cur_step = step;
        self.started = true;
    }

    pub fn step(&self) -> u32 {
        self.cur_step
    }

    pub fn record_msg(&mut self, stage: Option<u8>, from: u16, to: u16, kind: MsgKind) {
        if let Some(trace) = &mut self.trace {
            trace.push(MsgRecord {
                step: self.cur_step,
                stage,
                from,
                to,
                kind,
            });
        }
    }

    /// Charge one executed butterfly stage (island- or particle-level).
    pub fn charge_stage_round(&mut self) {
        self.current.stage_rounds += 1;
    }

    /// Charge one island-stage pair: the weight exchange, the outcome's
    /// payload, and the exchange-log row.
    pub fn charge_island_pair(
        &mut self,
        stage: u8,
        pair: u16,
        left: u16,
        right: u16,
        outcome: ExchangeOutcome,
        island_size: usize,
    ) {
        self.current.weight_msgs += 2;
        let payload = outcome_payload(outcome, island_size);
        self.current.payload_particles += payload;
        self.record_msg(Some(stage), left, right, MsgKind::Weight);
        self.record_msg(Some(stage), right, left, MsgKind::Weight);
        self.record_msg(Some(stage), left, right, MsgKind::Decision);
        self.record_msg(Some(stage), right, left, MsgKind::Decision);
        match outcome {
            ExchangeOutcome::CopyLeftToRight => {
                self.record_msg(Some(stage), left, right, MsgKind::Block)
            }
            ExchangeOutcome::CopyRightToLeft => {
                self.record_msg(Some(stage), right, left, MsgKind::Block)
            }
            ExchangeOutcome::Swap => {
                self.record_msg(Some(stage), left, right, MsgKind::Block);
                self.record_msg(Some(stage), right, left, MsgKind::Block);
            }
            ExchangeOutcome::KeepKeep | ExchangeOutcome::SwapAvoided => {}
        }
        self.exchange_log.push(ExchangeRecord {
            step: self.cur_step,
            stage,
            pair,
            outcome,
            payload_particles: payload,
        });
    }

    /// Charge one particle-level butterfly pair: the weight traffic for the
    /// stage plus the cross-island draws of both sides.
    pub fn charge_aug_pair(
        &mut self,
        stage: u8,
        left: u16,
        right: u16,
        island_size: usize,
        cross_payload: u64,
    ) {
        let (kind, scalars) = if stage == 1 {
            (MsgKind::WeightVec, 2 * island_size as u64)
        } else {
            (MsgKind::Weight, 2)
        };
        self.current.weight_msgs += scalars;
        self.current.payload_particles += cross_payload;
        self.record_msg(Some(stage), left, right, kind);
        self.record_msg(Some(stage), right, left, kind);
        self.record_msg(Some(stage), left, right, MsgKind::Request);
        self.record_msg(Some(stage), right, left, MsgKind::Request);
        if cross_payload > 0 {
            self.record_msg(Some(stage), left, right, MsgKind::Block);
            self.record_msg(Some(stage), right, left, MsgKind::Block);
        }
    }

    /// Charge a global weight gather: one scalar per particle. A single PE
    /// already owns everything, so nothing is charged at m = 1.
    pub fn charge_global_gather(&mut self, m: usize, island_size: usize) {
        if m < 2 {
            return;
        }
        self.current.weight_msgs += (m * island_size) as u64;
        for pe in 0..m {
            self.record_msg(None, pe as u16, COORDINATOR, MsgKind::WeightVec);
        }
    }

    /// Charge a global resampling draw's cross-island copies.
    pub fn charge_global_payload(&mut self, payload: u64) {
        self.current.payload_particles += payload;
    }

    /// Charge the island-weight gather of an IPF between-island round.
    pub fn charge_island_weight_round(&mut self, m: usize) {
        self.current.weight_msgs += m as u64;
        for pe in 0..m {
            self.record_msg(None, pe as u16, COORDINATOR, MsgKind::Weight);
        }
    }

    /// Charge one island adoption during an IPF between-island round.
    pub fn charge_island_adoption(&mut self, from: u16, to: u16, island_size: usize) {
        self.current.payload_particles += island_size as u64;
        self.record_msg(None, from, to, MsgKind::Block);
    }

    pub fn finish(mut self) -> (CommStats, Vec<ExchangeRecord>, Option<Vec<MsgRecord>>) {
        if self.started {
            self.per_step.push(self.current);
        }
        let mut totals = StepComm::default();
        for s in &self.per_step {
            totals.add(s);
        }
        (
            CommStats {
                totals,
                per_step: self.per_step,
            },
            self.exchange_log,
            self.trace,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_step_breakdown_sums_to_totals() {
        let mut ledger = CommLedger::new(false);
        ledger.begin_step(0);
        ledger.charge_stage_round();
        ledger.charge_island_pair(1, 0, 0, 1, ExchangeOutcome::Swap, 3);
        ledger.begin_step(1);
        ledger.charge_island_pair(1, 0, 0, 1, ExchangeOutcome::KeepKeep, 3);
        let (stats, log, trace) = ledger.finish();
        assert_eq!(stats.per_step.len(), 2);
        assert_eq!(stats.per_step[0].payload_particles, 6);
        assert_eq!(stats.per_step[1].payload_particles, 0);
        assert_eq!(stats.totals.weight_msgs, 4);
        assert_eq!(stats.totals.stage_rounds, 1);
        assert_eq!(log.len(), 2);
        assert!(trace.is_none());
    }

    #[test]
    fn message_trace_tags_stages() {
        let mut ledger = CommLedger::new(true);
        ledger.begin_step(0);
        ledger.charge_island_pair(2, 1, 4, 6, ExchangeOutcome::CopyLeftToRight, 2);
        let (_, _, trace) = ledger.finish();
        let trace = trace.unwrap();
        assert!(trace.iter().all(|m| m.stage == Some(2)));
        assert!(trace
            .iter()
            .all(|m| (m.from, m.to) == (4, 6) || (m.from, m.to) == (6, 4)));
    }
}
