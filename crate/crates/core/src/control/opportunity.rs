//! Node and controller behaviour inside one opportunity.
//!
//! Shared phases are arbitrated by a contention order every node derives
//! from the IND flags and the epoch sequence number (a seeded permutation of
//! the flagged nodes): the candidate source is the `skips`-th (mod length)
//! node of that order not yet acknowledged, where both the acknowledged set and
//! `skips` come from the last controller answer the node heard. Only the
//! candidate initiates; the controller bumps `skips` after an empty shared
//! phase so that an unreachable candidate does not block the others.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::world::World;
use super::{AckPayload, EntrySpec, IndPayload, Intent, OpportunityKind, ReportPayload};
use crate::apb::{FloodShape, Phase, PhaseCtx, PhaseKind, PhaseLogic, PhasePlan, PhaseSchedule, PhaseVerdict};
use crate::flood::{idle_listen, run_flood, synchronize, FloodOutcome, FloodPacket, FloodRequest, FloodRole, HopSequence, NodeFlags};
use crate::{Micros, NodeId, Result};

#[derive(Debug, Clone)]
pub(super) enum Plan {
    None,
    Collect(Vec<NodeId>),
    Configure { groups: Vec<(Vec<NodeId>, EntrySpec)> },
    React(Vec<NodeId>),
    Associate(Vec<(NodeId, EntrySpec)>),
}

impl Plan {
    /// Shared: one SET per distinct entry. Otherwise one SET per target.
    pub fn configure(entries: Vec<(NodeId, EntrySpec)>, shared: bool) -> Plan {
        let mut groups: Vec<(Vec<NodeId>, EntrySpec)> = Vec::new();
        for (v, e) in entries {
            match groups.iter_mut().find(|(_, g)| shared && *g == e) {
                Some((targets, _)) => targets.push(v),
                None => groups.push((vec![v], e)),
            }
        }
        Plan::Configure { groups }
    }

    pub fn kind(&self) -> OpportunityKind {
        match self {
            Plan::None => OpportunityKind::None,
            Plan::Collect(_) => OpportunityKind::Collect,
            Plan::Configure { .. } => OpportunityKind::Configure,
            Plan::React(_) => OpportunityKind::React,
            Plan::Associate(_) => OpportunityKind::Associate,
        }
    }

    pub fn participants(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = match self {
            Plan::None => Vec::new(),
            Plan::Collect(p) | Plan::React(p) => p.clone(),
            Plan::Configure { groups } => groups.iter().flat_map(|(t, _)| t.iter().copied()).collect(),
            Plan::Associate(e) => e.iter().map(|(v, _)| *v).collect(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    fn groups(&self) -> Vec<(Vec<NodeId>, EntrySpec)> {
        match self {
            Plan::Configure { groups } => groups.clone(),
            Plan::Associate(e) => e.iter().map(|(v, s)| (vec![*v], s.clone())).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
struct NodeOpp {
    got_ind: bool,
    acked_view: NodeFlags,
    skips_view: u16,
    done: bool,
    nack_streak: u8,
    quiet_pairs: u8,
    heard: bool,
    completed: bool,
}

pub(super) struct OpportunityExec<'w> {
    w: &'w mut World,
    kind: OpportunityKind,
    flags: NodeFlags,
    order: Vec<NodeId>,
    seq: u16,
    hop: HopSequence,
    ind: FloodPacket,
    groups: Vec<(Vec<NodeId>, EntrySpec)>,
    nodes: Vec<NodeOpp>,
    acked: NodeFlags,
    skips: u16,
    answer: Option<NodeId>,
    completions: Vec<(NodeId, Micros)>,
}

/// Consecutive NACKs (or silent pairs) after which a node leaves the
/// opportunity.
const LEAVE_AFTER: u8 = 2;

impl<'w> OpportunityExec<'w> {
    pub fn new(
        w: &'w mut World,
        plan: Plan,
        flags: NodeFlags,
        schedule: &PhaseSchedule,
        seq: u16,
        hop: HopSequence,
    ) -> Self {
        let n = w.nodes.len();
        let phase_count = schedule.expanded().len().saturating_sub(1);
        let ind = IndPayload {
            kind: plan.kind(),
            epoch_seq: seq,
            phase_count: u16::try_from(phase_count).unwrap_or(u16::MAX),
            role_flags: flags.clone(),
        }
        .to_packet();
        let node = NodeOpp {
            got_ind: false,
            acked_view: NodeFlags::new(n),
            skips_view: 0,
            done: false,
            nack_streak: 0,
            quiet_pairs: 0,
            heard: false,
            completed: false,
        };
        let mut order: Vec<NodeId> = flags.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(0x6f72_6400 ^ u64::from(seq)));
        OpportunityExec {
            kind: plan.kind(),
            order,
            groups: plan.groups(),
            w,
            flags,
            seq,
            hop,
            ind,
            nodes: vec![node; n],
            acked: NodeFlags::new(n),
            skips: 0,
            answer: None,
            completions: Vec::new(),
        }
    }

    /// Nodes that completed their exchange, with the completion time.
    pub fn finish(self) -> Vec<(NodeId, Micros)> {
        self.completions
    }

    fn controller(&self) -> usize {
        usize::from(self.w.controller.node_id)
    }

    fn wants_to_send(&self, v: usize) -> bool {
        let intent = match self.kind {
            OpportunityKind::Collect => Intent::Report,
            OpportunityKind::React => Intent::Solicit,
            _ => return false,
        };
        self.flags.contains(v as NodeId) && !self.nodes[v].completed && self.w.nodes[v].pending == Some(intent)
    }

    fn source_packet(&self, v: usize, kind: PhaseKind, now: Micros) -> FloodPacket {
        let node = &self.w.nodes[v];
        let payload = match self.kind {
            OpportunityKind::Collect => ReportPayload {
                node_id: v as NodeId,
                rdc_millipercent: if now == 0 {
                    0
                } else {
                    (u128::from(self.w.radio_on[v]) * 100_000 / u128::from(now)) as u32
                },
                flowtable_count: node.flowtable.len() as u16,
                uptime_s: (now.saturating_sub(node.boot_time) / 1_000_000) as u32,
            }
            .encode(),
            _ => {
                let mut p = (v as NodeId).to_le_bytes().to_vec();
                p.extend_from_slice(&node.flowtable.len().min(usize::from(u16::MAX)).to_le_bytes()[..2]);
                p
            }
        };
        FloodPacket::new(kind, self.seq, NodeFlags::new(0), payload)
    }

    fn answer_packet(&mut self, phase: &Phase) -> Result<FloodPacket> {
        let body = match (self.kind, self.answer) {
            (OpportunityKind::React, Some(t)) => self.w.entry_for(t).encode()?,
            _ => Vec::new(),
        };
        let kind = if self.answer.is_some() { phase.kind } else { PhaseKind::Nack };
        let ack = AckPayload { target: self.answer, skips: self.skips, body };
        Ok(FloodPacket::new(kind, self.seq, self.acked.clone(), ack.encode()))
    }

    fn candidate(&self, v: usize) -> Option<NodeId> {
        let view = &self.nodes[v];
        let believed: Vec<NodeId> = self.order.iter().copied().filter(|&u| !view.acked_view.contains(u)).collect();
        if believed.is_empty() {
            return None;
        }
        Some(believed[usize::from(view.skips_view) % believed.len()])
    }
}

impl PhaseLogic for OpportunityExec<'_> {
    fn pre(&mut self, phase: &Phase, ctx: &PhaseCtx) -> Result<PhasePlan> {
        let n = self.w.nodes.len();
        let c = self.controller();
        let mut roles = vec![FloodRole::Sleeper; n];
        let mut packets = BTreeMap::new();
        let active = |s: &Self, v: usize| v != c && s.nodes[v].got_ind && !s.nodes[v].done;

        if phase.kind == PhaseKind::Ind {
            roles[c] = FloodRole::Initiator;
            packets.insert(c as NodeId, self.ind.clone());
            for v in (0..n).filter(|&v| v != c && self.w.nodes[v].synced) {
                roles[v] = FloodRole::Forwarder;
            }
        } else if ctx.repeat.is_none() {
            let (targets, entry) = &self.groups[ctx.seq - 1];
            let flags = NodeFlags::from_nodes(n, targets.iter().copied());
            roles[c] = FloodRole::Initiator;
            packets.insert(c as NodeId, FloodPacket::new(phase.kind, self.seq, flags, entry.encode()?));
            for v in (0..n).filter(|&v| active(self, v)) {
                roles[v] = FloodRole::Forwarder;
            }
        } else if phase.shape == FloodShape::Shared {
            roles[c] = FloodRole::Destination;
            for v in (0..n).filter(|&v| active(self, v)) {
                roles[v] = match self.candidate(v) {
                    None => FloodRole::Sleeper,
                    Some(cand) if usize::from(cand) == v && self.wants_to_send(v) => {
                        packets.insert(v as NodeId, self.source_packet(v, phase.kind, ctx.start));
                        FloodRole::Initiator
                    }
                    Some(_) => FloodRole::Forwarder,
                };
            }
        } else {
            roles[c] = FloodRole::Initiator;
            packets.insert(c as NodeId, self.answer_packet(phase)?);
            for v in (0..n).filter(|&v| active(self, v)) {
                roles[v] = FloodRole::Forwarder;
            }
        }
        Ok(PhasePlan { roles, packets })
    }

    fn flood(&mut self, phase: &Phase, ctx: &PhaseCtx, plan: &PhasePlan) -> Result<FloodOutcome> {
        let c = self.controller();
        let w = &mut *self.w;
        let parked: Vec<_> = w
            .nodes
            .iter()
            .filter(|s| !s.synced && usize::from(s.node_id) != c)
            .map(|s| (s.node_id, s.parked_channel))
            .collect();
        let offsets: Vec<i64> = if phase.shape == FloodShape::Shared {
            w.nodes
                .iter()
                .enumerate()
                .map(|(v, s)| if plan.roles[v] == FloodRole::Initiator { s.clock_error_ns(ctx.start) } else { 0 })
                .collect()
        } else {
            Vec::new()
        };
        let trace_kind = match plan.packets.get(&(c as NodeId)) {
            Some(p) => p.phase,
            None => phase.kind,
        };
        let req = FloodRequest {
            config: phase.flood,
            phase: trace_kind,
            start: ctx.start,
            guard: phase.guard,
            roles: &plan.roles,
            packets: &plan.packets,
            hop: &self.hop,
            clock_offset_ns: &offsets,
            parked: &parked,
        };
        if plan.has_initiator() {
            run_flood(&req, &mut w.medium, &mut w.trace)
        } else {
            idle_listen(&req, &mut w.trace)
        }
    }

    fn idle(&mut self, phase: &Phase, ctx: &PhaseCtx, plan: &PhasePlan) -> Result<FloodOutcome> {
        self.flood(phase, ctx, plan)
    }

    fn post(&mut self, phase: &Phase, ctx: &PhaseCtx, plan: &PhasePlan, outcome: &FloodOutcome) -> Result<PhaseVerdict> {
        let n = self.w.nodes.len();
        let c = self.controller();
        let slot = phase.flood.slot_length();
        for (v, r) in outcome.nodes.iter().enumerate() {
            self.w.radio_on[v] += r.radio_on;
        }
        for a in &outcome.associations {
            self.w.mark_synced(a.node, a.rx_slot_start + slot, a.packet.epoch_seq);
        }
        let received = |v: usize| outcome.nodes[v].packet.as_ref().map(|p| (p, outcome.nodes[v].rx_time(slot).unwrap_or(ctx.start)));

        if phase.kind == PhaseKind::Ind {
            for v in (0..n).filter(|&v| v != c) {
                let Some((p, _)) = received(v) else { continue };
                let r = &outcome.nodes[v];
                self.nodes[v].got_ind = true;
                let reference = synchronize(r.rx_slot_start.unwrap_or(ctx.start), p.relay_counter, slot);
                self.w.nodes[v].resync(reference, p.epoch_seq);
                if self.kind == OpportunityKind::Collect && self.flags.contains(v as NodeId) && self.w.nodes[v].pending.is_none() {
                    self.w.nodes[v].pending = Some(Intent::Report);
                }
            }
            return Ok(PhaseVerdict::default());
        }

        if ctx.repeat.is_none() {
            let lifetime = self.w.controller.flowtable_lifetime;
            for v in (0..n).filter(|&v| v != c) {
                let Some((p, at)) = received(v) else { continue };
                if !p.flags.contains(v as NodeId) {
                    continue;
                }
                let entry = EntrySpec::decode(&p.payload)?;
                self.w.nodes[v].install(entry, at, lifetime);
                if self.kind == OpportunityKind::Configure && !self.nodes[v].completed {
                    self.nodes[v].completed = true;
                    self.completions.push((v as NodeId, at));
                }
            }
            return Ok(PhaseVerdict::default());
        }

        if phase.shape == FloodShape::Shared {
            for v in 0..n {
                self.nodes[v].heard = plan.roles[v] == FloodRole::Initiator || outcome.nodes[v].success();
            }
            self.answer = None;
            if let Some((p, at)) = received(c) {
                let src = u16::from_le_bytes([p.payload[0], p.payload[1]]);
                if self.kind == OpportunityKind::Collect {
                    let report = ReportPayload::decode(&p.payload)?;
                    let reg = &mut self.w.controller.registry[usize::from(report.node_id)];
                    reg.last_report = Some(at);
                    if !reg.known {
                        reg.known = true;
                        self.w.controller.boot_queue.push(report.node_id);
                    }
                }
                if self.flags.contains(src) {
                    self.acked.set(src);
                    self.answer = Some(src);
                }
            }
            let empty = self.answer.is_none();
            if empty {
                self.skips = self.skips.wrapping_add(1);
            }
            return Ok(PhaseVerdict { empty });
        }

        let lifetime = self.w.controller.flowtable_lifetime;
        for v in 0..n {
            if v == c || !self.nodes[v].got_ind || self.nodes[v].done {
                continue;
            }
            if let Some((p, at)) = received(v) {
                self.nodes[v].heard = true;
                let ack = AckPayload::decode(&p.payload)?;
                self.nodes[v].acked_view = p.flags.clone();
                self.nodes[v].skips_view = ack.skips;
                let me = v as NodeId;
                let answered = match self.kind {
                    OpportunityKind::Collect => ack.target == Some(me) || p.flags.contains(me),
                    _ => ack.target == Some(me),
                };
                if answered && self.wants_to_send(v) {
                    if self.kind == OpportunityKind::React {
                        self.w.nodes[v].install(EntrySpec::decode(&ack.body)?, at, lifetime);
                    }
                    self.w.nodes[v].pending = None;
                    self.nodes[v].completed = true;
                    self.completions.push((me, at));
                }
                self.nodes[v].nack_streak = if ack.target.is_none() { self.nodes[v].nack_streak + 1 } else { 0 };
            }
            let s = &mut self.nodes[v];
            s.quiet_pairs = if s.heard { 0 } else { s.quiet_pairs + 1 };
            s.heard = false;
            if s.nack_streak >= LEAVE_AFTER || s.quiet_pairs >= LEAVE_AFTER {
                s.done = true;
            }
        }
        Ok(PhaseVerdict::default())
    }
}
