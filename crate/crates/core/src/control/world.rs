use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::opportunity::{OpportunityExec, Plan};
use super::{
    expire_flowtables, node_react, ControllerState, EntrySpec, Intent, NodeSdnState,
    OpportunityKind, OpportunityPolicy,
};
use crate::apb::{
    build_association, build_collection, build_dissemination, build_reaction, execute_schedule,
    PhaseSchedule,
};
use crate::flood::{hop_sequence, NodeFlags};
use crate::medium::{CaptureModel, Channel, LossInjector, Medium, Topology};
use crate::rng::SeedTree;
use crate::timing::{
    collect_bound, configuration_bound, react_bound, EpochConfig, ProtocolTiming,
};
use crate::trace::Trace;
use crate::{Error, Micros, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticipantMode {
    /// One node per opportunity, rotating through the network.
    #[default]
    One,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub timing: ProtocolTiming,
    pub epoch: EpochConfig,
    pub capture: CaptureModel,
    pub drop_probability: f64,
    pub channel_pool: Vec<Channel>,
    pub association_channels: Vec<Channel>,
    /// Defaults to the node nearest the centroid.
    pub controller: Option<NodeId>,
    pub policy: OpportunityPolicy,
    pub collect_period: Micros,
    pub flowtable_lifetime: Micros,
    pub configure_targets: ParticipantMode,
    /// Identical configure entries share one SET phase.
    pub configure_shared: bool,
    /// Which nodes raise a solicit before each reaction opportunity.
    pub react_load: ParticipantMode,
    /// Opportunities of the same kind an exchange may span before it counts
    /// as failed. Configure exchanges are always one-shot.
    pub retry_limit: u32,
    pub drift_max_ppm: f64,
    /// Nodes that start unsynchronized and unknown to the controller.
    pub cold_boot: Vec<NodeId>,
    pub trace: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            timing: ProtocolTiming::default(),
            epoch: EpochConfig { period: 1_000_000, max_control: 1_000_000 },
            capture: CaptureModel::default(),
            drop_probability: 0.0,
            channel_pool: (0..16).collect(),
            association_channels: vec![2, 3],
            controller: None,
            policy: OpportunityPolicy::default(),
            collect_period: 60_000_000,
            flowtable_lifetime: 300_000_000,
            configure_targets: ParticipantMode::One,
            configure_shared: true,
            react_load: ParticipantMode::One,
            retry_limit: 16,
            drift_max_ppm: 0.0,
            cold_boot: Vec::new(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpportunityRecord {
    pub epoch: u16,
    pub start_us: Micros,
    pub kind: OpportunityKind,
    pub n_participants: usize,
    /// Phases actually run, IND included.
    pub phases: usize,
    /// Dedicated SET phases run (configure opportunities).
    pub set_phases: usize,
    pub span_us: Micros,
    pub bound_us: Micros,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochResult {
    pub record: OpportunityRecord,
    /// Time the epoch ends (start + span + sleep).
    pub next_start: Micros,
}

/// Per-node control exchange outcomes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    pub completed: u64,
    pub failed: u64,
    pub latencies: Vec<(OpportunityKind, Micros)>,
}

impl ExchangeStats {
    pub fn pdr(&self) -> Option<f64> {
        let total = self.completed + self.failed;
        (total > 0).then(|| self.completed as f64 / total as f64)
    }

    pub fn mean_latency(&self) -> Option<f64> {
        if self.latencies.is_empty() {
            return None;
        }
        Some(self.latencies.iter().map(|&(_, l)| l as f64).sum::<f64>() / self.latencies.len() as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) struct OpenExchange {
    pub opened_at: Micros,
    pub opportunities: u32,
}

/// One simulated network: medium, controller and node state machines.
#[derive(Debug)]
pub struct World {
    pub cfg: WorldConfig,
    pub medium: Medium,
    pub trace: Trace,
    pub controller: ControllerState,
    pub nodes: Vec<NodeSdnState>,
    pub(super) radio_on: Vec<Micros>,
    pub(super) unsynced_since: Vec<Option<Micros>>,
    pub(super) stats: Vec<ExchangeStats>,
    pub(super) open: Vec<BTreeMap<OpportunityKind, OpenExchange>>,
    pub opportunities: Vec<OpportunityRecord>,
    configure_cursor: usize,
    react_cursor: usize,
}

impl World {
    pub fn new(topology: Topology, cfg: WorldConfig, seed: u64) -> Result<Self> {
        let n = topology.len();
        if n == 0 {
            return Err(Error::Topology("empty topology".into()));
        }
        cfg.timing.validate()?;
        EpochConfig::new(cfg.epoch.period, cfg.epoch.max_control)?;
        // validates the channel pools
        hop_sequence(0, &cfg.channel_pool, &cfg.association_channels, 2)?;
        if cfg.retry_limit == 0 {
            return Err(Error::Config("retry_limit must be >= 1".into()));
        }
        if cfg.drift_max_ppm.is_nan() || cfg.drift_max_ppm < 0.0 {
            return Err(Error::Config(format!("drift_max_ppm must be >= 0, got {}", cfg.drift_max_ppm)));
        }
        let controller = cfg.controller.unwrap_or_else(|| topology.central_node());
        if usize::from(controller) >= n {
            return Err(Error::UnknownNode(controller));
        }
        for &v in &cfg.cold_boot {
            if usize::from(v) >= n {
                return Err(Error::UnknownNode(v));
            }
            if v == controller {
                return Err(Error::Config("the controller cannot cold boot".into()));
            }
        }

        let seeds = SeedTree::new(seed);
        let loss = LossInjector::new(cfg.drop_probability, seeds.stream("medium.loss"))?;
        let medium = Medium::new(topology, cfg.capture, loss, seeds.stream("medium.link"));
        let mut drift_rng = seeds.stream("drift");
        let assoc = &cfg.association_channels;
        let mut nodes: Vec<NodeSdnState> = (0..n)
            .map(|i| {
                let mut s = NodeSdnState::new(i as NodeId, assoc[i % assoc.len()]);
                if cfg.drift_max_ppm > 0.0 && i != usize::from(controller) {
                    s.drift_ppm = drift_rng.gen_range(-cfg.drift_max_ppm..=cfg.drift_max_ppm);
                }
                s
            })
            .collect();
        let mut ctrl = ControllerState::new(controller, n, cfg.policy.clone(), cfg.collect_period, cfg.flowtable_lifetime);
        let mut unsynced_since = vec![None; n];
        for &v in &cfg.cold_boot {
            nodes[usize::from(v)].synced = false;
            ctrl.registry[usize::from(v)].known = false;
            unsynced_since[usize::from(v)] = Some(0);
        }
        Ok(World {
            trace: if cfg.trace { Trace::enabled() } else { Trace::disabled() },
            cfg,
            medium,
            controller: ctrl,
            nodes,
            radio_on: vec![0; n],
            unsynced_since,
            stats: vec![ExchangeStats::default(); n],
            open: vec![BTreeMap::new(); n],
            opportunities: Vec::new(),
            configure_cursor: 0,
            react_cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn controller_id(&self) -> NodeId {
        self.controller.node_id
    }

    pub fn stats(&self) -> &[ExchangeStats] {
        &self.stats
    }

    /// Radio-on time so far, counting unsynchronized listening up to `now`.
    pub fn radio_on(&self, now: Micros) -> Vec<Micros> {
        self.radio_on
            .iter()
            .zip(&self.unsynced_since)
            .map(|(&r, u)| r + u.map_or(0, |t| now.saturating_sub(t)))
            .collect()
    }

    pub(super) fn mark_synced(&mut self, v: NodeId, at: Micros, epoch_seq: u16) {
        let i = usize::from(v);
        if let Some(t) = self.unsynced_since[i].take() {
            self.radio_on[i] += at.saturating_sub(t);
        }
        self.nodes[i].resync(at, epoch_seq);
    }

    fn desync(&mut self, v: usize, at: Micros) {
        self.nodes[v].synced = false;
        self.unsynced_since[v] = Some(at);
    }

    fn others(&self) -> impl Iterator<Item = NodeId> + '_ {
        let c = self.controller.node_id;
        (0..self.nodes.len() as NodeId).filter(move |&v| v != c)
    }

    fn rotate(&self, cursor: &mut usize) -> Option<NodeId> {
        let others: Vec<NodeId> = self.others().filter(|&v| self.controller.registry[usize::from(v)].known).collect();
        if others.is_empty() {
            return None;
        }
        let v = others[*cursor % others.len()];
        *cursor += 1;
        Some(v)
    }

    /// Distinct entry content for `target`.
    pub(super) fn entry_for(&mut self, target: NodeId) -> EntrySpec {
        let id = self.controller.allocate_entry_id();
        EntrySpec { entry_id: id, match_bytes: target.to_le_bytes().to_vec(), action: vec![0x01, id as u8] }
    }

    fn plan(&mut self, kind: OpportunityKind, now: Micros) -> Plan {
        match kind {
            OpportunityKind::None => Plan::None,
            OpportunityKind::Collect => Plan::Collect(self.controller.due_for_collect(now)),
            OpportunityKind::Configure => {
                let targets: Vec<NodeId> = match self.cfg.configure_targets {
                    ParticipantMode::One => {
                        let mut c = self.configure_cursor;
                        let t = self.rotate(&mut c);
                        self.configure_cursor = c;
                        t.into_iter().collect()
                    }
                    ParticipantMode::All => {
                        let reg = &self.controller.registry;
                        self.others().filter(|&v| reg[usize::from(v)].known).collect()
                    }
                };
                if targets.is_empty() {
                    return Plan::None;
                }
                let entries = if self.cfg.configure_shared {
                    let e = self.entry_for(targets[0]);
                    targets.iter().map(|&t| (t, e.clone())).collect()
                } else {
                    targets.iter().map(|&t| (t, self.entry_for(t))).collect()
                };
                Plan::configure(entries, self.cfg.configure_shared)
            }
            OpportunityKind::React => {
                match self.cfg.react_load {
                    ParticipantMode::One => {
                        let mut c = self.react_cursor;
                        if let Some(v) = self.rotate(&mut c) {
                            node_react(&mut self.nodes[usize::from(v)]);
                        }
                        self.react_cursor = c;
                    }
                    ParticipantMode::All => {
                        let others: Vec<NodeId> = self.others().collect();
                        for v in others {
                            node_react(&mut self.nodes[usize::from(v)]);
                        }
                    }
                }
                let pending = self
                    .others()
                    .filter(|&v| self.nodes[usize::from(v)].pending == Some(Intent::Solicit))
                    .collect();
                Plan::React(pending)
            }
            OpportunityKind::Associate => {
                let boots = std::mem::take(&mut self.controller.boot_queue);
                let entries = boots.into_iter().map(|v| (v, self.entry_for(v))).collect();
                Plan::Associate(entries)
            }
        }
    }

    fn schedule_for(&self, plan: &Plan) -> (PhaseSchedule, Micros) {
        let t = &self.cfg.timing;
        let pt = t.phase_timings();
        match plan {
            Plan::None => (build_dissemination(0, t), configuration_bound(0, &pt)),
            Plan::Collect(p) => (build_collection(p.len(), t), collect_bound(p.len() as u64, &pt)),
            Plan::React(p) => (build_reaction(p.len(), t), react_bound(p.len() as u64, &pt)),
            Plan::Configure { groups, .. } => {
                (build_dissemination(groups.len(), t), configuration_bound(groups.len() as u64, &pt))
            }
            Plan::Associate(e) => (build_association(e.len(), t), configuration_bound(e.len() as u64, &pt)),
        }
    }

    /// Runs one epoch starting at `start`: housekeeping, opportunity
    /// selection, the opportunity itself, and the epoch sequence increment.
    pub fn run_epoch(&mut self, start: Micros) -> Result<EpochResult> {
        self.housekeeping(start);
        let kind = self.controller.select_kind();
        let plan = self.plan(kind, start);
        self.execute(plan, start)
    }

    /// Runs a configure opportunity for explicit targets as this epoch's
    /// opportunity.
    pub fn configure_nodes(&mut self, start: Micros, targets: &[(NodeId, EntrySpec)], shared: bool) -> Result<EpochResult> {
        if targets.is_empty() {
            return Err(Error::Config("configure needs at least one target".into()));
        }
        if let Some(&(v, _)) = targets.iter().find(|(v, _)| usize::from(*v) >= self.nodes.len()) {
            return Err(Error::UnknownNode(v));
        }
        self.housekeeping(start);
        self.execute(Plan::configure(targets.to_vec(), shared), start)
    }

    fn housekeeping(&mut self, start: Micros) {
        let guard_ns = (self.cfg.timing.guard * 1000) as i64;
        let c = usize::from(self.controller.node_id);
        for v in 0..self.nodes.len() {
            expire_flowtables(&mut self.nodes[v], start);
            if v != c && self.nodes[v].synced && self.nodes[v].clock_error_ns(start).abs() > guard_ns {
                self.desync(v, start);
            }
        }
    }

    fn execute(&mut self, plan: Plan, start: Micros) -> Result<EpochResult> {
        let (schedule, bound) = self.schedule_for(&plan);
        let seq = self.controller.epoch_seq;
        let len = usize::from(self.cfg.timing.max_slots()).max(2).next_multiple_of(2);
        let hop = hop_sequence(seq, &self.cfg.channel_pool, &self.cfg.association_channels, len)?;
        let kind = plan.kind();
        let participants = plan.participants();
        for &v in &participants {
            self.open[usize::from(v)]
                .entry(kind)
                .or_insert(OpenExchange { opened_at: start, opportunities: 0 });
        }
        let flags = NodeFlags::from_nodes(self.nodes.len(), participants.iter().copied());
        let max_control = self.cfg.epoch.max_control;

        let mut exec = OpportunityExec::new(self, plan, flags, &schedule, seq, hop);
        let run = execute_schedule(&schedule, start, max_control, &mut exec)?;
        let completions = exec.finish();

        let mut done = vec![false; self.nodes.len()];
        for (v, at) in completions {
            let i = usize::from(v);
            if let Some(x) = self.open[i].remove(&kind) {
                self.stats[i].completed += 1;
                self.stats[i].latencies.push((kind, at - x.opened_at));
                done[i] = true;
            }
        }
        if kind != OpportunityKind::None && kind != OpportunityKind::Associate {
            for (i, _) in done.iter().enumerate().filter(|(_, &d)| !d) {
                if let Some(x) = self.open[i].get_mut(&kind) {
                    x.opportunities += 1;
                    if kind == OpportunityKind::Configure || x.opportunities >= self.cfg.retry_limit {
                        self.open[i].remove(&kind);
                        self.stats[i].failed += 1;
                    }
                }
            }
        }

        for n in self.nodes.iter_mut().filter(|n| n.synced) {
            n.epoch_seq_local = seq.wrapping_add(1);
        }
        self.controller.epoch_seq = seq.wrapping_add(1);

        let set_phases = run
            .phases
            .iter()
            .filter(|p| p.kind == crate::apb::PhaseKind::Set && p.repeat.is_none())
            .count();
        let record = OpportunityRecord {
            epoch: seq,
            start_us: start,
            kind,
            n_participants: participants.len(),
            phases: run.phases.len(),
            set_phases,
            span_us: run.span,
            bound_us: bound,
            complete: run.complete,
        };
        self.opportunities.push(record.clone());
        let sleep = self.cfg.epoch.period.saturating_sub(run.span);
        Ok(EpochResult { next_start: start + run.span + sleep, record })
    }
}
