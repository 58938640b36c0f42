//! Controller and node state, control payloads, flowtables and the epoch
//! driver.

mod opportunity;
mod world;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apb::PhaseKind;
use crate::flood::{FloodPacket, NodeFlags};
use crate::medium::Channel;
use crate::{Error, Micros, NodeId, Result};

pub use world::{
    EpochResult, ExchangeStats, OpportunityRecord, ParticipantMode, World, WorldConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpportunityKind {
    None,
    Collect,
    Configure,
    React,
    Associate,
}

impl OpportunityKind {
    pub const ALL: [OpportunityKind; 5] = [
        OpportunityKind::None,
        OpportunityKind::Collect,
        OpportunityKind::Configure,
        OpportunityKind::React,
        OpportunityKind::Associate,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpportunityKind::None => "none",
            OpportunityKind::Collect => "collect",
            OpportunityKind::Configure => "configure",
            OpportunityKind::React => "react",
            OpportunityKind::Associate => "associate",
        }
    }
}

impl fmt::Display for OpportunityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpportunityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown opportunity kind {s:?}")))
    }
}

/// Match/action content of a flowtable entry as carried on the air.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntrySpec {
    pub entry_id: u16,
    #[serde(rename = "match")]
    pub match_bytes: Vec<u8>,
    pub action: Vec<u8>,
}

impl EntrySpec {
    /// `[entry_id u16][match_len u8][match][action_len u8][action]`
    pub fn encode(&self) -> Result<Vec<u8>> {
        let ml = u8::try_from(self.match_bytes.len()).map_err(|_| Error::Packet("match too long".into()))?;
        let al = u8::try_from(self.action.len()).map_err(|_| Error::Packet("action too long".into()))?;
        let mut out = self.entry_id.to_le_bytes().to_vec();
        out.push(ml);
        out.extend_from_slice(&self.match_bytes);
        out.push(al);
        out.extend_from_slice(&self.action);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Packet("truncated flowtable entry".into());
        let id = u16::from_le_bytes([*bytes.first().ok_or_else(short)?, *bytes.get(1).ok_or_else(short)?]);
        let ml = usize::from(*bytes.get(2).ok_or_else(short)?);
        let m = bytes.get(3..3 + ml).ok_or_else(short)?;
        let al = usize::from(*bytes.get(3 + ml).ok_or_else(short)?);
        let a = bytes.get(4 + ml..4 + ml + al).ok_or_else(short)?;
        Ok(EntrySpec { entry_id: id, match_bytes: m.to_vec(), action: a.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub spec: EntrySpec,
    pub installed_at: Micros,
    pub lifetime: Micros,
}

impl FlowEntry {
    pub fn expired(&self, now: Micros) -> bool {
        self.installed_at + self.lifetime < now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intent {
    Report,
    Solicit,
    Alert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSdnState {
    pub node_id: NodeId,
    pub synced: bool,
    pub epoch_seq_local: u16,
    pub flowtable: Vec<FlowEntry>,
    pub pending: Option<Intent>,
    /// Last time the local clock was aligned to a flood reference.
    pub last_sync: Micros,
    /// Constant clock rate error.
    pub drift_ppm: f64,
    /// Channel listened on while unsynchronized.
    pub parked_channel: Channel,
    pub boot_time: Micros,
}

impl NodeSdnState {
    pub fn new(node_id: NodeId, parked_channel: Channel) -> Self {
        NodeSdnState {
            node_id,
            synced: true,
            epoch_seq_local: 0,
            flowtable: Vec::new(),
            pending: None,
            last_sync: 0,
            drift_ppm: 0.0,
            parked_channel,
            boot_time: 0,
        }
    }

    /// Installs or replaces (same entry id) a flowtable entry.
    pub fn install(&mut self, spec: EntrySpec, now: Micros, lifetime: Micros) {
        self.flowtable.retain(|e| e.spec.entry_id != spec.entry_id);
        self.flowtable.push(FlowEntry { spec, installed_at: now, lifetime });
    }

    /// Local clock error accumulated since the last synchronization.
    pub fn clock_error_ns(&self, now: Micros) -> i64 {
        (self.drift_ppm * now.saturating_sub(self.last_sync) as f64 / 1000.0).round() as i64
    }

    pub fn resync(&mut self, now: Micros, epoch_seq: u16) {
        self.synced = true;
        self.last_sync = now;
        self.epoch_seq_local = epoch_seq;
    }
}

/// Removes flowtable entries with `installed_at + lifetime < now`.
pub fn expire_flowtables(node: &mut NodeSdnState, now: Micros) -> usize {
    let before = node.flowtable.len();
    node.flowtable.retain(|e| !e.expired(now));
    before - node.flowtable.len()
}

/// Marks `node` as wanting controller instruction; the solicit goes out in
/// the next reaction opportunity.
pub fn node_react(node: &mut NodeSdnState) -> Option<Intent> {
    if node.synced && node.pending.is_none() {
        node.pending = Some(Intent::Solicit);
    }
    node.pending
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpportunityPolicy {
    /// Cycles through the list forever.
    RoundRobin(Vec<OpportunityKind>),
    /// Pops one kind per epoch; `none` once exhausted.
    Queue(VecDeque<OpportunityKind>),
}

impl Default for OpportunityPolicy {
    fn default() -> Self {
        OpportunityPolicy::RoundRobin(vec![
            OpportunityKind::Collect,
            OpportunityKind::Configure,
            OpportunityKind::React,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegistryEntry {
    pub last_report: Option<Micros>,
    /// Deployed nodes are known up front; cold-booting nodes become known
    /// when their first report is acknowledged.
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub node_id: NodeId,
    pub epoch_seq: u16,
    pub registry: Vec<RegistryEntry>,
    pub policy: OpportunityPolicy,
    rr_next: usize,
    pub collect_period: Micros,
    pub flowtable_lifetime: Micros,
    /// Newly known nodes waiting for a BOOT phase.
    pub boot_queue: Vec<NodeId>,
    pub next_entry_id: u16,
}

impl ControllerState {
    pub fn new(node_id: NodeId, network_size: usize, policy: OpportunityPolicy, collect_period: Micros, flowtable_lifetime: Micros) -> Self {
        ControllerState {
            node_id,
            epoch_seq: 0,
            registry: vec![RegistryEntry { last_report: None, known: true }; network_size],
            policy,
            rr_next: 0,
            collect_period,
            flowtable_lifetime,
            boot_queue: Vec::new(),
            next_entry_id: 1,
        }
    }

    /// Kind for the coming epoch. Pending boots take precedence over the
    /// policy.
    pub fn select_kind(&mut self) -> OpportunityKind {
        if !self.boot_queue.is_empty() {
            return OpportunityKind::Associate;
        }
        match &mut self.policy {
            OpportunityPolicy::RoundRobin(kinds) if !kinds.is_empty() => {
                let k = kinds[self.rr_next % kinds.len()];
                self.rr_next += 1;
                k
            }
            OpportunityPolicy::RoundRobin(_) => OpportunityKind::None,
            OpportunityPolicy::Queue(q) => q.pop_front().unwrap_or(OpportunityKind::None),
        }
    }

    /// Nodes whose last report is at least one collect period old, or that
    /// never reported.
    pub fn due_for_collect(&self, now: Micros) -> Vec<NodeId> {
        self.registry
            .iter()
            .enumerate()
            .filter(|&(i, r)| {
                i != usize::from(self.node_id)
                    && r.last_report.is_none_or(|t| now.saturating_sub(t) >= self.collect_period)
            })
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    pub fn allocate_entry_id(&mut self) -> u16 {
        let id = self.next_entry_id;
        self.next_entry_id = self.next_entry_id.wrapping_add(1).max(1);
        id
    }
}

/// Content of the indicator flood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndPayload {
    pub kind: OpportunityKind,
    pub epoch_seq: u16,
    /// Worst-case number of phases after IND.
    pub phase_count: u16,
    pub role_flags: NodeFlags,
}

impl IndPayload {
    pub fn to_packet(&self) -> FloodPacket {
        let mut payload = vec![self.kind.code()];
        payload.extend_from_slice(&self.phase_count.to_le_bytes());
        FloodPacket::new(PhaseKind::Ind, self.epoch_seq, self.role_flags.clone(), payload)
    }

    pub fn from_packet(p: &FloodPacket) -> Result<Self> {
        if p.phase != PhaseKind::Ind || p.payload.len() != 3 {
            return Err(Error::Packet("not an indicator packet".into()));
        }
        let kind = OpportunityKind::from_code(p.payload[0])
            .ok_or_else(|| Error::Packet(format!("unknown opportunity code {}", p.payload[0])))?;
        Ok(IndPayload {
            kind,
            epoch_seq: p.epoch_seq,
            phase_count: u16::from_le_bytes([p.payload[1], p.payload[2]]),
            role_flags: p.flags.clone(),
        })
    }
}

/// State report carried in REPORT floods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportPayload {
    pub node_id: NodeId,
    pub rdc_millipercent: u32,
    pub flowtable_count: u16,
    pub uptime_s: u32,
}

impl ReportPayload {
    pub const LEN: usize = 12;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.rdc_millipercent.to_le_bytes());
        out.extend_from_slice(&self.flowtable_count.to_le_bytes());
        out.extend_from_slice(&self.uptime_s.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < Self::LEN {
            return Err(Error::Packet("truncated report".into()));
        }
        Ok(ReportPayload {
            node_id: u16::from_le_bytes([b[0], b[1]]),
            rdc_millipercent: u32::from_le_bytes([b[2], b[3], b[4], b[5]]),
            flowtable_count: u16::from_le_bytes([b[6], b[7]]),
            uptime_s: u32::from_le_bytes([b[8], b[9], b[10], b[11]]),
        })
    }
}

/// Controller answer in the dedicated phase of a pair. The packet flags carry
/// the cumulative set of acknowledged sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckPayload {
    /// Source answered in this pair; `None` for a NACK.
    pub target: Option<NodeId>,
    /// Empty shared phases so far; rotates the contention order.
    pub skips: u16,
    pub body: Vec<u8>,
}

impl AckPayload {
    const NO_TARGET: u16 = u16::MAX;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.target.unwrap_or(Self::NO_TARGET).to_le_bytes().to_vec();
        out.extend_from_slice(&self.skips.to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < 4 {
            return Err(Error::Packet("truncated ack".into()));
        }
        let t = u16::from_le_bytes([b[0], b[1]]);
        Ok(AckPayload {
            target: (t != Self::NO_TARGET).then_some(t),
            skips: u16::from_le_bytes([b[2], b[3]]),
            body: b[4..].to_vec(),
        })
    }
}
