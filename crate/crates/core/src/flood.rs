//! Synchronous flood primitive.
//!
//! A flood is `max_slots` back-to-back slots. Initiators transmit in slots
//! `0..max_tx`; every other participant listens until its first successful
//! reception in slot `s`, then relays in slots `s+1..` up to `max_tx` times
//! (never past the last slot) and turns its radio off. The relay counter of a
//! packet sent in slot `s` is `s`, which lets a receiver recover the flood
//! reference time. All participants hop to `hop.channel(s)` in slot `s`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apb::PhaseKind;
use crate::medium::{payload_digest, Channel, Medium, Reception, Transmission};
use crate::timing::FloodConfig;
use crate::trace::{RadioEvent, Trace, TraceRecord};
use crate::{Error, Micros, NodeId, Result};

/// One bit per node, node `i` at bit `i % 8` of byte `i / 8`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeFlags {
    bits: Vec<u8>,
}

impl NodeFlags {
    pub fn new(network_size: usize) -> Self {
        NodeFlags { bits: vec![0; network_size.div_ceil(8)] }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        NodeFlags { bits: bytes.to_vec() }
    }

    pub fn from_nodes(network_size: usize, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut f = NodeFlags::new(network_size);
        for n in nodes {
            f.set(n);
        }
        f
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn byte_len(&self) -> usize {
        self.bits.len()
    }

    pub fn set(&mut self, node: NodeId) {
        let i = usize::from(node);
        if let Some(b) = self.bits.get_mut(i / 8) {
            *b |= 1 << (i % 8);
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        let i = usize::from(node);
        self.bits.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0)
    }

    pub fn union_with(&mut self, other: &NodeFlags) {
        if other.bits.len() > self.bits.len() {
            self.bits.resize(other.bits.len(), 0);
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.bits.iter().enumerate().flat_map(|(byte, b)| {
            (0..8).filter(move |bit| b & (1 << bit) != 0).map(move |bit| (byte * 8 + bit) as NodeId)
        })
    }
}

/// Flood packet; see [`FloodPacket::encode`] for the wire layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodPacket {
    pub relay_counter: u8,
    pub phase: PhaseKind,
    pub epoch_seq: u16,
    pub flags: NodeFlags,
    pub payload: Vec<u8>,
}

impl FloodPacket {
    pub fn new(phase: PhaseKind, epoch_seq: u16, flags: NodeFlags, payload: Vec<u8>) -> Self {
        FloodPacket { relay_counter: 0, phase, epoch_seq, flags, payload }
    }

    /// Little-endian wire layout:
    /// `[relay_counter u8][phase u8][epoch_seq u16][flags_len u8][flags][payload_len u8][payload]`.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let flags_len = u8::try_from(self.flags.byte_len())
            .map_err(|_| Error::Packet(format!("flags too long: {}", self.flags.byte_len())))?;
        let payload_len = u8::try_from(self.payload.len())
            .map_err(|_| Error::Packet(format!("payload too long: {}", self.payload.len())))?;
        let mut out = Vec::with_capacity(6 + self.flags.byte_len() + self.payload.len());
        out.push(self.relay_counter);
        out.push(self.phase.code());
        out.extend_from_slice(&self.epoch_seq.to_le_bytes());
        out.push(flags_len);
        out.extend_from_slice(self.flags.as_bytes());
        out.push(payload_len);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Packet(format!("truncated packet ({} bytes)", bytes.len()));
        if bytes.len() < 5 {
            return Err(short());
        }
        let phase = PhaseKind::from_code(bytes[1])
            .ok_or_else(|| Error::Packet(format!("unknown phase code {}", bytes[1])))?;
        let epoch_seq = u16::from_le_bytes([bytes[2], bytes[3]]);
        let flags_len = usize::from(bytes[4]);
        let flags = bytes.get(5..5 + flags_len).ok_or_else(short)?;
        let payload_len = usize::from(*bytes.get(5 + flags_len).ok_or_else(short)?);
        let start = 6 + flags_len;
        let payload = bytes.get(start..start + payload_len).ok_or_else(short)?;
        if bytes.len() != start + payload_len {
            return Err(Error::Packet("trailing bytes".into()));
        }
        Ok(FloodPacket {
            relay_counter: bytes[0],
            phase,
            epoch_seq,
            flags: NodeFlags::from_bytes(flags),
            payload: payload.to_vec(),
        })
    }
}

/// Digest of an encoded packet, skipping the relay counter byte so that
/// relays from different hops still match as the same data.
pub fn content_digest(encoded: &[u8]) -> u64 {
    payload_digest(encoded.get(1..).unwrap_or(&[]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloodRole {
    Initiator,
    Forwarder,
    Destination,
    Sleeper,
}

impl FloodRole {
    fn listens(self) -> bool {
        matches!(self, FloodRole::Forwarder | FloodRole::Destination)
    }
}

/// Per-slot channel plan of an epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopSequence {
    pub seed: u16,
    pub channels: Vec<Channel>,
    pub association_channels: Vec<Channel>,
}

impl HopSequence {
    pub fn channel(&self, slot: u16) -> Channel {
        self.channels[usize::from(slot) % self.channels.len()]
    }
}

/// Even slots draw pseudo-randomly from `channel_pool` (seeded by the epoch
/// sequence number); odd slots cycle through the association channels.
pub fn hop_sequence(
    epoch_seq: u16,
    channel_pool: &[Channel],
    association_channels: &[Channel],
    length: usize,
) -> Result<HopSequence> {
    if channel_pool.is_empty() || association_channels.is_empty() {
        return Err(Error::Config("channel pool and association channels must be non-empty".into()));
    }
    if let Some(c) = association_channels.iter().find(|c| !channel_pool.contains(c)) {
        return Err(Error::Config(format!("association channel {c} not in the channel pool")));
    }
    if length < 2 {
        return Err(Error::Config(format!("hop sequence length must be >= 2, got {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x686f_7000 ^ u64::from(epoch_seq));
    let channels = (0..length)
        .map(|i| {
            if i % 2 == 1 {
                association_channels[(i / 2) % association_channels.len()]
            } else {
                channel_pool[rng.gen_range(0..channel_pool.len())]
            }
        })
        .collect();
    Ok(HopSequence {
        seed: epoch_seq,
        channels,
        association_channels: association_channels.to_vec(),
    })
}

/// Flood reference time recovered from a reception that started at
/// `rx_time` carrying `relay_counter`.
pub fn synchronize(rx_time: Micros, relay_counter: u8, slot_len: Micros) -> Micros {
    rx_time.saturating_sub(Micros::from(relay_counter) * slot_len)
}

/// Everything one flood needs besides the medium.
#[derive(Debug, Clone, Copy)]
pub struct FloodRequest<'a> {
    pub config: FloodConfig,
    pub phase: PhaseKind,
    /// Reference time: start of slot 0.
    pub start: Micros,
    /// Receivers open their radio this early.
    pub guard: Micros,
    /// Indexed by node id; must cover every node of the topology.
    pub roles: &'a [FloodRole],
    pub packets: &'a BTreeMap<NodeId, FloodPacket>,
    pub hop: &'a HopSequence,
    /// Per-node transmit start offset in nanoseconds (clock error of
    /// initiators); empty means all zero.
    pub clock_offset_ns: &'a [i64],
    /// Unsynchronized nodes parked on one channel, listening for any flood.
    pub parked: &'a [(NodeId, Channel)],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeFloodResult {
    /// Slot count at which the node first held the packet: a node that
    /// decodes the slot-`s` transmission holds it at `s + 1`, so in a
    /// lossless flood this equals the hop distance from the initiator.
    pub first_rx_slot: Option<u16>,
    /// Start of the slot in which the packet was first received.
    pub rx_slot_start: Option<Micros>,
    pub packet: Option<FloodPacket>,
    pub tx_count: u16,
    pub radio_on: Micros,
}

impl NodeFloodResult {
    pub fn success(&self) -> bool {
        self.packet.is_some()
    }

    /// End of the slot in which the packet arrived.
    pub fn rx_time(&self, slot_len: Micros) -> Option<Micros> {
        self.rx_slot_start.map(|t| t + slot_len)
    }
}

/// A parked node that synchronized during this flood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    pub node: NodeId,
    pub reference: Micros,
    pub packet: FloodPacket,
    pub rx_slot_start: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodOutcome {
    pub nodes: Vec<NodeFloodResult>,
    pub associations: Vec<Association>,
    /// Time from the reference to the end of the last slot in which any
    /// radio was active.
    pub duration: Micros,
}

/// A flood nobody initiated: every listener hears silence on each slot's
/// channel for the whole flood, and pays for it.
pub fn idle_listen(req: &FloodRequest<'_>, trace: &mut Trace) -> Result<FloodOutcome> {
    req.config.validate()?;
    if req.roles.contains(&FloodRole::Initiator) {
        return Err(Error::Config("idle flood with an initiator".into()));
    }
    let slot_len = req.config.slot_length();
    let mut nodes = vec![NodeFloodResult::default(); req.roles.len()];
    let mut any = false;
    for (v, r) in req.roles.iter().enumerate() {
        if !r.listens() {
            continue;
        }
        any = true;
        nodes[v].radio_on = req.guard + req.config.duration();
        for s in 0..req.config.max_slots {
            trace.push(TraceRecord {
                time_us: req.start + Micros::from(s) * slot_len,
                node: v as NodeId,
                event: RadioEvent::Miss,
                slot: s,
                channel: req.hop.channel(s),
                phase: req.phase,
            });
        }
    }
    let duration = if any { req.config.duration() } else { 0 };
    Ok(FloodOutcome { nodes, associations: Vec::new(), duration })
}

pub fn run_flood(req: &FloodRequest<'_>, medium: &mut Medium, trace: &mut Trace) -> Result<FloodOutcome> {
    let n = medium.topology.len();
    req.config.validate()?;
    if req.roles.len() != n {
        return Err(Error::Config(format!("{} roles for {n} nodes", req.roles.len())));
    }
    let initiators: Vec<NodeId> = (0..n as NodeId)
        .filter(|&v| req.roles[usize::from(v)] == FloodRole::Initiator)
        .collect();
    if initiators.is_empty() {
        return Err(Error::Config("flood has no initiator".into()));
    }

    let slot_len = req.config.slot_length();
    let t_tx = req.config.slot.t_tx;
    let mut results = vec![NodeFloodResult::default(); n];
    let mut holding: Vec<Option<FloodPacket>> = vec![None; n];
    let mut tx_left = vec![0u16; n];
    let mut next_tx = vec![u16::MAX; n];
    for &v in &initiators {
        let pkt = req
            .packets
            .get(&v)
            .ok_or_else(|| Error::Config(format!("initiator {v} has no packet")))?;
        holding[usize::from(v)] = Some(pkt.clone());
        tx_left[usize::from(v)] = req.config.max_tx;
        next_tx[usize::from(v)] = 0;
    }
    let mut listening: Vec<bool> = req.roles.iter().map(|r| r.listens()).collect();
    for (v, l) in listening.iter().enumerate() {
        if *l {
            results[v].radio_on += req.guard;
        }
    }
    let mut parked: Vec<(NodeId, Channel)> = req.parked.to_vec();
    let mut associations = Vec::new();
    let mut last_active: Option<u16> = None;
    let mut txs: Vec<Transmission> = Vec::new();
    let mut senders: Vec<usize> = Vec::new();

    for s in 0..req.config.max_slots {
        let channel = req.hop.channel(s);
        let slot_start = req.start + Micros::from(s) * slot_len;
        txs.clear();
        senders.clear();
        for v in 0..n {
            if tx_left[v] == 0 || next_tx[v] > s {
                continue;
            }
            let Some(pkt) = &holding[v] else { continue };
            let mut on_air = pkt.clone();
            on_air.relay_counter = u8::try_from(s).unwrap_or(u8::MAX);
            let bytes = on_air.encode()?;
            let offset = req.clock_offset_ns.get(v).copied().unwrap_or(0);
            let start_ns = (slot_start as i64 * 1000 + offset).max(0) as u64;
            txs.push(Transmission {
                initiator: v as NodeId,
                channel,
                start_ns,
                duration: t_tx,
                payload_hash: content_digest(&bytes),
                payload: Arc::from(bytes),
            });
            senders.push(v);
        }

        let window = (slot_start * 1000, (slot_start + slot_len) * 1000);
        let mut active = !senders.is_empty();
        for v in 0..n {
            if !listening[v] {
                continue;
            }
            active = true;
            results[v].radio_on += slot_len;
            let outcome = medium.resolve_reception(v as NodeId, channel, window, &txs);
            let event = match &outcome {
                Reception::Received { payload, .. } => match FloodPacket::decode(payload) {
                    Ok(pkt) => {
                        let r = &mut results[v];
                        r.first_rx_slot = Some(s + 1);
                        r.rx_slot_start = Some(slot_start);
                        r.packet = Some(pkt.clone());
                        holding[v] = Some(pkt);
                        listening[v] = false;
                        if s + 1 < req.config.max_slots {
                            tx_left[v] = req.config.max_tx;
                            next_tx[v] = s + 1;
                        }
                        RadioEvent::Rx
                    }
                    Err(_) => RadioEvent::Miss,
                },
                Reception::Collision => RadioEvent::Collision,
                _ => RadioEvent::Miss,
            };
            trace.push(TraceRecord {
                time_us: slot_start,
                node: v as NodeId,
                event,
                slot: s,
                channel,
                phase: req.phase,
            });
        }

        let mut still_parked = Vec::with_capacity(parked.len());
        for &(v, pch) in &parked {
            if pch != channel {
                still_parked.push((v, pch));
                continue;
            }
            match medium.resolve_reception(v, channel, window, &txs) {
                Reception::Received { payload, .. } => match FloodPacket::decode(&payload) {
                    Ok(pkt) => {
                        trace.push(TraceRecord {
                            time_us: slot_start,
                            node: v,
                            event: RadioEvent::Rx,
                            slot: s,
                            channel,
                            phase: req.phase,
                        });
                        associations.push(Association {
                            node: v,
                            reference: synchronize(slot_start, pkt.relay_counter, slot_len),
                            packet: pkt,
                            rx_slot_start: slot_start,
                        });
                    }
                    Err(_) => still_parked.push((v, pch)),
                },
                _ => still_parked.push((v, pch)),
            }
        }
        parked = still_parked;

        for &v in &senders {
            tx_left[v] -= 1;
            next_tx[v] = s + 1;
            results[v].tx_count += 1;
            results[v].radio_on += slot_len;
            trace.push(TraceRecord {
                time_us: slot_start,
                node: v as NodeId,
                event: RadioEvent::Tx,
                slot: s,
                channel,
                phase: req.phase,
            });
        }
        if active {
            last_active = Some(s);
        }
    }

    let duration = last_active.map_or(0, |s| (Micros::from(s) + 1) * slot_len);
    Ok(FloodOutcome { nodes: results, associations, duration })
}
