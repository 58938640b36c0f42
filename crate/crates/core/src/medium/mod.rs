//! Shared radio medium.
//!
//! A listener tuned to a channel sees every overlapping transmission on that
//! channel from a neighbour it can hear. Concurrent transmissions are
//! resolved behaviourally:
//!
//! 1. inaudible transmissions (no link, or below the reception threshold)
//!    are ignored;
//! 2. identical payloads whose start times all lie within the same-data
//!    window combine into one signal, received with probability
//!    `1 - prod(1 - prr_i)`;
//! 3. otherwise the strongest signal is demodulated if it beats the summed
//!    power of all the others by the capture threshold, or if it starts at
//!    least one preamble earlier than every competitor, gated by its link prr;
//! 4. anything else is a collision.
//!
//! A successful reception is finally subject to injected loss.

mod topology;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use topology::{
    grid_topology, line_topology, load_topology, load_topology_file, Link, NodeSpec, PathLoss,
    Topology, TESTBED_19,
};

use crate::{Error, Micros, NodeId, Result};

pub type Channel = u8;

/// Capture-effect and reception parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureModel {
    pub capture_threshold_db: f64,
    pub preamble_window_us: Micros,
    /// Maximum start-time spread for same-data combining, in nanoseconds.
    pub same_data_window_ns: u64,
    pub reception_threshold_dbm: f64,
}

impl Default for CaptureModel {
    fn default() -> Self {
        CaptureModel {
            capture_threshold_db: 3.0,
            preamble_window_us: 64,
            same_data_window_ns: 500,
            reception_threshold_dbm: -100.0,
        }
    }
}

/// Content digest used for same-data matching.
pub type PayloadHash = u64;

pub fn payload_digest(bytes: &[u8]) -> PayloadHash {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("sha256 is 32 bytes"))
}

/// A signal on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    /// Transmitting node (the relay, not the flood's origin).
    pub initiator: NodeId,
    pub channel: Channel,
    /// Start time in nanoseconds.
    pub start_ns: u64,
    pub duration: Micros,
    pub payload: Arc<[u8]>,
    pub payload_hash: PayloadHash,
}

impl Transmission {
    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.duration * 1000
    }

    fn overlaps(&self, window: (u64, u64)) -> bool {
        self.start_ns < window.1 && window.0 < self.end_ns()
    }
}

/// Deterministic part of reception resolution: which signal, if any, the
/// receiver locks onto, and with what success probability.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Silence,
    Collision,
    /// Identical payloads combined; indices into the active set.
    Combined { members: Vec<usize>, success: f64 },
    /// One signal captured over the others.
    Captured { index: usize, success: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reception {
    Received { index: usize, payload: Arc<[u8]>, payload_hash: PayloadHash },
    Silence,
    Collision,
    /// Lost to the link's reception ratio.
    Lost,
    /// Dropped by the loss injector after a successful demodulation.
    Dropped,
}

impl Reception {
    pub fn is_received(&self) -> bool {
        matches!(self, Reception::Received { .. })
    }
}

/// Reception drop injection applied after capture resolution.
#[derive(Debug, Clone)]
pub struct LossInjector {
    pub drop_probability: f64,
    rng: ChaCha8Rng,
}

impl LossInjector {
    pub fn new(drop_probability: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(Error::Config(format!(
                "drop probability {drop_probability} outside [0,1]"
            )));
        }
        Ok(LossInjector { drop_probability, rng })
    }

    pub fn should_drop(&mut self) -> bool {
        self.drop_probability > 0.0 && self.rng.gen_bool(self.drop_probability)
    }
}

/// Pure rule evaluation; see the module docs for the order of the rules.
pub fn select_signal(
    topo: &Topology,
    capture: &CaptureModel,
    listener: NodeId,
    channel: Channel,
    window: (u64, u64),
    active: &[Transmission],
) -> Selection {
    let audible: Vec<(usize, f64, f64)> = active
        .iter()
        .enumerate()
        .filter(|(_, t)| t.channel == channel && t.initiator != listener && t.overlaps(window))
        .filter_map(|(i, t)| {
            let link = topo.link(t.initiator, listener)?;
            (link.rssi_dbm >= capture.reception_threshold_dbm).then_some((i, link.rssi_dbm, link.prr))
        })
        .collect();
    if audible.is_empty() {
        return Selection::Silence;
    }

    let first_hash = active[audible[0].0].payload_hash;
    let same_data = audible.iter().all(|&(i, _, _)| active[i].payload_hash == first_hash);
    let earliest = audible.iter().map(|&(i, _, _)| active[i].start_ns).min().unwrap_or(0);
    let latest = audible.iter().map(|&(i, _, _)| active[i].start_ns).max().unwrap_or(0);
    if same_data && latest - earliest <= capture.same_data_window_ns {
        let all_fail: f64 = audible.iter().map(|&(_, _, prr)| 1.0 - prr).product();
        return Selection::Combined {
            members: audible.iter().map(|&(i, _, _)| i).collect(),
            success: 1.0 - all_fail,
        };
    }

    // strongest; ties go to the earliest start, then the lowest transmitter id
    let &(strongest, rssi, prr) = audible
        .iter()
        .min_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(active[a.0].start_ns.cmp(&active[b.0].start_ns))
                .then(active[a.0].initiator.cmp(&active[b.0].initiator))
        })
        .expect("non-empty");
    let others = audible.iter().filter(|&&(i, _, _)| i != strongest);
    let interference_mw: f64 = others.clone().map(|&(_, r, _)| dbm_to_mw(r)).sum();
    let power_capture = rssi - mw_to_dbm(interference_mw) >= capture.capture_threshold_db;
    let start = active[strongest].start_ns;
    let preamble_ns = capture.preamble_window_us * 1000;
    let timing_capture = others
        .clone()
        .all(|&(i, _, _)| active[i].start_ns >= start + preamble_ns);
    if power_capture || timing_capture {
        Selection::Captured { index: strongest, success: prr }
    } else {
        Selection::Collision
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// The medium of one simulation world: topology, capture model and the
/// seeded streams behind link and injected losses.
#[derive(Debug, Clone)]
pub struct Medium {
    pub topology: Topology,
    pub capture: CaptureModel,
    pub loss: LossInjector,
    link_rng: ChaCha8Rng,
}

impl Medium {
    pub fn new(topology: Topology, capture: CaptureModel, loss: LossInjector, link_rng: ChaCha8Rng) -> Self {
        Medium { topology, capture, loss, link_rng }
    }

    /// Resolves what `listener` receives on `channel` during `window`
    /// (nanoseconds). Consumes one link draw for any demodulated signal with
    /// success probability below one, then one loss draw.
    pub fn resolve_reception(
        &mut self,
        listener: NodeId,
        channel: Channel,
        window: (u64, u64),
        active: &[Transmission],
    ) -> Reception {
        let (index, success) =
            match select_signal(&self.topology, &self.capture, listener, channel, window, active) {
                Selection::Silence => return Reception::Silence,
                Selection::Collision => return Reception::Collision,
                Selection::Combined { members, success } => (members[0], success),
                Selection::Captured { index, success } => (index, success),
            };
        if success < 1.0 && !self.link_rng.gen_bool(success.max(0.0)) {
            return Reception::Lost;
        }
        if self.loss.should_drop() {
            return Reception::Dropped;
        }
        let t = &active[index];
        Reception::Received {
            index,
            payload: t.payload.clone(),
            payload_hash: t.payload_hash,
        }
    }
}
