//! Radio event trace: one line per event,
//! `time_us,node,event,slot,channel,phase`.

use std::fmt::{self, Write as _};

use crate::apb::PhaseKind;
use crate::medium::Channel;
use crate::{Micros, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioEvent {
    Tx,
    Rx,
    Miss,
    Collision,
}

impl fmt::Display for RadioEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadioEvent::Tx => "TX",
            RadioEvent::Rx => "RX",
            RadioEvent::Miss => "MISS",
            RadioEvent::Collision => "COLLISION",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: Micros,
    pub node: NodeId,
    pub event: RadioEvent,
    pub slot: u16,
    pub channel: Channel,
    pub phase: PhaseKind,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.time_us, self.node, self.event, self.slot, self.channel, self.phase
        )
    }
}

/// In-memory trace; disabled traces drop records without allocating.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn enabled() -> Self {
        Trace { enabled: true, records: Vec::new() }
    }

    pub fn disabled() -> Self {
        Trace::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, rec: TraceRecord) {
        if self.enabled {
            self.records.push(rec);
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 32);
        for r in &self.records {
            let _ = writeln!(out, "{r}");
        }
        out
    }
}
