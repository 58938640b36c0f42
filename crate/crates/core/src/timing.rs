//! Slot and phase timing, and the closed-form schedule lengths of the three
//! control opportunities.
//!
//! All durations are integer microseconds. Nothing in this module touches
//! floating point, so a bound computed here can be compared for exact
//! equality against a span measured by the simulator.

use serde::{Deserialize, Serialize};

use crate::apb::PhaseKind;
use crate::{Error, Micros, Result};

/// On-air time per byte at 250 kbit/s.
pub const US_PER_BYTE: Micros = 32;
/// Preamble (4) + SFD (1) + length (1).
pub const SYNC_HEADER_BYTES: Micros = 6;

/// Decomposition of one flood slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTiming {
    pub t_tx: Micros,
    pub t_sw: Micros,
    pub t_cal: Micros,
    pub t_rs: Micros,
}

impl SlotTiming {
    /// Slot timing for a frame of `frame_len` bytes with the default
    /// software, calibration and receiver delays.
    pub fn for_frame(frame_len: Micros) -> Self {
        SlotTiming {
            t_tx: on_air_time(frame_len),
            t_sw: 22,
            t_cal: 192,
            t_rs: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_tx == 0 || self.t_sw == 0 || self.t_cal == 0 || self.t_rs == 0 {
            return Err(Error::Config(format!(
                "slot timing components must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn slot_length(&self) -> Micros {
        slot_length(self)
    }
}

impl Default for SlotTiming {
    fn default() -> Self {
        SlotTiming::for_frame(DEFAULT_FRAME_LEN)
    }
}

/// Nominal frame length used by the default slot timing.
pub const DEFAULT_FRAME_LEN: Micros = 12;

/// Time on air for `frame_len` payload bytes plus the synchronization header.
pub fn on_air_time(frame_len: Micros) -> Micros {
    US_PER_BYTE * (SYNC_HEADER_BYTES + frame_len)
}

pub fn slot_length(slot: &SlotTiming) -> Micros {
    slot.t_tx + slot.t_sw + slot.t_cal + slot.t_rs
}

/// Static configuration of one flood primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloodConfig {
    pub max_slots: u16,
    pub max_tx: u16,
    #[serde(default)]
    pub slot: SlotTiming,
}

impl Default for FloodConfig {
    fn default() -> Self {
        FloodConfig {
            max_slots: 12,
            max_tx: 3,
            slot: SlotTiming::default(),
        }
    }
}

impl FloodConfig {
    pub fn validate(&self) -> Result<()> {
        self.slot.validate()?;
        if self.max_tx == 0 || self.max_slots < self.max_tx {
            return Err(Error::Config(format!(
                "flood config needs 1 <= max_tx <= max_slots (got max_tx={}, max_slots={})",
                self.max_tx, self.max_slots
            )));
        }
        Ok(())
    }

    pub fn slot_length(&self) -> Micros {
        self.slot.slot_length()
    }

    /// Length of the whole flood, `max_slots` slots.
    pub fn duration(&self) -> Micros {
        Micros::from(self.max_slots) * self.slot_length()
    }
}

/// Durations of each phase type and of the gap that precedes each phase
/// (or phase pair) after the indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub t_ind: Micros,
    pub t_set: Micros,
    pub t_rep: Micros,
    pub t_ack: Micros,
    pub t_sol: Micros,
    pub t_ipg: Micros,
}

/// Per-phase flood configurations plus gap and guard. This is what a
/// scenario overrides; [`PhaseTimings`] is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolTiming {
    pub ind: FloodConfig,
    pub set: FloodConfig,
    pub report: FloodConfig,
    pub ack: FloodConfig,
    pub solicit: FloodConfig,
    pub t_ipg: Micros,
    pub guard: Micros,
}

impl Default for ProtocolTiming {
    fn default() -> Self {
        let flood = FloodConfig::default();
        ProtocolTiming {
            ind: flood,
            set: flood,
            report: flood,
            ack: flood,
            solicit: flood,
            t_ipg: 1000,
            guard: 500,
        }
    }
}

impl ProtocolTiming {
    /// Same flood shape for every phase.
    pub fn uniform(flood: FloodConfig, t_ipg: Micros) -> Self {
        ProtocolTiming {
            ind: flood,
            set: flood,
            report: flood,
            ack: flood,
            solicit: flood,
            t_ipg,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in [&self.ind, &self.set, &self.report, &self.ack, &self.solicit] {
            f.validate()?;
        }
        Ok(())
    }

    /// Flood shape used by a phase kind. BOOT shares the SET shape, ALERT the
    /// REPORT shape, and NACK/STOP the ACK shape.
    pub fn flood_for(&self, kind: PhaseKind) -> FloodConfig {
        match kind {
            PhaseKind::Ind => self.ind,
            PhaseKind::Set | PhaseKind::Boot => self.set,
            PhaseKind::Report | PhaseKind::Alert => self.report,
            PhaseKind::Ack | PhaseKind::Nack | PhaseKind::Stop => self.ack,
            PhaseKind::Solicit => self.solicit,
        }
    }

    pub fn phase_timings(&self) -> PhaseTimings {
        PhaseTimings {
            t_ind: self.ind.duration(),
            t_set: self.set.duration(),
            t_rep: self.report.duration(),
            t_ack: self.ack.duration(),
            t_sol: self.solicit.duration(),
            t_ipg: self.t_ipg,
        }
    }

    /// Longest `max_slots` across phases; hop sequences must cover it.
    pub fn max_slots(&self) -> u16 {
        [self.ind, self.set, self.report, self.ack, self.solicit]
            .iter()
            .map(|f| f.max_slots)
            .max()
            .unwrap_or(1)
    }
}

/// Configuration opportunity: IND then `n` SET phases.
pub fn configuration_bound(n: u64, pt: &PhaseTimings) -> Micros {
    pt.t_ind + n * (pt.t_ipg + pt.t_set)
}

/// Collect opportunity: IND then `n` REPORT/ACK pairs plus two empty pairs.
pub fn collect_bound(n: u64, pt: &PhaseTimings) -> Micros {
    pt.t_ind + (n + 2) * (pt.t_ipg + pt.t_rep + pt.t_ack)
}

/// React opportunity: IND then `n` SOLICIT/SET pairs plus two empty pairs.
pub fn react_bound(n: u64, pt: &PhaseTimings) -> Micros {
    pt.t_ind + (n + 2) * (pt.t_ipg + pt.t_sol + pt.t_set)
}

/// Epoch length and the cap on control time within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochConfig {
    pub period: Micros,
    pub max_control: Micros,
}

impl EpochConfig {
    pub fn new(period: Micros, max_control: Micros) -> Result<Self> {
        if period == 0 || max_control > period {
            return Err(Error::Config(format!(
                "epoch needs 0 < max_control <= period (period={period}, max_control={max_control})"
            )));
        }
        Ok(EpochConfig { period, max_control })
    }
}

/// Sleep remainder of an epoch once the opportunity has taken `op_duration`.
pub fn epoch_sleep(op_duration: Micros, ec: &EpochConfig) -> Result<Micros> {
    if op_duration > ec.max_control {
        return Err(Error::BoundViolation {
            span: op_duration,
            limit: ec.max_control,
        });
    }
    Ok(ec.period - op_duration)
}
