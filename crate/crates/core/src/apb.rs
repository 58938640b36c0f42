//! Phase builder: typed phases chained into opportunity schedules, and the
//! engine that runs a schedule phase by phase.
//!
//! Collection and reaction schedules carry a two-phase repeat block (shared
//! flood then dedicated flood) that the engine repeats until the controller
//! has seen two consecutive empty shared phases, the pair cap is hit, or the
//! next pair would overrun the control window.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::flood::{FloodOutcome, FloodPacket, FloodRole, NodeFloodResult};
use crate::timing::{FloodConfig, ProtocolTiming};
use crate::{Error, Micros, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PhaseKind {
    Boot,
    Ind,
    Ack,
    Nack,
    Set,
    Alert,
    Solicit,
    Report,
    Stop,
}

impl PhaseKind {
    pub const ALL: [PhaseKind; 9] = [
        PhaseKind::Boot,
        PhaseKind::Ind,
        PhaseKind::Ack,
        PhaseKind::Nack,
        PhaseKind::Set,
        PhaseKind::Alert,
        PhaseKind::Solicit,
        PhaseKind::Report,
        PhaseKind::Stop,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Boot => "BOOT",
            PhaseKind::Ind => "IND",
            PhaseKind::Ack => "ACK",
            PhaseKind::Nack => "NACK",
            PhaseKind::Set => "SET",
            PhaseKind::Alert => "ALERT",
            PhaseKind::Solicit => "SOLICIT",
            PhaseKind::Report => "REPORT",
            PhaseKind::Stop => "STOP",
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown phase kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloodShape {
    /// One initiator.
    Dedicated,
    /// Any number of competing initiators.
    Shared,
}

impl fmt::Display for FloodShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FloodShape::Dedicated => "dedicated",
            FloodShape::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub flood: FloodConfig,
    /// From the opportunity reference (IND slot 0).
    pub offset: Micros,
    pub guard: Micros,
    pub shape: FloodShape,
}

impl Phase {
    pub fn duration(&self) -> Micros {
        self.flood.duration()
    }

    pub fn end(&self) -> Micros {
        self.offset + self.duration()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    /// Prologue followed by one instance of the repeat block (if any).
    pub phases: Vec<Phase>,
    pub repeat_block: Option<Range<usize>>,
    /// Worst-case number of repeat-block instances (pending + stop overhead).
    pub worst_case_repeats: usize,
    /// Hard cap on repeat-block instances.
    pub max_repeats: usize,
    /// Consecutive empty shared phases that end the opportunity.
    pub stop_after_empty: usize,
    pub t_ipg: Micros,
}

/// Empty shared phases appended after the last productive pair.
pub const STOP_EMPTY_PAIRS: usize = 2;

/// Pair cap for `pending` sources.
pub fn pair_cap(pending: usize) -> usize {
    4 * pending + 8
}

impl PhaseSchedule {
    fn block_period(&self) -> Micros {
        match &self.repeat_block {
            Some(r) => self.t_ipg + self.phases[r.clone()].iter().map(Phase::duration).sum::<Micros>(),
            None => 0,
        }
    }

    /// Phase for the given repeat instance; `repeat` is ignored for prologue
    /// phases.
    pub fn instance(&self, index: usize, repeat: usize) -> Phase {
        let mut p = self.phases[index];
        if let Some(r) = &self.repeat_block {
            if r.contains(&index) {
                p.offset += repeat as Micros * self.block_period();
            }
        }
        p
    }

    /// Every phase of the worst case, with offsets.
    pub fn expanded(&self) -> Vec<Phase> {
        match &self.repeat_block {
            None => self.phases.clone(),
            Some(r) => {
                let mut out: Vec<Phase> = self.phases[..r.start].to_vec();
                for k in 0..self.worst_case_repeats {
                    out.extend(r.clone().map(|i| self.instance(i, k)));
                }
                out
            }
        }
    }

    /// Worst-case span from the opportunity reference.
    pub fn span(&self) -> Micros {
        self.expanded().last().map_or(0, Phase::end)
    }

    /// `phase_index,kind,offset_us,duration_us,flood` rows for the worst case.
    pub fn dump_csv(&self) -> String {
        let mut s = String::from("phase_index,kind,offset_us,duration_us,flood\n");
        for (i, p) in self.expanded().iter().enumerate() {
            s.push_str(&format!("{i},{},{},{},{}\n", p.kind, p.offset, p.duration(), p.shape));
        }
        s
    }
}

fn phase(kind: PhaseKind, shape: FloodShape, offset: Micros, timing: &ProtocolTiming) -> Phase {
    Phase { kind, flood: timing.flood_for(kind), offset, guard: timing.guard, shape }
}

fn chain(kinds: &[PhaseKind], timing: &ProtocolTiming) -> Vec<Phase> {
    let ind = phase(PhaseKind::Ind, FloodShape::Dedicated, 0, timing);
    let mut end = ind.end();
    let mut out = vec![ind];
    for &k in kinds {
        let p = phase(k, FloodShape::Dedicated, end + timing.t_ipg, timing);
        end = p.end();
        out.push(p);
    }
    out
}

/// IND followed by `n_targets` SET phases.
pub fn build_dissemination(n_targets: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    build_chain(PhaseKind::Set, n_targets, timing)
}

/// IND followed by `n` BOOT phases.
pub fn build_association(n: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    build_chain(PhaseKind::Boot, n, timing)
}

fn build_chain(kind: PhaseKind, n: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    PhaseSchedule {
        phases: chain(&vec![kind; n], timing),
        repeat_block: None,
        worst_case_repeats: 0,
        max_repeats: 0,
        stop_after_empty: STOP_EMPTY_PAIRS,
        t_ipg: timing.t_ipg,
    }
}

fn build_pairs(shared: PhaseKind, dedicated: PhaseKind, pending: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    let ind = phase(PhaseKind::Ind, FloodShape::Dedicated, 0, timing);
    let a = phase(shared, FloodShape::Shared, ind.end() + timing.t_ipg, timing);
    let b = phase(dedicated, FloodShape::Dedicated, a.end(), timing);
    PhaseSchedule {
        phases: vec![ind, a, b],
        repeat_block: Some(1..3),
        worst_case_repeats: pending + STOP_EMPTY_PAIRS,
        max_repeats: pair_cap(pending),
        stop_after_empty: STOP_EMPTY_PAIRS,
        t_ipg: timing.t_ipg,
    }
}

/// IND then repeated (REPORT shared, ACK dedicated) pairs.
pub fn build_collection(pending: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    build_pairs(PhaseKind::Report, PhaseKind::Ack, pending, timing)
}

/// IND then repeated (SOLICIT shared, SET dedicated) pairs.
pub fn build_reaction(pending: usize, timing: &ProtocolTiming) -> PhaseSchedule {
    build_pairs(PhaseKind::Solicit, PhaseKind::Set, pending, timing)
}

/// Where a phase sits within an opportunity run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCtx {
    /// Position in the executed sequence.
    pub seq: usize,
    /// Repeat-block instance, `None` for prologue phases.
    pub repeat: Option<usize>,
    /// Absolute start time of slot 0.
    pub start: Micros,
}

/// Roles and initiator packets for one phase.
#[derive(Debug, Clone, Default)]
pub struct PhasePlan {
    pub roles: Vec<FloodRole>,
    pub packets: BTreeMap<NodeId, FloodPacket>,
}

impl PhasePlan {
    pub fn has_initiator(&self) -> bool {
        self.roles.contains(&FloodRole::Initiator)
    }
}

/// What the controller concluded from a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseVerdict {
    /// Shared phase in which the controller received nothing.
    pub empty: bool,
}

/// Protocol-specific logic plugged into [`execute_schedule`].
pub trait PhaseLogic {
    fn pre(&mut self, phase: &Phase, ctx: &PhaseCtx) -> Result<PhasePlan>;
    /// Runs the flood for a plan with at least one initiator.
    fn flood(&mut self, phase: &Phase, ctx: &PhaseCtx, plan: &PhasePlan) -> Result<FloodOutcome>;
    fn post(&mut self, phase: &Phase, ctx: &PhaseCtx, plan: &PhasePlan, outcome: &FloodOutcome) -> Result<PhaseVerdict>;
    /// Stands in for the flood when the plan has no initiator.
    fn idle(&mut self, phase: &Phase, _ctx: &PhaseCtx, plan: &PhasePlan) -> Result<FloodOutcome> {
        Ok(idle_outcome(phase, &plan.roles))
    }
}

/// Outcome of a flood nobody initiated: listeners hear nothing for the whole
/// flood.
pub fn idle_outcome(phase: &Phase, roles: &[FloodRole]) -> FloodOutcome {
    let listen = phase.guard + phase.duration();
    let nodes = roles
        .iter()
        .map(|r| NodeFloodResult {
            radio_on: if matches!(r, FloodRole::Forwarder | FloodRole::Destination) { listen } else { 0 },
            ..Default::default()
        })
        .collect::<Vec<_>>();
    let any = roles.iter().any(|r| matches!(r, FloodRole::Forwarder | FloodRole::Destination));
    FloodOutcome { nodes, associations: Vec::new(), duration: if any { phase.duration() } else { 0 } }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutedPhase {
    pub kind: PhaseKind,
    pub shape: FloodShape,
    pub offset: Micros,
    pub duration: Micros,
    pub repeat: Option<usize>,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpportunityRun {
    pub phases: Vec<ExecutedPhase>,
    /// From the reference to the end of the last executed phase.
    pub span: Micros,
    pub repeats: usize,
    /// Ended by the stop rule (or had no repeat block) rather than by the
    /// pair cap or the control window.
    pub complete: bool,
}

/// Runs `schedule` from absolute time `reference`. Phases that would end
/// past `max_control` are not started and mark the run incomplete.
pub fn execute_schedule(
    schedule: &PhaseSchedule,
    reference: Micros,
    max_control: Micros,
    logic: &mut dyn PhaseLogic,
) -> Result<OpportunityRun> {
    let mut run = OpportunityRun { phases: Vec::new(), span: 0, repeats: 0, complete: true };
    let prologue_end = schedule.repeat_block.as_ref().map_or(schedule.phases.len(), |r| r.start);

    let mut exec = |p: Phase, repeat: Option<usize>, run: &mut OpportunityRun| -> Result<Option<bool>> {
        if p.end() > max_control {
            run.complete = false;
            return Ok(None);
        }
        let ctx = PhaseCtx { seq: run.phases.len(), repeat, start: reference + p.offset };
        let plan = logic.pre(&p, &ctx)?;
        let outcome = if plan.has_initiator() {
            logic.flood(&p, &ctx, &plan)?
        } else {
            logic.idle(&p, &ctx, &plan)?
        };
        let verdict = logic.post(&p, &ctx, &plan, &outcome)?;
        run.phases.push(ExecutedPhase {
            kind: p.kind,
            shape: p.shape,
            offset: p.offset,
            duration: p.duration(),
            repeat,
            empty: verdict.empty,
        });
        run.span = p.end();
        Ok(Some(verdict.empty))
    };

    for &p in &schedule.phases[..prologue_end] {
        if exec(p, None, &mut run)?.is_none() {
            return Ok(run);
        }
    }
    let Some(block) = schedule.repeat_block.clone() else {
        return Ok(run);
    };
    let mut empty_streak = 0;
    loop {
        if run.repeats >= schedule.max_repeats {
            run.complete = false;
            return Ok(run);
        }
        let k = run.repeats;
        let mut any_empty = false;
        for i in block.clone() {
            let p = schedule.instance(i, k);
            match exec(p, Some(k), &mut run)? {
                None => return Ok(run),
                Some(e) => any_empty |= e && p.shape == FloodShape::Shared,
            }
        }
        run.repeats += 1;
        empty_streak = if any_empty { empty_streak + 1 } else { 0 };
        if empty_streak >= schedule.stop_after_empty {
            return Ok(run);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::{collect_bound, configuration_bound, react_bound, SlotTiming};

    fn timing() -> ProtocolTiming {
        let mut t = ProtocolTiming::default();
        t.ind.max_slots = 8;
        t.set.max_slots = 6;
        t.report.max_slots = 5;
        t.ack.max_slots = 4;
        t.solicit.max_slots = 7;
        t
    }

    #[test]
    fn phase_kind_round_trips() {
        for k in PhaseKind::ALL {
            assert_eq!(PhaseKind::from_code(k.code()), Some(k));
            assert_eq!(k.to_string().parse::<PhaseKind>().unwrap(), k);
        }
        assert_eq!(PhaseKind::from_code(9), None);
        assert!("FOO".parse::<PhaseKind>().is_err());
    }

    #[test]
    fn dissemination_offsets_by_hand() {
        let t = timing();
        let pt = t.phase_timings();
        assert_eq!(build_dissemination(0, &t).expanded().len(), 1);
        let s = build_dissemination(3, &t);
        let offs: Vec<Micros> = s.expanded().iter().map(|p| p.offset).collect();
        let (ind, ipg, set) = (pt.t_ind, pt.t_ipg, pt.t_set);
        assert_eq!(offs, vec![0, ind + ipg, ind + 2 * ipg + set, ind + 3 * ipg + 2 * set]);
        assert_eq!(s.span(), ind + 3 * (ipg + set));
    }

    #[test]
    fn spans_equal_bounds() {
        let t = timing();
        let pt = t.phase_timings();
        for n in 0..100usize {
            let m = n as u64;
            assert_eq!(build_dissemination(n, &t).span(), configuration_bound(m, &pt));
            assert_eq!(build_collection(n, &t).span(), collect_bound(m, &pt));
            assert_eq!(build_reaction(n, &t).span(), react_bound(m, &pt));
        }
    }

    #[test]
    fn dump_lists_every_worst_case_phase() {
        let s = build_collection(1, &ProtocolTiming::uniform(
            FloodConfig { max_slots: 2, max_tx: 1, slot: SlotTiming { t_tx: 100, t_sw: 1, t_cal: 1, t_rs: 8 } },
            10,
        ));
        assert_eq!(
            s.dump_csv(),
            "phase_index,kind,offset_us,duration_us,flood\n\
             0,IND,0,220,dedicated\n\
             1,REPORT,230,220,shared\n\
             2,ACK,450,220,dedicated\n\
             3,REPORT,680,220,shared\n\
             4,ACK,900,220,dedicated\n\
             5,REPORT,1130,220,shared\n\
             6,ACK,1350,220,dedicated\n"
        );
    }

    /// Shared phases are non-empty for the first `productive` pairs.
    struct Scripted {
        productive: usize,
        n: usize,
    }

    impl PhaseLogic for Scripted {
        fn pre(&mut self, _: &Phase, _: &PhaseCtx) -> Result<PhasePlan> {
            Ok(PhasePlan { roles: vec![FloodRole::Forwarder; self.n], packets: BTreeMap::new() })
        }
        fn flood(&mut self, _: &Phase, _: &PhaseCtx, _: &PhasePlan) -> Result<FloodOutcome> {
            unreachable!()
        }
        fn post(&mut self, p: &Phase, ctx: &PhaseCtx, _: &PhasePlan, _: &FloodOutcome) -> Result<PhaseVerdict> {
            Ok(PhaseVerdict { empty: p.shape == FloodShape::Shared && ctx.repeat.unwrap() >= self.productive })
        }
    }

    #[test]
    fn stop_rule_after_two_empty_pairs() {
        let t = timing();
        let pt = t.phase_timings();
        for productive in 0..6 {
            let s = build_collection(productive, &t);
            let run = execute_schedule(&s, 0, u64::MAX, &mut Scripted { productive, n: 3 }).unwrap();
            assert!(run.complete);
            assert_eq!(run.repeats, productive + 2);
            assert_eq!(run.span, collect_bound(productive as u64, &pt));
        }
    }

    #[test]
    fn cap_and_window_mark_incomplete() {
        let t = timing();
        let s = build_reaction(1, &t);
        let run = execute_schedule(&s, 0, u64::MAX, &mut Scripted { productive: 1000, n: 2 }).unwrap();
        assert!(!run.complete);
        assert_eq!(run.repeats, pair_cap(1));

        let limit = s.span() - 1;
        let run = execute_schedule(&s, 0, limit, &mut Scripted { productive: 1, n: 2 }).unwrap();
        assert!(!run.complete);
        assert!(run.span <= limit);
    }

    #[test]
    fn ind_only_span() {
        let t = timing();
        let run = execute_schedule(&build_dissemination(0, &t), 5, u64::MAX, &mut Scripted { productive: 0, n: 1 }).unwrap();
        assert_eq!(run.span, t.phase_timings().t_ind);
        assert_eq!(run.phases.len(), 1);
    }

    #[test]
    fn idle_outcome_charges_listeners_only() {
        let t = timing();
        let p = build_collection(0, &t).phases[1];
        let o = idle_outcome(&p, &[FloodRole::Sleeper, FloodRole::Forwarder]);
        assert_eq!(o.nodes[0].radio_on, 0);
        assert_eq!(o.nodes[1].radio_on, p.guard + p.duration());
    }
}
