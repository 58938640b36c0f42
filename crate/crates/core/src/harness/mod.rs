//! Scenario runs, metrics and sweeps.

mod metrics;
mod scenario;

use std::collections::VecDeque;

use rayon::prelude::*;

pub use metrics::{emit_metrics, MetricsRecord, NodeMetrics};
pub use scenario::{ScenarioConfig, TopologySpec};

use crate::control::{EntrySpec, OpportunityKind, OpportunityPolicy, ParticipantMode, World, WorldConfig};
use crate::medium::{grid_topology, PathLoss};
use crate::sim::EventQueue;
use crate::timing::{collect_bound, configuration_bound, react_bound, EpochConfig, ProtocolTiming};
use crate::trace::Trace;
use crate::{Error, Micros, NodeId, Result};

#[derive(Debug)]
pub struct ScenarioOutput {
    pub metrics: MetricsRecord,
    pub trace: Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    EpochStart,
}

/// Builds the world and runs epochs until the configured duration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let topo = cfg.build_topology()?;
    let world = World::new(topo, cfg.world_config()?, cfg.seed)?;
    run_world(world, cfg.duration_us(), cfg.back_to_back)
}

/// Runs epochs on an existing world from t=0 until `duration`.
pub fn run_world(mut world: World, duration: Micros, back_to_back: bool) -> Result<ScenarioOutput> {
    let mut queue = EventQueue::new();
    queue.schedule(0, Event::EpochStart);
    let mut end = duration;
    while let Some((now, Event::EpochStart)) = queue.pop() {
        if now >= duration {
            break;
        }
        let r = world.run_epoch(now)?;
        let op_end = now + r.record.span_us;
        end = end.max(op_end);
        let next = if back_to_back { op_end + world.cfg.timing.t_ipg } else { r.next_start };
        queue.schedule(next, Event::EpochStart);
    }
    Ok(collect_metrics(world, end))
}

fn collect_metrics(world: World, total: Micros) -> ScenarioOutput {
    let controller = world.controller_id();
    let hops = world.medium.topology.hop_distances(controller);
    let radio = world.radio_on(total);
    let nodes = world
        .stats()
        .iter()
        .enumerate()
        .map(|(v, s)| NodeMetrics {
            node: v as NodeId,
            hop: hops[v],
            pdr: s.pdr(),
            mean_latency_us: s.mean_latency(),
            rdc: radio[v] as f64 / total.max(1) as f64,
            completed: s.completed,
            failed: s.failed,
            latencies: s.latencies.clone(),
            radio_on_us: radio[v],
        })
        .collect();
    ScenarioOutput {
        metrics: MetricsRecord {
            controller,
            nodes,
            opportunities: world.opportunities,
            total_time_us: total,
        },
        trace: world.trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub n: usize,
    pub kind: OpportunityKind,
    pub measured_span: Micros,
    pub analytic_bound: Micros,
    pub complete: bool,
}

/// One worst-case opportunity with `n` participants on a lossless grid of
/// `n + 1` nodes (participants plus the controller).
pub fn worst_case_opportunity(n: usize, kind: OpportunityKind, timing: &ProtocolTiming) -> Result<SweepRow> {
    let pl = PathLoss { default_prr: 1.0, ..PathLoss::default() };
    let topo = grid_topology(n + 1, 300.0, &pl)?;
    let pt = timing.phase_timings();
    let bound = match kind {
        OpportunityKind::Configure => configuration_bound(n as u64, &pt),
        OpportunityKind::Collect => collect_bound(n as u64, &pt),
        OpportunityKind::React => react_bound(n as u64, &pt),
        other => return Err(Error::Config(format!("no worst case for {other} opportunities"))),
    };
    let horizon = (bound + 1).max(1_000_000);
    let cfg = WorldConfig {
        timing: *timing,
        epoch: EpochConfig::new(horizon, horizon)?,
        policy: OpportunityPolicy::Queue(VecDeque::from([kind])),
        react_load: ParticipantMode::All,
        ..WorldConfig::default()
    };
    let mut world = World::new(topo, cfg, 0)?;
    let record = if kind == OpportunityKind::Configure {
        let targets: Vec<(NodeId, EntrySpec)> = (0..=n as NodeId)
            .filter(|&v| v != world.controller_id())
            .map(|v| (v, EntrySpec { entry_id: v, match_bytes: v.to_le_bytes().to_vec(), action: vec![1] }))
            .collect();
        if targets.is_empty() {
            world.run_epoch(0)?.record
        } else {
            world.configure_nodes(0, &targets, false)?.record
        }
    } else {
        world.run_epoch(0)?.record
    };
    Ok(SweepRow { n, kind, measured_span: record.span_us, analytic_bound: bound, complete: record.complete })
}

/// Runs every `(n, kind)` combination in parallel; rows come back in input
/// order.
pub fn scaling_sweep(sizes: &[usize], kinds: &[OpportunityKind], timing: &ProtocolTiming) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || kinds.is_empty() {
        return Err(Error::Config("sweep needs at least one size and one kind".into()));
    }
    let jobs: Vec<(usize, OpportunityKind)> = sizes.iter().flat_map(|&n| kinds.iter().map(move |&k| (n, k))).collect();
    jobs.par_iter().map(|&(n, k)| worst_case_opportunity(n, k, timing)).collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n,kind,measured_span_us,analytic_bound_us,complete\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.n, r.kind, r.measured_span, r.analytic_bound, r.complete));
    }
    s
}
