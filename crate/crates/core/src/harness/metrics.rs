use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::control::{OpportunityKind, OpportunityRecord};
use crate::trace::Trace;
use crate::{Error, Micros, NodeId, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub hop: Option<u32>,
    pub pdr: Option<f64>,
    pub mean_latency_us: Option<f64>,
    pub rdc: f64,
    pub completed: u64,
    pub failed: u64,
    pub latencies: Vec<(OpportunityKind, Micros)>,
    pub radio_on_us: Micros,
}

impl NodeMetrics {
    pub fn latencies_of(&self, kind: OpportunityKind) -> impl Iterator<Item = Micros> + '_ {
        self.latencies.iter().filter(move |(k, _)| *k == kind).map(|&(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub controller: NodeId,
    pub nodes: Vec<NodeMetrics>,
    pub opportunities: Vec<OpportunityRecord>,
    /// RDC denominator: the whole simulated time.
    pub total_time_us: Micros,
}

impl MetricsRecord {
    pub fn mean_rdc(&self) -> f64 {
        self.nodes.iter().map(|n| n.rdc).sum::<f64>() / self.nodes.len().max(1) as f64
    }

    pub fn completed(&self) -> u64 {
        self.nodes.iter().map(|n| n.completed).sum()
    }

    pub fn failed(&self) -> u64 {
        self.nodes.iter().map(|n| n.failed).sum()
    }

    /// Network-wide completed / (completed + failed).
    pub fn pdr(&self) -> Option<f64> {
        let (c, f) = (self.completed(), self.failed());
        (c + f > 0).then(|| c as f64 / (c + f) as f64)
    }

    /// Mean over all latency samples of one kind.
    pub fn mean_latency(&self, kind: OpportunityKind) -> Option<f64> {
        let (sum, count) = self
            .nodes
            .iter()
            .flat_map(|n| n.latencies_of(kind))
            .fold((0u128, 0u64), |(s, c), l| (s + u128::from(l), c + 1));
        (count > 0).then(|| sum as f64 / count as f64)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("node,hop,pdr,mean_latency_us,rdc\n");
        for n in &self.nodes {
            let hop = n.hop.map(|h| h.to_string()).unwrap_or_default();
            let pdr = n.pdr.map(|p| format!("{p:.6}")).unwrap_or_default();
            let lat = n.mean_latency_us.map(|l| format!("{l:.1}")).unwrap_or_default();
            let _ = writeln!(s, "{},{hop},{pdr},{lat},{:.6}", n.node, n.rdc);
        }
        s
    }

    pub fn opportunities_csv(&self) -> String {
        let mut s = String::from("epoch,start_us,kind,n_participants,span_us,bound_us,complete\n");
        for o in &self.opportunities {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                o.epoch, o.start_us, o.kind, o.n_participants, o.span_us, o.bound_us, o.complete
            );
        }
        s
    }
}

/// Writes `summary.csv`, `opportunities.csv` and, when given an enabled
/// trace, `trace.log` into `out`. Returns the paths written.
pub fn emit_metrics(records: &MetricsRecord, trace: Option<&Trace>, out: &Path) -> Result<Vec<PathBuf>> {
    if records.nodes.is_empty() {
        return Err(Error::Config("no metrics to emit".into()));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("summary.csv", records.summary_csv())?;
    put("opportunities.csv", records.opportunities_csv())?;
    if let Some(t) = trace.filter(|t| t.is_enabled()) {
        put("trace.log", t.render())?;
    }
    Ok(written)
}
