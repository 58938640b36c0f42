use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, NodeId, Result};

/// Log-distance path loss: `rssi(d) = tx_power - pl0 - 10*gamma*log10(d/d0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLoss {
    pub tx_power_dbm: f64,
    pub pl0_db: f64,
    pub d0_m: f64,
    pub gamma: f64,
    /// Links weaker than this are not created.
    pub reception_threshold_dbm: f64,
    /// Packet reception ratio assigned to every derived link.
    pub default_prr: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        PathLoss {
            tx_power_dbm: 0.0,
            pl0_db: 55.0,
            d0_m: 1.0,
            gamma: 1.8,
            reception_threshold_dbm: -100.0,
            default_prr: 0.9,
        }
    }
}

impl PathLoss {
    pub fn rssi_at(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.d0_m);
        self.tx_power_dbm - self.pl0_db - 10.0 * self.gamma * (d / self.d0_m).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub rssi_dbm: f64,
    pub prr: f64,
}

/// Nodes and directed link qualities. Symmetric links are stored in both
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: BTreeMap<(NodeId, NodeId), Link>,
}

impl Topology {
    /// Builds a topology from nodes and directed links. Node ids must be
    /// exactly `0..nodes.len()` in any order.
    pub fn new(mut nodes: Vec<NodeSpec>, links: BTreeMap<(NodeId, NodeId), Link>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        for w in nodes.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Topology(format!("duplicate node id {}", w[0].id)));
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if usize::from(n.id) != i {
                return Err(Error::Topology(format!(
                    "node ids must be dense 0..{}; missing id {i}",
                    nodes.len()
                )));
            }
        }
        for (&(a, b), l) in &links {
            if usize::from(a) >= nodes.len() || usize::from(b) >= nodes.len() {
                return Err(Error::Topology(format!("link {a}->{b} names an unknown node")));
            }
            if a == b {
                return Err(Error::Topology(format!("self link on node {a}")));
            }
            if !(0.0..=1.0).contains(&l.prr) || l.prr.is_nan() {
                return Err(Error::Topology(format!("link {a}->{b} has prr {} outside [0,1]", l.prr)));
            }
        }
        Ok(Topology { nodes, links })
    }

    /// Derives links between every pair from the path-loss model, dropping
    /// those below the reception threshold.
    pub fn from_positions(nodes: Vec<NodeSpec>, pl: &PathLoss) -> Result<Self> {
        let mut links = BTreeMap::new();
        for a in &nodes {
            for b in &nodes {
                if a.id == b.id {
                    continue;
                }
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                let rssi = pl.rssi_at(d);
                if rssi >= pl.reception_threshold_dbm {
                    links.insert((a.id, b.id), Link { rssi_dbm: rssi, prr: pl.default_prr });
                }
            }
        }
        Topology::new(nodes, links)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Link from transmitter `tx` to receiver `rx`.
    pub fn link(&self, tx: NodeId, rx: NodeId) -> Option<&Link> {
        self.links.get(&(tx, rx))
    }

    pub fn links(&self) -> impl Iterator<Item = ((NodeId, NodeId), &Link)> + '_ {
        self.links.iter().map(|(k, v)| (*k, v))
    }

    pub fn set_all_prr(&mut self, prr: f64) {
        for l in self.links.values_mut() {
            l.prr = prr;
        }
    }

    pub fn set_link(&mut self, tx: NodeId, rx: NodeId, link: Link) {
        self.links.insert((tx, rx), link);
    }

    /// Hop distance from `root` over links with non-zero prr; `None` for
    /// unreachable nodes.
    pub fn hop_distances(&self, root: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.nodes.len()];
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for (&(a, b), l) in &self.links {
            if l.prr > 0.0 {
                adj[usize::from(a)].push(b);
            }
        }
        let Some(slot) = dist.get_mut(usize::from(root)) else {
            return dist;
        };
        *slot = Some(0);
        let mut q = VecDeque::from([root]);
        while let Some(u) = q.pop_front() {
            let du = dist[usize::from(u)].unwrap_or(0);
            for &v in &adj[usize::from(u)] {
                if dist[usize::from(v)].is_none() {
                    dist[usize::from(v)] = Some(du + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Node closest to the centroid, lowest id on ties.
    pub fn central_node(&self) -> NodeId {
        let n = self.nodes.len().max(1) as f64;
        let cx = self.nodes.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = self.nodes.iter().map(|p| p.y).sum::<f64>() / n;
        let mut best = (f64::INFINITY, 0);
        for p in &self.nodes {
            let d = (p.x - cx).powi(2) + (p.y - cy).powi(2);
            if d < best.0 - 1e-9 {
                best = (d, p.id);
            }
        }
        best.1
    }
}

/// Near-square grid of `count` nodes, `spacing` metres apart, filled row by
/// row with `ceil(sqrt(count))` columns.
pub fn grid_topology(count: usize, spacing: f64, params: &PathLoss) -> Result<Topology> {
    if count == 0 || count > usize::from(NodeId::MAX) {
        return Err(Error::Config(format!("grid size {count} out of range")));
    }
    if spacing <= 0.0 || spacing.is_nan() {
        return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
    }
    let cols = (count as f64).sqrt().ceil() as usize;
    let nodes = (0..count)
        .map(|i| NodeSpec {
            id: i as NodeId,
            x: (i % cols) as f64 * spacing,
            y: (i / cols) as f64 * spacing,
        })
        .collect();
    Topology::from_positions(nodes, params)
}

/// Line of `count` nodes with symmetric links between neighbours only.
pub fn line_topology(count: usize, rssi_dbm: f64, prr: f64) -> Result<Topology> {
    let nodes = (0..count)
        .map(|i| NodeSpec { id: i as NodeId, x: i as f64, y: 0.0 })
        .collect();
    let mut links = BTreeMap::new();
    for i in 1..count {
        let (a, b) = ((i - 1) as NodeId, i as NodeId);
        links.insert((a, b), Link { rssi_dbm, prr });
        links.insert((b, a), Link { rssi_dbm, prr });
    }
    Topology::new(nodes, links)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    nodes: Vec<NodeSpec>,
    links: Option<Vec<LinkEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    a: NodeId,
    b: NodeId,
    rssi_dbm: f64,
    prr: f64,
    #[serde(default)]
    directed: bool,
}

/// Parses the JSON topology format. When `links` is absent they are derived
/// from `params`.
pub fn load_topology(text: &str, params: &PathLoss) -> Result<Topology> {
    let file: TopologyFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let Some(entries) = file.links else {
        return Topology::from_positions(file.nodes, params);
    };
    let mut links: BTreeMap<(NodeId, NodeId), Link> = BTreeMap::new();
    let mut undirected: BTreeMap<(NodeId, NodeId), Link> = BTreeMap::new();
    for e in &entries {
        let link = Link { rssi_dbm: e.rssi_dbm, prr: e.prr };
        if e.directed {
            links.insert((e.a, e.b), link);
            continue;
        }
        if let Some(prev) = undirected.get(&(e.b, e.a)) {
            if *prev != link {
                return Err(Error::Topology(format!(
                    "link {}-{} listed twice with different values; mark it `directed`",
                    e.a, e.b
                )));
            }
        }
        undirected.insert((e.a, e.b), link);
    }
    for ((a, b), l) in undirected {
        if l.rssi_dbm < params.reception_threshold_dbm {
            continue;
        }
        links.insert((a, b), l);
        links.insert((b, a), l);
    }
    Topology::new(file.nodes, links)
}

pub fn load_topology_file(path: &std::path::Path, params: &PathLoss) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    load_topology(&text, params)
}

/// The 19-node two-floor testbed layout shipped with the crate.
pub const TESTBED_19: &str = include_str!("../../data/testbed19.json");

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_reachable(t: &Topology, root: NodeId) -> usize {
        // independent of Topology::hop_distances: plain iterative closure
        let mut seen = vec![false; t.len()];
        seen[usize::from(root)] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for ((a, b), l) in t.links() {
                if l.prr > 0.0 && seen[usize::from(a)] && !seen[usize::from(b)] {
                    seen[usize::from(b)] = true;
                    changed = true;
                }
            }
        }
        seen.iter().filter(|s| **s).count()
    }

    #[test]
    fn single_node_grid_has_no_links() {
        let t = grid_topology(1, 300.0, &PathLoss::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.links().count(), 0);
    }

    #[test]
    fn four_node_grid_diagonals_follow_path_loss() {
        let pl = PathLoss::default();
        let t = grid_topology(4, 300.0, &pl).unwrap();
        let adjacent = pl.rssi_at(300.0);
        let diagonal = pl.rssi_at(300.0 * 2f64.sqrt());
        // -55 - 18*log10(300) = -99.59; -55 - 18*log10(424.26) = -102.30
        assert!((adjacent - -99.588).abs() < 1e-2, "{adjacent}");
        assert!((diagonal - -102.297).abs() < 1e-2, "{diagonal}");
        assert!(t.link(0, 1).is_some() && t.link(0, 2).is_some());
        assert_eq!(t.link(0, 3).is_some(), diagonal >= pl.reception_threshold_dbm);
        assert_eq!(t.link(1, 0).unwrap().prr, 0.9);
    }

    #[test]
    fn thirty_node_grid_is_connected() {
        let t = grid_topology(30, 300.0, &PathLoss::default()).unwrap();
        assert_eq!(bfs_reachable(&t, 0), 30);
        assert!(t.hop_distances(0).iter().all(|d| d.is_some()));
    }

    #[test]
    fn explicit_two_node_file() {
        let text = r#"{"nodes":[{"id":0,"x":0,"y":0},{"id":1,"x":5,"y":0}],
            "links":[{"a":0,"b":1,"rssi_dbm":-70,"prr":0.9}]}"#;
        let t = load_topology(text, &PathLoss::default()).unwrap();
        assert_eq!(t.links().count(), 2);
        assert_eq!(t.link(1, 0), Some(&Link { rssi_dbm: -70.0, prr: 0.9 }));
    }

    #[test]
    fn bad_prr_rejected() {
        let text = r#"{"nodes":[{"id":0,"x":0,"y":0},{"id":1,"x":5,"y":0}],
            "links":[{"a":0,"b":1,"rssi_dbm":-70,"prr":1.5}]}"#;
        assert!(matches!(load_topology(text, &PathLoss::default()), Err(Error::Topology(_))));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"{"nodes":[{"id":0,"x":0,"y":0},{"id":0,"x":5,"y":0}]}"#;
        assert!(matches!(load_topology(text, &PathLoss::default()), Err(Error::Topology(_))));
    }

    #[test]
    fn asymmetric_without_directed_rejected() {
        let text = r#"{"nodes":[{"id":0,"x":0,"y":0},{"id":1,"x":5,"y":0}],
            "links":[{"a":0,"b":1,"rssi_dbm":-70,"prr":0.9},
                     {"a":1,"b":0,"rssi_dbm":-75,"prr":0.9}]}"#;
        assert!(load_topology(text, &PathLoss::default()).is_err());
        let ok = r#"{"nodes":[{"id":0,"x":0,"y":0},{"id":1,"x":5,"y":0}],
            "links":[{"a":0,"b":1,"rssi_dbm":-70,"prr":0.9,"directed":true},
                     {"a":1,"b":0,"rssi_dbm":-75,"prr":0.9,"directed":true}]}"#;
        let t = load_topology(ok, &PathLoss::default()).unwrap();
        assert_eq!(t.link(1, 0).unwrap().rssi_dbm, -75.0);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\n\"nodes\": [\n{\"id\": 0, \"x\": 0,, \"y\": 0}\n]}";
        match load_topology(text, &PathLoss::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn testbed_is_connected_and_multi_hop() {
        let t = load_topology(TESTBED_19, &PathLoss::default()).unwrap();
        assert_eq!(t.len(), 19);
        assert_eq!(bfs_reachable(&t, 0), 19);
        let max_hop = t.hop_distances(0).into_iter().flatten().max().unwrap();
        assert!(max_hop >= 3, "max hop {max_hop}");
    }
}
