//! Brute-force reception oracle shared by the medium tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use atomic_sdn::medium::{
    select_signal, CaptureModel, Link, LossInjector, Medium, NodeSpec, Reception, Selection, Topology, Transmission,
};
use atomic_sdn::rng::SeedTree;

pub const LISTENER: u16 = 0;

/// Listener 0 with transmitters 1..=k at the given link qualities.
pub fn star(links: &[(f64, f64)]) -> Topology {
    let nodes = (0..=links.len()).map(|i| NodeSpec { id: i as u16, x: i as f64, y: 0.0 }).collect();
    let mut map = BTreeMap::new();
    for (i, &(rssi_dbm, prr)) in links.iter().enumerate() {
        map.insert((i as u16 + 1, LISTENER), Link { rssi_dbm, prr });
    }
    Topology::new(nodes, map).unwrap()
}

pub fn tx(from: u16, channel: u8, start_ns: u64, hash: u64) -> Transmission {
    Transmission {
        initiator: from,
        channel,
        start_ns,
        duration: 576,
        payload: Arc::from(hash.to_le_bytes().to_vec()),
        payload_hash: hash,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Silence,
    Collision,
    Combined(Vec<usize>, f64),
    Captured(usize, f64),
}

pub struct Sig {
    pub index: usize,
    pub rssi: f64,
    pub prr: f64,
    pub start: u64,
    pub hash: u64,
    pub from: u16,
}

/// Straight transcription of the reception rules, written without sharing
/// code with the library.
pub fn oracle(sigs: &[Sig], cm: &CaptureModel) -> Expect {
    let heard: Vec<&Sig> = sigs.iter().filter(|s| s.rssi >= cm.reception_threshold_dbm).collect();
    if heard.is_empty() {
        return Expect::Silence;
    }
    let same = heard.iter().all(|s| s.hash == heard[0].hash);
    let lo = heard.iter().map(|s| s.start).min().unwrap();
    let hi = heard.iter().map(|s| s.start).max().unwrap();
    if same && hi - lo <= cm.same_data_window_ns {
        let mut fail = 1.0;
        for s in &heard {
            fail *= 1.0 - s.prr;
        }
        return Expect::Combined(heard.iter().map(|s| s.index).collect(), 1.0 - fail);
    }
    let mut best = heard[0];
    for &s in &heard[1..] {
        let better = s.rssi > best.rssi
            || (s.rssi == best.rssi && (s.start < best.start || (s.start == best.start && s.from < best.from)));
        if better {
            best = s;
        }
    }
    let mut others_mw = 0.0;
    let mut earlier_by_preamble = true;
    for s in heard.iter().filter(|s| s.index != best.index) {
        others_mw += 10f64.powf(s.rssi / 10.0);
        if s.start < best.start + cm.preamble_window_us * 1000 {
            earlier_by_preamble = false;
        }
    }
    let best_mw = 10f64.powf(best.rssi / 10.0);
    if best_mw >= others_mw * 10f64.powf(cm.capture_threshold_db / 10.0) || earlier_by_preamble {
        Expect::Captured(best.index, best.prr)
    } else {
        Expect::Collision
    }
}

pub fn lib(sel: Selection) -> Expect {
    match sel {
        Selection::Silence => Expect::Silence,
        Selection::Collision => Expect::Collision,
        Selection::Combined { members, success } => Expect::Combined(members, success),
        Selection::Captured { index, success } => Expect::Captured(index, success),
    }
}

pub fn close(a: &Expect, b: &Expect) -> bool {
    match (a, b) {
        (Expect::Combined(m1, p1), Expect::Combined(m2, p2)) => m1 == m2 && (p1 - p2).abs() < 1e-12,
        (Expect::Captured(i1, p1), Expect::Captured(i2, p2)) => i1 == i2 && (p1 - p2).abs() < 1e-12,
        _ => a == b,
    }
}

pub struct Case {
    pub picks: Vec<(f64, u64, u64, u8)>,
    pub sigs: Vec<Sig>,
    pub topo: Topology,
    pub active: Vec<Transmission>,
}

/// Every combination of up to three signals over a small grid of levels,
/// start offsets, payloads and channels. Channel is varied for k <= 2 only
/// to keep the three-signal product manageable.
pub fn enumerate_cases(prrs: [f64; 3], mut visit: impl FnMut(Case)) -> usize {
    // Level grid avoids exact 3 dB ties so float rounding cannot flip a case.
    let rssi = [-105.0, -100.0, -95.0, -88.0, -84.0, -70.0];
    let starts = [0u64, 300, 600, 64_000, 128_500];
    let hashes = [0xaau64, 0xbb];
    let mut count = 0;
    for k in 1..=3usize {
        let channels: &[u8] = if k <= 2 { &[4, 5] } else { &[4] };
        let mut per_signal = Vec::new();
        for &r in &rssi {
            for &s in &starts {
                for &h in &hashes {
                    for &c in channels {
                        per_signal.push((r, s, h, c));
                    }
                }
            }
        }
        for code in 0..per_signal.len().pow(k as u32) {
            let mut c = code;
            let picks: Vec<(f64, u64, u64, u8)> = (0..k)
                .map(|_| {
                    let p = per_signal[c % per_signal.len()];
                    c /= per_signal.len();
                    p
                })
                .collect();
            let topo = star(&picks.iter().enumerate().map(|(i, p)| (p.0, prrs[i])).collect::<Vec<_>>());
            let active = picks.iter().enumerate().map(|(i, p)| tx(i as u16 + 1, p.3, p.1, p.2)).collect();
            // the listener is tuned to channel 4
            let sigs = picks
                .iter()
                .enumerate()
                .filter(|(_, p)| p.3 == 4)
                .map(|(i, p)| Sig { index: i, rssi: p.0, prr: prrs[i], start: p.1, hash: p.2, from: i as u16 + 1 })
                .collect();
            visit(Case { picks, sigs, topo, active });
            count += 1;
        }
    }
    count
}


pub fn medium(topo: Topology, drop: f64, seed: u64) -> Medium {
    let s = SeedTree::new(seed);
    Medium::new(topo, CaptureModel::default(), LossInjector::new(drop, s.stream("l")).unwrap(), s.stream("k"))
}

/// Compares `select_signal` with the oracle on every enumerated case.
/// Returns the case count and how often each outcome (silence, collision,
/// combined, captured) was expected.
pub fn check_select_signal() -> Result<(usize, [usize; 4]), String> {
    let cm = CaptureModel::default();
    let mut outcomes = [0usize; 4];
    let mut first_err = None;
    let cases = enumerate_cases([0.9, 0.6, 1.0], |c| {
        let want = oracle(&c.sigs, &cm);
        let got = lib(select_signal(&c.topo, &cm, LISTENER, 4, (0, 2_000_000), &c.active));
        if !close(&want, &got) && first_err.is_none() {
            first_err = Some(format!("case {:?}: oracle {want:?} lib {got:?}", c.picks));
        }
        outcomes[match want {
            Expect::Silence => 0,
            Expect::Collision => 1,
            Expect::Combined(..) => 2,
            Expect::Captured(..) => 3,
        }] += 1;
    });
    first_err.map_or(Ok((cases, outcomes)), Err)
}

/// Runs every enumerated case through `Medium::resolve_reception` with
/// perfect links. At drop 0 every decodable case must be received intact;
/// at drop 1 it must be dropped.
pub fn check_resolve_reception(drop: f64) -> Result<usize, String> {
    let cm = CaptureModel::default();
    let mut m = medium(star(&[]), drop, 3);
    let mut first_err = None;
    let cases = enumerate_cases([1.0; 3], |c| {
        m.topology = c.topo;
        let got = m.resolve_reception(LISTENER, 4, (0, 2_000_000), &c.active);
        let ok = match oracle(&c.sigs, &cm) {
            Expect::Silence => got == Reception::Silence,
            Expect::Collision => got == Reception::Collision,
            Expect::Combined(members, _) => decoded(&got, drop, members[0], &c.picks),
            Expect::Captured(i, _) => decoded(&got, drop, i, &c.picks),
        };
        if !ok && first_err.is_none() {
            first_err = Some(format!("case {:?}: got {got:?}", c.picks));
        }
    });
    first_err.map_or(Ok(cases), Err)
}

fn decoded(got: &Reception, drop: f64, want: usize, picks: &[(f64, u64, u64, u8)]) -> bool {
    if drop >= 1.0 {
        return *got == Reception::Dropped;
    }
    matches!(got, Reception::Received { index, payload_hash, .. } if *index == want && *payload_hash == picks[want].2)
}
