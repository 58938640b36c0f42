use atomic_sdn::apb::{
    build_association, build_collection, build_dissemination, build_reaction, pair_cap, FloodShape, PhaseKind,
    PhaseSchedule,
};
use atomic_sdn::timing::{
    collect_bound, configuration_bound, epoch_sleep, react_bound, EpochConfig, FloodConfig, PhaseTimings,
    ProtocolTiming, SlotTiming,
};
use atomic_sdn::Error;
use proptest::prelude::*;

fn slot(l: u64) -> SlotTiming {
    SlotTiming { t_tx: 32 * (6 + l), t_sw: 22, t_cal: 192, t_rs: 20 }
}

#[test]
fn default_slot_and_flood_lengths() {
    // 18 bytes on air at 32 us/byte, plus 234 us of turnaround
    assert_eq!(SlotTiming::default().slot_length(), 576 + 234);
    assert_eq!(FloodConfig::default().duration(), 12 * 810);
}

#[test]
fn configuring_seventy_nodes_takes_under_a_second() {
    let pt = ProtocolTiming::default().phase_timings();
    let d = configuration_bound(70, &pt);
    assert_eq!(d, 9720 + 70 * (1000 + 9720));
    // reported as roughly 800 ms for a 70-node network
    assert!((600_000..=1_000_000).contains(&d), "{d}");
}

#[test]
fn bounds_worked_example() {
    let pt = PhaseTimings { t_ind: 10, t_set: 20, t_rep: 30, t_ack: 5, t_sol: 7, t_ipg: 1 };
    assert_eq!(configuration_bound(3, &pt), 10 + 3 * 21);
    assert_eq!(collect_bound(3, &pt), 10 + 5 * 36);
    assert_eq!(react_bound(0, &pt), 10 + 2 * 28);
}

#[test]
fn epoch_sleep_fills_the_period() {
    let ec = EpochConfig::new(1_000_000, 900_000).unwrap();
    assert_eq!(epoch_sleep(100_000, &ec).unwrap(), 900_000);
    assert_eq!(epoch_sleep(900_000, &ec).unwrap(), 100_000);
    assert!(matches!(epoch_sleep(900_001, &ec), Err(Error::BoundViolation { .. })));
    assert!(EpochConfig::new(10, 11).is_err());
    assert!(EpochConfig::new(0, 0).is_err());
}

#[test]
fn collection_schedule_layout() {
    let t = ProtocolTiming::default();
    let s = build_collection(3, &t);
    let e = s.expanded();
    assert_eq!(e.len(), 1 + 2 * 5);
    assert_eq!(e[0].kind, PhaseKind::Ind);
    for (k, pair) in e[1..].chunks(2).enumerate() {
        assert_eq!((pair[0].kind, pair[0].shape), (PhaseKind::Report, FloodShape::Shared));
        assert_eq!((pair[1].kind, pair[1].shape), (PhaseKind::Ack, FloodShape::Dedicated));
        assert_eq!(pair[0].offset, 9720 + 1000 + k as u64 * (1000 + 2 * 9720));
        assert_eq!(pair[1].offset, pair[0].end());
    }
    assert_eq!(s.max_repeats, pair_cap(3));
}

#[test]
fn schedule_csv_dump() {
    let s = build_dissemination(2, &ProtocolTiming::default());
    assert_eq!(
        s.dump_csv(),
        "phase_index,kind,offset_us,duration_us,flood\n\
         0,IND,0,9720,dedicated\n\
         1,SET,10720,9720,dedicated\n\
         2,SET,21440,9720,dedicated\n"
    );
}

/// Span computed by walking the phases one at a time, independent of the
/// schedule's own arithmetic.
fn walk(s: &PhaseSchedule) -> u64 {
    let e = s.expanded();
    let mut t = 0;
    for (i, p) in e.iter().enumerate() {
        // gaps: before every prologue phase after IND, and before every shared phase
        if i > 0 && (p.shape == FloodShape::Shared || s.repeat_block.is_none()) {
            t += s.t_ipg;
        }
        assert_eq!(p.offset, t, "phase {i} offset");
        t += p.flood.duration();
    }
    t
}

fn arb_flood() -> impl Strategy<Value = FloodConfig> {
    (1u16..=6, 0u16..=12, 0u64..=100).prop_map(|(max_tx, extra, l)| FloodConfig {
        max_slots: max_tx + extra,
        max_tx,
        slot: slot(l),
    })
}

prop_compose! {
    fn arb_timing()(ind in arb_flood(), set in arb_flood(), report in arb_flood(), ack in arb_flood(),
                    solicit in arb_flood(), t_ipg in 0u64..5000, guard in 0u64..1000) -> ProtocolTiming {
        ProtocolTiming { ind, set, report, ack, solicit, t_ipg, guard }
    }
}

proptest! {
    #[test]
    fn schedule_spans_equal_closed_forms(t in arb_timing(), n in 0usize..=100) {
        let pt = t.phase_timings();
        let cfg = build_dissemination(n, &t);
        let col = build_collection(n, &t);
        let rea = build_reaction(n, &t);
        prop_assert_eq!(walk(&cfg), configuration_bound(n as u64, &pt));
        prop_assert_eq!(cfg.span(), configuration_bound(n as u64, &pt));
        prop_assert_eq!(walk(&col), collect_bound(n as u64, &pt));
        prop_assert_eq!(col.span(), collect_bound(n as u64, &pt));
        prop_assert_eq!(walk(&rea), react_bound(n as u64, &pt));
        prop_assert_eq!(rea.span(), react_bound(n as u64, &pt));
        prop_assert_eq!(walk(&build_association(n, &t)), build_association(n, &t).span());
    }

    #[test]
    fn bounds_are_affine_and_increasing(t in arb_timing(), n in 0u64..1000) {
        let pt = t.phase_timings();
        for f in [configuration_bound, collect_bound, react_bound] {
            let (a, b, c) = (f(n, &pt), f(n + 1, &pt), f(n + 2, &pt));
            prop_assert!(b > a);
            prop_assert_eq!(c - b, b - a);
        }
        prop_assert_eq!(configuration_bound(0, &pt), pt.t_ind);
    }

    #[test]
    fn react_matches_collect_when_phase_lengths_match(f in arb_flood(), t_ipg in 0u64..5000, n in 0u64..200) {
        let pt = ProtocolTiming::uniform(f, t_ipg).phase_timings();
        prop_assert_eq!(react_bound(n, &pt), collect_bound(n, &pt));
    }

    #[test]
    fn sleep_plus_control_is_the_period(period in 1u64..10_000_000, frac in 0.0f64..=1.0, op in 0.0f64..=1.0) {
        let max_control = ((period as f64) * frac) as u64;
        let ec = EpochConfig::new(period, max_control).unwrap();
        let op = ((max_control as f64) * op) as u64;
        prop_assert_eq!(epoch_sleep(op, &ec).unwrap() + op, period);
    }
}
