use drawlab::experiment::{pareto_frontier, TradeoffPoint};
use drawlab::feasibility::Rules;
use drawlab::mechanisms::{Drawer, Mechanism, RngStream, SkipSampler};
use drawlab::model::{ihf2025, scenario_constraints, Assignment};
use proptest::prelude::*;

#[test]
fn every_draw_satisfies_its_scenario() {
    let inst = ihf2025();
    for s in 0..32 {
        let rules = Rules::new(&inst, scenario_constraints(s).unwrap()).unwrap();
        for m in Mechanism::ALL {
            let mut drawer = Drawer::new(&inst, &rules, m).unwrap();
            let mut out = Assignment::empty(&inst);
            for t in 0..200 {
                drawer.trial(s as u64, t, &mut out, None).unwrap();
                assert!(out.is_complete());
                let v = rules.check_full(&out).unwrap();
                assert!(v.is_empty(), "scenario {s} {m} trial {t}: {v:?}");
            }
        }
    }
}

#[test]
fn skip_cache_does_not_change_outcomes() {
    let inst = ihf2025();
    for s in [1, 17, 30, 31] {
        let rules = Rules::new(&inst, scenario_constraints(s).unwrap()).unwrap();
        let mut cached = SkipSampler::new(&inst, &rules);
        let mut plain = SkipSampler::uncached(&inst, &rules);
        let mut a = Assignment::empty(&inst);
        let mut b = Assignment::empty(&inst);
        for t in 0..300 {
            cached.draw_into(&mut RngStream::new(9, t).rng(), &mut a, None).unwrap();
            plain.draw_into(&mut RngStream::new(9, t).rng(), &mut b, None).unwrap();
            assert_eq!(a, b, "scenario {s} trial {t}");
        }
    }
}

fn points() -> impl Strategy<Value = Vec<TradeoffPoint>> {
    prop::collection::vec((0u8..6, 0u8..6), 1..24).prop_map(|xy| {
        xy.into_iter()
            .enumerate()
            .map(|(i, (x, y))| TradeoffPoint {
                x: x as f64,
                y: y as f64 / 10.0,
                scenario: i as u32,
                mechanism: if i % 2 == 0 { Mechanism::Uniform } else { Mechanism::Skip },
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn frontier_is_mutually_non_dominating(pts in points()) {
        let r = pareto_frontier(&pts);
        prop_assert_eq!(r.frontier.len() + r.dominated.len(), pts.len());
        prop_assert!(!r.frontier.is_empty());
        for a in &r.frontier {
            for b in &r.frontier {
                prop_assert!(!a.dominates(b));
            }
        }
        for d in &r.dominated {
            prop_assert!(!d.dominated_by.is_empty());
            prop_assert!(d.dominated_by.iter().all(|q| q.dominates(&d.point)));
            let count = pts.iter().filter(|q| q.dominates(&d.point)).count();
            prop_assert_eq!(count, d.dominated_by.len());
        }
    }

    #[test]
    fn frontier_ignores_input_order(pts in points(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut RngStream::new(seed, 0).rng());
        prop_assert_eq!(pareto_frontier(&pts), pareto_frontier(&shuffled));
    }
}
