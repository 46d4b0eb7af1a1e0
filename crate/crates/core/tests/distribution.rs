//! Monte Carlo output against the exact oracles.

mod common;

use std::collections::HashMap;

use drawlab::experiment::{cell_seed, run_scenario};
use drawlab::feasibility::Rules;
use drawlab::mechanisms::{Drawer, Mechanism};
use drawlab::metrics::{pot_pairs, rational_to_f64};
use drawlab::model::{
    example1, ihf2025, scenario_constraints, Assignment, Constraint, ConstraintSet, Instance,
    InstanceDocument,
};
use drawlab::oracle::{enumerate_skip, enumerate_uniform, ExactDistribution};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p_value(instance: &Instance, cs: ConstraintSet, mechanism: Mechanism, exact: &ExactDistribution, trials: u64) -> f64 {
    let rules = Rules::new(instance, cs).unwrap();
    let mut drawer = Drawer::new(instance, &rules, mechanism).unwrap();
    let mut out = Assignment::empty(instance);
    let mut observed: HashMap<Vec<Vec<drawlab::model::TeamId>>, u64> = HashMap::new();
    for t in 0..trials {
        drawer.trial(77, t, &mut out, None).unwrap();
        *observed.entry(out.co_membership()).or_insert(0) += 1;
    }
    let seen: u64 = exact
        .classes
        .iter()
        .map(|c| observed.get(&c.groups).copied().unwrap_or(0))
        .sum();
    assert_eq!(seen, trials, "outcome outside the oracle's support");

    // Classes expecting fewer than five hits are pooled into one bin.
    let (mut stat, mut bins) = (0.0, 0usize);
    let (mut pooled_e, mut pooled_o) = (0.0, 0.0);
    for c in &exact.classes {
        let e = trials as f64 * c.weight as f64 / exact.denominator as f64;
        let o = observed.get(&c.groups).copied().unwrap_or(0) as f64;
        if e < 5.0 {
            pooled_e += e;
            pooled_o += o;
        } else {
            stat += (o - e).powi(2) / e;
            bins += 1;
        }
    }
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        bins += 1;
    }
    if bins < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn class_frequencies_pass_chi_square() {
    let trials = 20_000;
    let mut cases = vec![(example1(), 0)];
    let mut seed = 500;
    while cases.len() < 6 {
        let (inst, s) = common::random_case(seed);
        seed += 1;
        let cs = scenario_constraints(s).unwrap();
        let classes = enumerate_uniform(&inst, cs).unwrap().distribution.classes.len();
        if (3..=400).contains(&classes) {
            cases.push((inst, s));
        }
    }
    for (inst, s) in &cases {
        let cs = scenario_constraints(*s).unwrap();
        let u = enumerate_uniform(inst, cs).unwrap().distribution;
        let k = enumerate_skip(inst, cs).unwrap();
        for (m, exact) in [(Mechanism::Uniform, &u), (Mechanism::Skip, &k)] {
            let p = chi_square_p_value(inst, cs, m, exact, trials);
            assert!(p > 0.001, "{} scenario {s} {m}: p = {p}", inst.name());
        }
    }
}

#[test]
fn acceptance_rate_matches_enumeration() {
    for seed in 0..8 {
        let (inst, s) = common::random_case(800 + seed);
        let e = enumerate_uniform(&inst, scenario_constraints(s).unwrap()).unwrap();
        let r = run_scenario(&inst, s, Mechanism::Uniform, 20_000, seed).unwrap();
        let p = e.acceptance();
        let proposals = r.proposals.unwrap() as f64;
        let sd = (p * (1.0 - p) / proposals).sqrt();
        let p_hat = r.feasible_proportion.unwrap();
        assert!((p_hat - p).abs() <= 5.0 * sd + 1e-12, "{}: {p_hat} vs {p}", inst.name());
    }
}

#[test]
fn i_hat_converges_at_root_n_rate() {
    let inst = example1();
    let u = enumerate_uniform(&inst, ConstraintSet::NONE).unwrap().distribution;
    let k = enumerate_skip(&inst, ConstraintSet::NONE).unwrap();
    let n = inst.groups() as f64;
    for (m, exact) in [(Mechanism::Uniform, &u), (Mechanism::Skip, &k)] {
        let target = rational_to_f64(&exact.i_hat);
        // E[p_hat^2] = p^2 + p(1 - p)/N, so the plug-in index is biased by this / N.
        let pairs = pot_pairs(inst.pots()).len() as f64;
        let spread: f64 = exact
            .matrices
            .blocks
            .iter()
            .flatten()
            .map(|x| {
                let p = rational_to_f64(x);
                p * (1.0 - p)
            })
            .sum::<f64>()
            / (n * pairs);
        let mut se = Vec::new();
        for trials in [1_000u64, 10_000, 100_000] {
            let r = run_scenario(&inst, 0, m, trials, cell_seed(3, 0, m)).unwrap();
            let se_hat = r.stderr_i * (1.0 - 1.0 / n);
            let err = r.i_hat - target - spread / trials as f64;
            assert!(err.abs() <= 5.0 * se_hat, "{m} N={trials}: err {err}, se {se_hat}");
            se.push(se_hat);
        }
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=7.0).contains(&ratio), "{m}: se ratio {ratio}");
        }
    }
}

fn reversed_pots(instance: &Instance) -> Instance {
    let mut doc: InstanceDocument = instance.to_document();
    for pot in &mut doc.pots {
        pot.reverse();
    }
    Instance::from_document(doc).unwrap()
}

fn by_name(inst: &Instance, d: &ExactDistribution) -> HashMap<(String, String), u64> {
    let mut out = HashMap::new();
    for (b, (k, l)) in pot_pairs(inst.pots()).into_iter().enumerate() {
        for (i, a) in inst.pot_teams(k).iter().enumerate() {
            for (j, c) in inst.pot_teams(l).iter().enumerate() {
                out.insert((a.name.clone(), c.name.clone()), d.pair_counts[b][i * inst.groups() + j]);
            }
        }
    }
    out
}

#[test]
fn oracles_are_invariant_under_relabeling() {
    let mut cases = vec![(example1(), 0)];
    cases.extend((0..4).map(|i| common::random_case(900 + i)));
    for (inst, s) in cases {
        let cs = scenario_constraints(s).unwrap();
        let other = reversed_pots(&inst);
        let a = enumerate_uniform(&inst, cs).unwrap();
        let b = enumerate_uniform(&other, cs).unwrap();
        assert_eq!(a.feasible, b.feasible);
        assert_eq!(by_name(&inst, &a.distribution), by_name(&other, &b.distribution));
        assert_eq!(a.distribution.i_hat, b.distribution.i_hat);
        let a = enumerate_skip(&inst, cs).unwrap();
        let b = enumerate_skip(&other, cs).unwrap();
        assert_eq!(by_name(&inst, &a), by_name(&other, &b));
        assert_eq!(a.classes.iter().map(|c| c.weight).sum::<u64>(), a.denominator);
    }
}

#[test]
fn adding_a_constraint_never_raises_expected_unattractive_matches() {
    let inst = ihf2025();
    let results: Vec<_> = (0..32)
        .map(|s| run_scenario(&inst, s, Mechanism::Uniform, 20_000, cell_seed(11, s, Mechanism::Uniform)).unwrap())
        .collect();
    for s in 0..32u32 {
        let cs = scenario_constraints(s).unwrap();
        for c in Constraint::ALL {
            if cs.contains(c) {
                continue;
            }
            let t = cs.with(c).bitmask() as usize;
            let (a, b) = (&results[s as usize], &results[t]);
            let slack = 3.0 * (a.stderr_unattractive.powi(2) + b.stderr_unattractive.powi(2)).sqrt();
            assert!(
                b.mean_unattractive <= a.mean_unattractive + slack,
                "{s} -> {t}: {} vs {}",
                a.mean_unattractive,
                b.mean_unattractive
            );
        }
    }
}
