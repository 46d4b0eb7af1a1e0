//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary (`harness = false`) so the lines are
//! visible in ordinary `cargo test` output.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use num::BigRational;

use drawlab::experiment::{
    cell_seed, distortion_ratio, pareto_frontier, run_scenario, sweep, with_threads,
    ResultsDocument, ScenarioResult,
};
use drawlab::mechanisms::{skip_draw_with_orders, Mechanism};
use drawlab::metrics::{hhi_index, hhi_index_exact, inequality, inequality_exact};
use drawlab::model::{example1, ihf2025, scenario_constraints, ConstraintSet, Instance};
use drawlab::oracle::{enumerate_skip, enumerate_uniform, exact_scenario0_matrices};

const MASTER_SEED: u64 = 20_250_114;
const FULL_TRIALS: u64 = 1_000_000;

struct Cells {
    instance: Instance,
    done: HashMap<(u32, Mechanism, u64), ScenarioResult>,
}

impl Cells {
    fn get(&mut self, scenario: u32, mechanism: Mechanism, trials: u64) -> &ScenarioResult {
        let inst = &self.instance;
        self.done
            .entry((scenario, mechanism, trials))
            .or_insert_with(|| {
                run_scenario(
                    inst,
                    scenario,
                    mechanism,
                    trials,
                    cell_seed(MASTER_SEED, scenario, mechanism),
                )
                .expect("cell runs")
            })
    }
}

struct Check {
    ok: bool,
    lines: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check {
            ok: true,
            lines: Vec::new(),
        }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        let pass = (value - target).abs() <= tol;
        self.ok &= pass;
        self.lines.push(format!(
            "{} {label} = {value:.6} (target {target} +/- {tol})",
            if pass { "ok " } else { "BAD" }
        ));
    }

    fn holds(&mut self, label: String, pass: bool) {
        self.ok &= pass;
        self.lines
            .push(format!("{} {label}", if pass { "ok " } else { "BAD" }));
    }
}

fn report(id: u32, title: &str, started: Instant, check: Check, failures: &mut Vec<u32>) {
    println!(
        "[{}] criterion {id}: {title} ({:.1} s)",
        if check.ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    for l in &check.lines {
        println!("       {l}");
    }
    if !check.ok {
        failures.push(id);
    }
}

fn pair(cells: &mut Cells, scenario: u32, mechanism: Mechanism, a: &str, b: &str) -> f64 {
    let inst = cells.instance.clone();
    let r = cells.get(scenario, mechanism, FULL_TRIALS);
    r.matrices
        .as_ref()
        .expect("matrices kept")
        .between(&inst, a, b)
        .expect("teams from different pots")
}

fn criterion1() -> Check {
    let mut c = Check::new();
    let started = Instant::now();
    let m = exact_scenario0_matrices(&ihf2025()).unwrap();
    let i_hat = hhi_index_exact(&m).unwrap();
    let i = inequality_exact(&i_hat, 8).unwrap();
    c.holds(format!("exact I_hat = {i_hat}"), i_hat == BigRational::new(7.into(), 48.into()));
    c.holds(format!("exact I = {i}"), i == BigRational::new(1.into(), 42.into()));
    let f = m.to_f64();
    let fi_hat = hhi_index(&f).unwrap();
    c.within("float I_hat", fi_hat, 7.0 / 48.0, 1e-12);
    c.within("float I", inequality(fi_hat, 8).unwrap(), 1.0 / 42.0, 1e-12);
    c.holds("runtime < 1 s".into(), started.elapsed().as_secs_f64() < 1.0);
    c
}

fn criterion2(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    let started = Instant::now();
    let r = cells.get(0, Mechanism::Uniform, FULL_TRIALS).clone();
    c.within("I", r.i, 0.02381, 0.0005);
    c.within("mean unattractive", r.mean_unattractive, 14.62, 0.01);
    for (v, pct) in [(12, 5.6), (13, 16.3), (14, 27.6), (15, 25.2), (16, 15.1)] {
        c.within(&format!("P({v}) %"), 100.0 * r.probability(v), pct, 0.3);
    }
    c.holds("runtime < 5 min".into(), started.elapsed().as_secs_f64() < 300.0);
    c
}

fn criterion3(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    for (s, target, tol) in [(1, 0.313, 0.005), (30, 0.126, 0.003), (31, 0.0562, 0.002)] {
        let p = cells.get(s, Mechanism::Uniform, FULL_TRIALS).feasible_proportion.unwrap();
        c.within(&format!("scenario {s} feasible proportion"), p, target, tol);
    }
    let p0 = cells.get(0, Mechanism::Uniform, FULL_TRIALS).feasible_proportion.unwrap();
    c.holds(format!("scenario 0 feasible proportion = {p0} exactly 1"), p0 == 1.0);
    c
}

fn criterion4(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    for (s, target, tol) in [(0, 1.000, 0.01), (1, 1.34, 0.02), (17, 1.24, 0.02), (31, 1.22, 0.02)] {
        let u = cells.get(s, Mechanism::Uniform, FULL_TRIALS).clone();
        let k = cells.get(s, Mechanism::Skip, FULL_TRIALS).clone();
        c.within(
            &format!("scenario {s} I_skip/I_uniform"),
            distortion_ratio(&k, &u).unwrap(),
            target,
            tol,
        );
    }
    c
}

fn criterion5(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    let u = Mechanism::Uniform;
    let k = Mechanism::Skip;
    let spots = [
        (u, "France", "Croatia", 0.500, 0.003),
        (u, "Egypt", "Switzerland", 0.471, 0.003),
        (k, "Egypt", "Switzerland", 0.767, 0.003),
        (u, "Denmark", "Switzerland", 0.075, 0.002),
        (k, "Denmark", "Switzerland", 0.033, 0.002),
    ];
    for (m, a, b, target, tol) in spots {
        let p = pair(cells, 31, m, a, b);
        c.within(&format!("{m} {a}-{b}"), p, target, tol);
    }
    c
}

fn criterion6(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    for m in Mechanism::ALL {
        let r = cells.get(31, m, FULL_TRIALS);
        let exceptions = r.trials - r.histogram.get(&12).copied().unwrap_or(0);
        c.holds(
            format!("{m}: {exceptions} of {} trials differ from 12", r.trials),
            exceptions == 0 && r.trials >= 100_000,
        );
    }
    c
}

fn criterion7() -> Check {
    let mut c = Check::new();
    let trials = 100_000;
    let mut cases = vec![(example1(), 0u32)];
    cases.extend((0..20).map(|i| common::random_case(1000 + i)));
    for (idx, (inst, scenario)) in cases.iter().enumerate() {
        let cs = scenario_constraints(*scenario).unwrap();
        let exact_u = enumerate_uniform(inst, cs).unwrap().distribution;
        let exact_s = enumerate_skip(inst, cs).unwrap();
        let mut worst = 0.0f64;
        let mut zeros = true;
        for (m, exact) in [(Mechanism::Uniform, &exact_u), (Mechanism::Skip, &exact_s)] {
            let r = run_scenario(inst, *scenario, m, trials, cell_seed(MASTER_SEED + idx as u64, *scenario, m))
                .unwrap();
            let (w, z) = common::compare_matrices(r.matrices.as_ref().unwrap(), &exact.matrices, trials);
            worst = worst.max(w);
            zeros &= z;
        }
        c.holds(
            format!(
                "{} ({}x{}, scenario {scenario}): max |z| = {worst:.2}, degenerate cells exact = {zeros}",
                inst.name(),
                inst.pots(),
                inst.groups()
            ),
            worst <= 5.0 && zeros,
        );
    }
    c
}

fn criterion8() -> Check {
    let mut c = Check::new();
    let inst = example1();
    let id = |n: &str| inst.team_by_name(n).unwrap().id;
    let orders = vec![vec![id("1"), id("2"), id("3")], vec![id("4"), id("5"), id("6")]];
    let out = skip_draw_with_orders(&inst, ConstraintSet::NONE, &orders).unwrap();
    let groups: Vec<Vec<&str>> = (0..3)
        .map(|g| out.assignment.members(g).map(|t| inst.team(t).name.as_str()).collect())
        .collect();
    c.holds(
        format!("groups {groups:?}"),
        groups == vec![vec!["1", "6"], vec!["2", "4"], vec!["3", "5"]],
    );
    c
}

fn criterion9(cells: &mut Cells) -> Check {
    let mut c = Check::new();
    let points: Vec<_> = (0..32)
        .map(|s| cells.get(s, Mechanism::Uniform, 100_000).point())
        .collect();
    let report = pareto_frontier(&points);
    for s in [1, 3, 5, 7, 9, 11, 13, 17] {
        let by: Vec<u32> = report
            .dominators(s, Mechanism::Uniform)
            .map(|d| d.iter().map(|p| p.scenario).collect())
            .unwrap_or_default();
        c.holds(
            format!("scenario {s} dominated by {by:?}"),
            by.contains(&30),
        );
    }
    let p1 = points[1];
    let p30 = points[30];
    c.lines.push(format!(
        "    scenario 1 (x={:.4}, I={:.7}); scenario 30 (x={:.4}, I={:.7})",
        p1.x, p1.y, p30.x, p30.y
    ));
    c
}

fn criterion10(inst: &Instance) -> Check {
    let mut c = Check::new();
    let all: Vec<u32> = (0..32).collect();
    let run = |threads| {
        with_threads(Some(threads), || sweep(inst, &all, &Mechanism::ALL, 10_000, MASTER_SEED))
            .unwrap()
            .unwrap()
    };
    let serial = ResultsDocument::new(inst.name(), Some(MASTER_SEED), run(1));
    let parallel = ResultsDocument::new(inst.name(), Some(MASTER_SEED), run(8));
    c.holds(format!("{} cells", serial.results.len()), serial.results.len() == 64);
    c.holds(
        "1-thread and 8-thread documents identical (metadata excluded)".into(),
        serial.comparable_json() == parallel.comparable_json(),
    );
    c
}

fn main() -> ExitCode {
    let mut cells = Cells {
        instance: ihf2025(),
        done: HashMap::new(),
    };
    let mut failures = Vec::new();
    let t = Instant::now();
    report(1, "exact scenario-0 index", t, criterion1(), &mut failures);
    let t = Instant::now();
    report(2, "scenario-0 uniform at 1e6 trials", t, criterion2(&mut cells), &mut failures);
    let t = Instant::now();
    report(3, "uniform acceptance rates", t, criterion3(&mut cells), &mut failures);
    let t = Instant::now();
    report(4, "distortion ratios", t, criterion4(&mut cells), &mut failures);
    let t = Instant::now();
    report(5, "scenario-31 probability spot checks", t, criterion5(&mut cells), &mut failures);
    let t = Instant::now();
    report(6, "forced minimum of 12 under all restrictions", t, criterion6(&mut cells), &mut failures);
    let t = Instant::now();
    report(7, "Monte Carlo vs exact oracles", t, criterion7(), &mut failures);
    let t = Instant::now();
    report(8, "pinned-order Skip trace", t, criterion8(), &mut failures);
    let t = Instant::now();
    report(9, "Pareto dominance in the uniform sweep", t, criterion9(&mut cells), &mut failures);
    let t = Instant::now();
    let inst = cells.instance.clone();
    report(10, "thread-count determinism", t, criterion10(&inst), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failures:?}");
        ExitCode::FAILURE
    }
}
