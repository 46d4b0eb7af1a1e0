//! Scenario sweeps, Monte Carlo aggregation, Pareto analysis and result
//! persistence.
//!
//! A cell is one (scenario, mechanism) pair. Its trials are split into
//! contiguous batches; trial `t` always draws from stream `t` of the cell
//! seed, so the merged result does not depend on how batches are scheduled.
//! The batches double as the jackknife replicates behind `stderr_i`.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DrawError, Result};
use crate::feasibility::{completable, Rules, UnattractiveCounter};
use crate::mechanisms::{Drawer, Mechanism};
use crate::metrics::{
    hhi_index, inequality, pair_matrices, MatrixAccumulator, PairMatrixSet, UnattractiveTally,
};
use crate::model::{scenario_constraints, Assignment, Instance};

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const JACKKNIFE_BATCHES: u64 = 20;
pub const RESULTS_SCHEMA: &str = "drawlab.results/1";
pub const SCENARIO_COUNT: u32 = 32;

pub const CSV_COLUMNS: [&str; 10] = [
    "scenario",
    "mechanism",
    "trials",
    "seed",
    "mean_unattractive",
    "stderr_unattractive",
    "I",
    "stderr_I",
    "feasible_proportion",
    "elapsed_ms",
];

/// Aggregate of one (scenario, mechanism) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: u32,
    /// Active constraint letters, `none` for scenario 0.
    pub constraints: String,
    pub mechanism: Mechanism,
    pub trials: u64,
    /// Stream family the cell's trials were drawn from.
    pub seed: u64,
    pub mean_unattractive: f64,
    pub stderr_unattractive: f64,
    /// Trials per unattractive-match count.
    pub histogram: BTreeMap<u32, u64>,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "I_hat")]
    pub i_hat: f64,
    #[serde(rename = "stderr_I")]
    pub stderr_i: f64,
    /// Accepted over proposed assignments; Uniform only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_proportion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<PairMatrixSet>,
    /// Wall-clock time; persisted in the metadata section only.
    #[serde(skip)]
    pub elapsed_ms: f64,
}

impl ScenarioResult {
    pub fn histogram_probabilities(&self) -> BTreeMap<u32, f64> {
        let t = self.trials as f64;
        self.histogram
            .iter()
            .map(|(&v, &c)| (v, c as f64 / t))
            .collect()
    }

    pub fn probability(&self, unattractive: u32) -> f64 {
        self.histogram.get(&unattractive).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    pub fn point(&self) -> TradeoffPoint {
        TradeoffPoint {
            x: self.mean_unattractive,
            y: self.i,
            scenario: self.scenario,
            mechanism: self.mechanism,
        }
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            scenario: self.scenario,
            mechanism: self.mechanism,
            trials: self.trials,
            seed: self.seed,
            mean_unattractive: self.mean_unattractive,
            stderr_unattractive: self.stderr_unattractive,
            i: self.i,
            stderr_i: self.stderr_i,
            feasible_proportion: self.feasible_proportion,
            elapsed_ms: self.elapsed_ms,
        }
    }
}

/// A line of the delimited results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: u32,
    pub mechanism: Mechanism,
    pub trials: u64,
    pub seed: u64,
    pub mean_unattractive: f64,
    pub stderr_unattractive: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "stderr_I")]
    pub stderr_i: f64,
    pub feasible_proportion: Option<f64>,
    pub elapsed_ms: f64,
}

impl ResultRow {
    pub fn point(&self) -> TradeoffPoint {
        TradeoffPoint {
            x: self.mean_unattractive,
            y: self.i,
            scenario: self.scenario,
            mechanism: self.mechanism,
        }
    }
}

/// Seed of a sweep cell, derived from the master seed.
pub fn cell_seed(master: u64, scenario: u32, mechanism: Mechanism) -> u64 {
    let tag = (scenario as u64) << 8 | mechanism as u64;
    splitmix64(splitmix64(master) ^ tag)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| DrawError::Unsupported(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

struct Batch {
    matrices: MatrixAccumulator,
    tally: UnattractiveTally,
    proposals: u64,
}

fn run_batch(
    instance: &Instance,
    rules: &Rules,
    mechanism: Mechanism,
    seed: u64,
    range: std::ops::Range<u64>,
) -> Result<Batch> {
    let mut drawer = Drawer::new(instance, rules, mechanism)?;
    let counter = UnattractiveCounter::new(instance);
    let mut out = Assignment::empty(instance);
    let mut batch = Batch {
        matrices: MatrixAccumulator::for_instance(instance),
        tally: UnattractiveTally::default(),
        proposals: 0,
    };
    for t in range {
        batch.proposals += drawer.trial(seed, t, &mut out, None)?;
        batch.matrices.add_unchecked(&out);
        batch.tally.add(counter.count(&out));
    }
    Ok(batch)
}

/// Simulates one cell with trial streams `0..trials` of `seed`.
pub fn run_scenario(
    instance: &Instance,
    scenario: u32,
    mechanism: Mechanism,
    trials: u64,
    seed: u64,
) -> Result<ScenarioResult> {
    let constraints = scenario_constraints(scenario)?;
    if trials == 0 {
        return Err(DrawError::ZeroTrials);
    }
    if !completable(instance, constraints, &Assignment::empty(instance))? {
        return Err(DrawError::Infeasible);
    }
    let started = Instant::now();
    let rules = Rules::new(instance, constraints)?;
    let batches = trials.min(JACKKNIFE_BATCHES);
    let bounds: Vec<_> = (0..batches)
        .map(|b| b * trials / batches..(b + 1) * trials / batches)
        .collect();
    let parts = bounds
        .into_par_iter()
        .map(|r| run_batch(instance, &rules, mechanism, seed, r))
        .collect::<Result<Vec<_>>>()?;

    let mut matrices = MatrixAccumulator::for_instance(instance);
    let mut tally = UnattractiveTally::default();
    let mut proposals = 0;
    for p in &parts {
        matrices.merge(&p.matrices)?;
        tally.merge(&p.tally);
        proposals += p.proposals;
    }
    let stats = tally.stats()?;
    let set = pair_matrices(&matrices)?;
    let i_hat = hhi_index(&set)?;
    let i = inequality(i_hat, instance.groups())?;

    let stderr_i = if parts.len() < 2 {
        0.0
    } else {
        let loo = parts
            .iter()
            .map(|p| {
                let rest = pair_matrices(&matrices.without(&p.matrices))?;
                inequality(hhi_index(&rest)?, instance.groups())
            })
            .collect::<Result<Vec<_>>>()?;
        let b = loo.len() as f64;
        let mean = loo.iter().sum::<f64>() / b;
        ((b - 1.0) / b * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    };

    let uniform = mechanism == Mechanism::Uniform;
    Ok(ScenarioResult {
        scenario,
        constraints: constraints.to_string(),
        mechanism,
        trials,
        seed,
        mean_unattractive: stats.mean,
        stderr_unattractive: stats.stderr,
        histogram: tally
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as u32, c))
            .collect(),
        i,
        i_hat,
        stderr_i,
        feasible_proportion: uniform.then(|| trials as f64 / proposals as f64),
        proposals: uniform.then_some(proposals),
        matrices: Some(set),
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// One result per (scenario, mechanism), scenario ascending then mechanism
/// in [`Mechanism::ALL`] order. Duplicate selections are collapsed.
pub fn sweep(
    instance: &Instance,
    scenarios: &[u32],
    mechanisms: &[Mechanism],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<ScenarioResult>> {
    let mut cells: Vec<(u32, Mechanism)> = scenarios
        .iter()
        .flat_map(|&s| mechanisms.iter().map(move |&m| (s, m)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
        .into_par_iter()
        .map(|(s, m)| run_scenario(instance, s, m, trials, cell_seed(master_seed, s, m)))
        .collect()
}

pub fn distortion_ratio(skip: &ScenarioResult, uniform: &ScenarioResult) -> Result<f64> {
    if skip.scenario != uniform.scenario {
        return Err(DrawError::Unsupported(format!(
            "scenarios differ: {} vs {}",
            skip.scenario, uniform.scenario
        )));
    }
    if uniform.i == 0.0 {
        return Err(DrawError::ZeroBaseline);
    }
    Ok(skip.i / uniform.i)
}

/// A cell in the (mean unattractive matches, I) plane; both minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub x: f64,
    pub y: f64,
    pub scenario: u32,
    pub mechanism: Mechanism,
}

impl TradeoffPoint {
    pub fn dominates(&self, other: &TradeoffPoint) -> bool {
        self.x <= other.x && self.y <= other.y && (self.x < other.x || self.y < other.y)
    }

    fn label(&self) -> (u32, Mechanism) {
        (self.scenario, self.mechanism)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominatedPoint {
    pub point: TradeoffPoint,
    pub dominated_by: Vec<TradeoffPoint>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub frontier: Vec<TradeoffPoint>,
    pub dominated: Vec<DominatedPoint>,
}

impl ParetoReport {
    pub fn is_dominated(&self, scenario: u32, mechanism: Mechanism) -> bool {
        self.dominators(scenario, mechanism).is_some()
    }

    pub fn dominators(&self, scenario: u32, mechanism: Mechanism) -> Option<&[TradeoffPoint]> {
        self.dominated
            .iter()
            .find(|d| d.point.label() == (scenario, mechanism))
            .map(|d| &d.dominated_by[..])
    }
}

/// Splits points into the non-dominated frontier and the rest, each listed
/// by (scenario, mechanism); every dominated point carries its dominators.
pub fn pareto_frontier(points: &[TradeoffPoint]) -> ParetoReport {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.label()
            .cmp(&b.label())
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
    });
    let mut report = ParetoReport::default();
    for p in &sorted {
        let by: Vec<_> = sorted.iter().filter(|q| q.dominates(p)).copied().collect();
        if by.is_empty() {
            report.frontier.push(*p);
        } else {
            report.dominated.push(DominatedPoint {
                point: *p,
                dominated_by: by,
            });
        }
    }
    report
}

/// Per-cell wall-clock times and run context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub elapsed_ms: Vec<CellTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub scenario: u32,
    pub mechanism: Mechanism,
    pub elapsed_ms: f64,
}

/// Structured results document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsDocument {
    pub schema: String,
    pub instance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub results: Vec<ScenarioResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

impl ResultsDocument {
    pub fn new(instance: &str, master_seed: Option<u64>, results: Vec<ScenarioResult>) -> Self {
        let metadata = Metadata {
            generator: concat!("drawlab ", env!("CARGO_PKG_VERSION")).to_string(),
            threads: None,
            elapsed_ms: results
                .iter()
                .map(|r| CellTiming {
                    scenario: r.scenario,
                    mechanism: r.mechanism,
                    elapsed_ms: r.elapsed_ms,
                })
                .collect(),
        };
        ResultsDocument {
            schema: RESULTS_SCHEMA.to_string(),
            instance: instance.to_string(),
            master_seed,
            results,
            metadata: Some(metadata),
        }
    }

    pub fn strip_matrices(mut self) -> Self {
        for r in &mut self.results {
            r.matrices = None;
        }
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    /// The document without its metadata section, for reproducibility checks.
    pub fn comparable_json(&self) -> String {
        ResultsDocument {
            metadata: None,
            ..self.clone()
        }
        .to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: ResultsDocument =
            serde_json::from_str(text).map_err(|e| DrawError::Results(e.to_string()))?;
        if doc.schema != RESULTS_SCHEMA {
            return Err(DrawError::Results(format!(
                "unsupported schema {:?}, expected {RESULTS_SCHEMA:?}",
                doc.schema
            )));
        }
        if let Some(meta) = &doc.metadata {
            for r in &mut doc.results {
                if let Some(t) = meta
                    .elapsed_ms
                    .iter()
                    .find(|t| (t.scenario, t.mechanism) == (r.scenario, r.mechanism))
                {
                    r.elapsed_ms = t.elapsed_ms;
                }
            }
        }
        Ok(doc)
    }
}

pub fn export_csv(results: &[ScenarioResult]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)
        .map_err(|e| DrawError::Results(e.to_string()))?;
    for r in results {
        w.serialize(r.row())
            .map_err(|e| DrawError::Results(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| DrawError::Results(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn import_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| DrawError::Results(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(DrawError::Results(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| DrawError::Results(e.to_string())))
        .collect()
}

/// Reads either a structured document or a delimited table.
pub fn import_rows(text: &str) -> Result<Vec<ResultRow>> {
    if text.trim_start().starts_with('{') {
        Ok(ResultsDocument::from_json(text)?
            .results
            .iter()
            .map(ScenarioResult::row)
            .collect())
    } else {
        import_csv(text)
    }
}

/// Histogram table: one row per cell, one column per unattractive count
/// between the smallest and largest value observed in any cell.
pub fn export_histograms(results: &[ScenarioResult]) -> String {
    let lo = results
        .iter()
        .filter_map(|r| r.histogram.keys().next())
        .min()
        .copied()
        .unwrap_or(0);
    let hi = results
        .iter()
        .filter_map(|r| r.histogram.keys().next_back())
        .max()
        .copied()
        .unwrap_or(0);
    let mut out = String::from("scenario,mechanism");
    for v in lo..=hi {
        out.push_str(&format!(",{v}"));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!("{},{}", r.scenario, r.mechanism));
        for v in lo..=hi {
            out.push_str(&format!(",{:.6}", r.probability(v)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1, ihf2025};

    fn pt(x: f64, y: f64, scenario: u32) -> TradeoffPoint {
        TradeoffPoint {
            x,
            y,
            scenario,
            mechanism: Mechanism::Uniform,
        }
    }

    #[test]
    fn pareto_trivial_cases() {
        let r = pareto_frontier(&[pt(1.0, 1.0, 0)]);
        assert_eq!(r.frontier.len(), 1);
        let r = pareto_frontier(&[pt(1.0, 1.0, 0), pt(1.0, 1.0, 1)]);
        assert_eq!(r.frontier.len(), 2);
        let r = pareto_frontier(&[pt(1.0, 1.0, 0), pt(2.0, 1.0, 1)]);
        assert_eq!(r.frontier, vec![pt(1.0, 1.0, 0)]);
        assert_eq!(r.dominators(1, Mechanism::Uniform).unwrap(), &[pt(1.0, 1.0, 0)]);
        assert!(pareto_frontier(&[]).frontier.is_empty());
    }

    #[test]
    fn pareto_is_order_independent() {
        let pts = vec![
            pt(3.0, 1.0, 0),
            pt(1.0, 3.0, 1),
            pt(2.0, 2.0, 2),
            pt(2.5, 2.5, 3),
            pt(3.0, 3.0, 4),
        ];
        let a = pareto_frontier(&pts);
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(a, pareto_frontier(&rev));
        assert_eq!(a.frontier.len(), 3);
        assert_eq!(a.dominators(4, Mechanism::Uniform).unwrap().len(), 4);
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..32 {
            for m in Mechanism::ALL {
                assert!(seen.insert(cell_seed(7, s, m)));
            }
        }
    }

    #[test]
    fn scenario_zero_is_always_accepted() {
        let r = run_scenario(&ihf2025(), 0, Mechanism::Uniform, 500, 1).unwrap();
        assert_eq!(r.feasible_proportion, Some(1.0));
        assert_eq!(r.histogram.values().sum::<u64>(), 500);
        let p: f64 = r.histogram_probabilities().values().sum();
        assert!((p - 1.0).abs() < 1e-12);
        assert!(r.stderr_i > 0.0);
        let skip = run_scenario(&ihf2025(), 0, Mechanism::Skip, 50, 1).unwrap();
        assert_eq!(skip.feasible_proportion, None);
    }

    #[test]
    fn zero_trials_and_bad_scenario() {
        let inst = ihf2025();
        assert!(matches!(
            run_scenario(&inst, 0, Mechanism::Uniform, 0, 1),
            Err(DrawError::ZeroTrials)
        ));
        assert!(matches!(
            run_scenario(&inst, 32, Mechanism::Uniform, 1, 1),
            Err(DrawError::ScenarioOutOfRange(32))
        ));
    }

    #[test]
    fn batching_does_not_depend_on_threads() {
        let inst = example1();
        let a = with_threads(Some(1), || run_scenario(&inst, 0, Mechanism::Skip, 997, 5))
            .unwrap()
            .unwrap();
        let b = with_threads(Some(4), || run_scenario(&inst, 0, Mechanism::Skip, 997, 5))
            .unwrap()
            .unwrap();
        assert_eq!(
            ResultsDocument::new("x", None, vec![a]).comparable_json(),
            ResultsDocument::new("x", None, vec![b]).comparable_json()
        );
    }

    #[test]
    fn distortion_ratio_rules() {
        let r = run_scenario(&ihf2025(), 0, Mechanism::Uniform, 100, 1).unwrap();
        assert_eq!(distortion_ratio(&r, &r).unwrap(), 1.0);
        let mut zero = r.clone();
        zero.i = 0.0;
        assert!(matches!(
            distortion_ratio(&r, &zero),
            Err(DrawError::ZeroBaseline)
        ));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let inst = ihf2025();
        let results = sweep(&inst, &[0, 31], &Mechanism::ALL, 40, 9).unwrap();
        assert_eq!(results.len(), 4);
        let csv = export_csv(&results).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
        let rows = import_csv(&csv).unwrap();
        assert_eq!(rows, results.iter().map(ScenarioResult::row).collect::<Vec<_>>());

        let doc = ResultsDocument::new(inst.name(), Some(9), results);
        let back = ResultsDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(import_rows(&doc.to_json()).unwrap(), rows);
        assert!(ResultsDocument::from_json(&doc.to_json().replace(RESULTS_SCHEMA, "x/0")).is_err());
    }

    #[test]
    fn histogram_table_spans_observed_values() {
        let r = run_scenario(&ihf2025(), 31, Mechanism::Uniform, 50, 3).unwrap();
        assert_eq!(export_histograms(&[r]), "scenario,mechanism,12\n31,uniform,1.000000\n");
    }
}
