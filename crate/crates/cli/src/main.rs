use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use drawlab::experiment::{
    cell_seed, export_csv, export_histograms, import_rows, pareto_frontier, run_scenario,
    with_threads, ParetoReport, ResultsDocument, ScenarioResult, DEFAULT_TRIALS,
};
use drawlab::mechanisms::Mechanism;
use drawlab::metrics::{
    export_matrices, format_percent_matrices, hhi_index_exact, inequality_exact, rational_to_f64,
    ExactPairMatrixSet,
};
use drawlab::model::{resolve_instance, scenario_constraints, Instance};
use drawlab::oracle::{enumerate_skip, enumerate_uniform, exact_scenario0_matrices};
use drawlab::DrawError;

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_BUDGET: u8 = 4;
const EXIT_IO: u8 = 5;

/// Simulate constrained group draws and measure equal treatment.
#[derive(Parser)]
#[command(name = "drawlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected (scenario, mechanism) cells and print a summary.
    Simulate(RunArgs),
    /// Like simulate, but every scenario and both mechanisms by default.
    Sweep(SweepArgs),
    /// Pair probability matrices for one scenario and mechanism.
    Probs(ProbsArgs),
    /// Pareto frontier of a results document.
    Pareto(ParetoArgs),
    /// Exact distributions by enumeration on small instances.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Structured,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Uniform,
    Skip,
    Both,
}

impl MechanismArg {
    fn selected(self) -> Vec<Mechanism> {
        match self {
            MechanismArg::Uniform => vec![Mechanism::Uniform],
            MechanismArg::Skip => vec![Mechanism::Skip],
            MechanismArg::Both => Mechanism::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct Common {
    /// Built-in instance name or path to an instance document.
    #[arg(long, default_value = "ihf2025")]
    instance: String,
    /// Trials per cell (accepts forms like 1e6).
    #[arg(long, default_value_t = DEFAULT_TRIALS, value_parser = parse_trials)]
    trials: u64,
    /// Master seed; each cell derives its own stream family from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file for the results document.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario ids: `all`, a list `1,3,5`, ranges `0-7`, or a mix.
    #[arg(long, value_parser = parse_scenarios)]
    scenario: Scenarios,
    #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
    mechanism: MechanismArg,
    /// Also write the unattractive-match histograms as a delimited table.
    #[arg(long)]
    histograms: Option<PathBuf>,
    /// Keep the pair matrices in structured output.
    #[arg(long)]
    matrices: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_scenarios, default_value = "all")]
    scenario: Scenarios,
    #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
    mechanism: MechanismArg,
    #[arg(long)]
    histograms: Option<PathBuf>,
    #[arg(long)]
    matrices: bool,
}

#[derive(Args)]
struct ProbsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: u32,
    #[arg(long, value_enum)]
    mechanism: MechanismArg,
}

#[derive(Args)]
struct ParetoArgs {
    /// Results document (structured or delimited).
    input: PathBuf,
    /// Restrict the analysis to one mechanism.
    #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
    mechanism: MechanismArg,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "example1")]
    instance: String,
    #[arg(long, default_value_t = 0)]
    scenario: u32,
    /// Also simulate this many trials per mechanism and compare.
    #[arg(long, value_parser = parse_trials)]
    compare: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Debug)]
struct Scenarios(Vec<u32>);

fn parse_scenarios(s: &str) -> Result<Scenarios, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Scenarios((0..32).collect()));
    }
    let mut ids = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let lo: u32 = lo.parse().map_err(|_| format!("bad scenario id {lo:?}"))?;
        let hi: u32 = hi.parse().map_err(|_| format!("bad scenario id {hi:?}"))?;
        if lo > hi || hi > 31 {
            return Err(format!("scenario range {part:?} outside 0..=31"));
        }
        ids.extend(lo..=hi);
    }
    if ids.is_empty() {
        return Err("no scenarios selected".into());
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(Scenarios(ids))
}

fn parse_trials(s: &str) -> Result<u64, String> {
    let clean = s.replace('_', "");
    let value = match clean.parse::<u64>() {
        Ok(v) => v,
        Err(_) => {
            let f: f64 = clean.parse().map_err(|_| format!("bad trial count {s:?}"))?;
            if f.fract() != 0.0 || !(0.0..=u64::MAX as f64).contains(&f) {
                return Err(format!("bad trial count {s:?}"));
            }
            f as u64
        }
    };
    if value == 0 {
        return Err("trials must be at least 1".into());
    }
    Ok(value)
}

fn load(source: &str) -> Result<Instance> {
    resolve_instance(source).with_context(|| format!("loading instance {source:?}"))
}

fn write_out(path: &PathBuf, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_cells(
    instance: &Instance,
    scenarios: &[u32],
    mechanisms: &[Mechanism],
    common: &Common,
) -> Result<Vec<ScenarioResult>> {
    let mut cells: Vec<(u32, Mechanism)> = scenarios
        .iter()
        .flat_map(|&s| mechanisms.iter().map(move |&m| (s, m)))
        .collect();
    cells.sort_unstable();
    let results = with_threads(common.threads, || {
        cells
            .iter()
            .map(|&(s, m)| {
                run_scenario(instance, s, m, common.trials, cell_seed(common.seed, s, m))
                    .with_context(|| format!("scenario {s}, {m} mechanism"))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(results)
}

fn summary_table(results: &[ScenarioResult]) -> String {
    let mut out = format!(
        "{:>8}  {:<11} {:<8} {:>9}  {:>18}  {:>20}  {:>9}  {:>10}\n",
        "scenario", "constraints", "mech", "trials", "unattractive", "I", "feasible", "ms"
    );
    for r in results {
        let feasible = r
            .feasible_proportion
            .map(|p| format!("{:.1}%", 100.0 * p))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:>8}  {:<11} {:<8} {:>9}  {:>9.4} +/- {:.4}  {:>8.6} +/- {:.6}  {:>9}  {:>10.1}\n",
            r.scenario,
            r.constraints,
            r.mechanism,
            r.trials,
            r.mean_unattractive,
            r.stderr_unattractive,
            r.i,
            r.stderr_i,
            feasible,
            r.elapsed_ms
        ));
    }
    out
}

fn cmd_simulate(
    common: Common,
    scenarios: &[u32],
    mechanism: MechanismArg,
    histograms: Option<PathBuf>,
    matrices: bool,
) -> Result<()> {
    let instance = load(&common.instance)?;
    let results = run_cells(&instance, scenarios, &mechanism.selected(), &common)?;
    if let Some(path) = &histograms {
        write_out(path, &export_histograms(&results))?;
    }
    let mut doc = ResultsDocument::new(instance.name(), Some(common.seed), results);
    if let Some(meta) = doc.metadata.as_mut() {
        meta.threads = common.threads;
    }
    if !matrices {
        doc = doc.strip_matrices();
    }
    let table = summary_table(&doc.results);
    let document = match common.format {
        Format::Structured => doc.to_json(),
        Format::Table => export_csv(&doc.results)?,
    };
    match &common.out {
        Some(path) => {
            write_out(path, &document)?;
            print!("{table}");
        }
        None if common.format == Format::Structured => print!("{document}"),
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_probs(args: ProbsArgs) -> Result<()> {
    let instance = load(&args.common.instance)?;
    let mechanisms = args.mechanism.selected();
    if mechanisms.len() != 1 {
        bail!(DrawError::Unsupported("probs needs a single mechanism".into()));
    }
    let results = run_cells(&instance, &[args.scenario], &mechanisms, &args.common)?;
    let r = &results[0];
    let set = r.matrices.as_ref().expect("run_scenario keeps matrices");
    let delimited = export_matrices(&instance, set);
    if let Some(path) = &args.common.out {
        write_out(path, &delimited)?;
    }
    match args.common.format {
        Format::Structured if args.common.out.is_none() => print!("{delimited}"),
        _ => {
            println!(
                "scenario {} ({}), {} mechanism, {} trials: I = {:.6}",
                r.scenario, r.constraints, r.mechanism, r.trials, r.i
            );
            println!();
            print!("{}", format_percent_matrices(&instance, set));
        }
    }
    Ok(())
}

fn pareto_table(report: &ParetoReport) -> String {
    let mut out = String::from("frontier\n");
    for p in &report.frontier {
        out.push_str(&format!(
            "  {:>2} {:<8} x={:.4} I={:.6}\n",
            p.scenario, p.mechanism, p.x, p.y
        ));
    }
    out.push_str("dominated\n");
    for d in &report.dominated {
        let by: Vec<String> = d
            .dominated_by
            .iter()
            .map(|q| format!("{}/{}", q.scenario, q.mechanism))
            .collect();
        out.push_str(&format!(
            "  {:>2} {:<8} x={:.4} I={:.6}  by {}\n",
            d.point.scenario,
            d.point.mechanism,
            d.point.x,
            d.point.y,
            by.join(", ")
        ));
    }
    out
}

fn cmd_pareto(args: ParetoArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let keep = args.mechanism.selected();
    let points: Vec<_> = import_rows(&text)
        .with_context(|| format!("parsing {}", args.input.display()))?
        .iter()
        .filter(|r| keep.contains(&r.mechanism))
        .map(|r| r.point())
        .collect();
    if points.is_empty() {
        bail!(DrawError::Results("no result rows selected".into()));
    }
    let report = pareto_frontier(&points);
    let rendered = match args.format {
        Format::Table => pareto_table(&report),
        Format::Structured => {
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            s
        }
    };
    match &args.out {
        Some(path) => write_out(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn print_exact(instance: &Instance, m: &ExactPairMatrixSet) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for (b, (k, l)) in drawlab::metrics::pot_pairs(m.pots).into_iter().enumerate() {
        writeln!(out, "  pots {}-{}", k + 1, l + 1)?;
        for (i, t) in instance.pot_teams(k).iter().enumerate() {
            let cells: Vec<String> = (0..m.groups)
                .map(|j| format!("{:>7}", m.blocks[b][i * m.groups + j].to_string()))
                .collect();
            writeln!(out, "    {:<12} {}", t.name, cells.join(" "))?;
        }
    }
    let i_hat = hhi_index_exact(m)?;
    let i = inequality_exact(&i_hat, m.groups)?;
    writeln!(
        out,
        "  I_hat = {i_hat} ({:.6})   I = {i} ({:.6})",
        rational_to_f64(&i_hat),
        rational_to_f64(&i)
    )?;
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let instance = load(&args.instance)?;
    let constraints = scenario_constraints(args.scenario)?;
    println!(
        "instance {}, scenario {} ({constraints})",
        instance.name(),
        args.scenario
    );
    let uniform = match enumerate_uniform(&instance, constraints) {
        Err(e @ DrawError::EnumerationBudgetExceeded { .. }) => {
            if args.scenario != 0 || !instance.forbidden_pairs().is_empty() {
                return Err(e.into());
            }
            println!("{e}; using the closed-form scenario-0 matrices instead");
            println!("uniform (closed form)");
            print_exact(&instance, &exact_scenario0_matrices(&instance)?)?;
            return Ok(());
        }
        other => other?,
    };
    let skip = enumerate_skip(&instance, constraints)?;
    println!(
        "valid assignments: {} of {} ({} meet the host exclusion)",
        uniform.feasible, uniform.total, uniform.host_feasible
    );
    for (label, dist) in [("uniform", &uniform.distribution), ("skip", &skip)] {
        println!("{label}: {} outcomes, {} classes", dist.denominator, dist.classes.len());
        print_exact(&instance, &dist.matrices)?;
    }
    let differing = uniform
        .distribution
        .classes
        .iter()
        .filter(|c| {
            let s = skip.class_weight(&c.groups) as u128 * uniform.distribution.denominator as u128;
            s != c.weight as u128 * skip.denominator as u128
        })
        .count();
    println!("classes whose probability differs between mechanisms: {differing}");

    if let Some(trials) = args.compare {
        println!("Monte Carlo comparison at {trials} trials (max |z| over cells)");
        for (m, dist) in [(Mechanism::Uniform, &uniform.distribution), (Mechanism::Skip, &skip)] {
            let r = run_scenario(&instance, args.scenario, m, trials, cell_seed(args.seed, args.scenario, m))?;
            let set = r.matrices.as_ref().expect("matrices kept");
            let mut worst = 0.0f64;
            for (eb, xb) in set.blocks.iter().zip(&dist.matrices.blocks) {
                for (&p_hat, x) in eb.iter().zip(xb) {
                    let p = rational_to_f64(x);
                    let sd = (p * (1.0 - p) / trials as f64).sqrt();
                    if sd > 0.0 {
                        worst = worst.max((p_hat - p).abs() / sd);
                    } else if p_hat != p {
                        worst = f64::INFINITY;
                    }
                }
            }
            println!("  {m:<8} {worst:.2}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DrawError>() {
            return match e {
                DrawError::Infeasible => EXIT_INFEASIBLE,
                DrawError::ProposalBudgetExhausted { .. }
                | DrawError::EnumerationBudgetExceeded { .. } => EXIT_BUDGET,
                DrawError::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a.common, &a.scenario.0, a.mechanism, a.histograms, a.matrices),
        Command::Sweep(a) => cmd_simulate(a.common, &a.scenario.0, a.mechanism, a.histograms, a.matrices),
        Command::Probs(a) => cmd_probs(a),
        Command::Pareto(a) => cmd_pareto(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
