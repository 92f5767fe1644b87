//! Scenario-driven command line: run simulations, sweep one experiment axis,
//! print equilibria, and check attack schedules against budgets.
//!
//! Every command takes a scenario TOML file (see the `neseek::scenario`
//! docs for the format). `run` writes a trace CSV, a summary JSON, and a
//! certification JSON into the scenario's output directory; all JSON
//! artifacts embed the fully resolved configuration. Exit codes: 0 for a
//! completed run (convergent or not), 2 for configuration errors, 3 for
//! solver failures and diverged integrations (which still write their
//! partial artifacts).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use thiserror::Error;

use neseek::analysis::{
    attack_coupling_norm, certify, stacked_lipschitz, AnalysisConfig, AnalysisError, RateReport,
};
use neseek::attack::verify_budget;
use neseek::dynamics::{integrate, DynamicsError};
use neseek::game::{
    estimate_regularity, solve_ne, GameDefinition, GameError, GameRegularity, Provenance,
};
use neseek::report::{
    reference_check, summarize, write_json_file, write_trace_file, DivergenceInfo, ReportError,
    RunSummary,
};
use neseek::scenario::{
    build_scenario, load_scenario, read_merged_value, spec_from_value, LoadedScenario, Overrides,
    ScenarioError,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

/// Box, sample count, and seed used when regularity constants must be
/// sampled (games without a constant pseudo-gradient Jacobian).
const REGULARITY_BOX: (f64, f64) = (-10.0, 10.0);
const REGULARITY_SAMPLES: usize = 500;
const REGULARITY_SEED: u64 = 2718;

#[derive(Parser)]
#[command(
    name = "neseek",
    version,
    about = "Simulate and certify attack-resilient distributed Nash equilibrium seeking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: GlobalFlags,
}

#[derive(Args)]
struct GlobalFlags {
    /// Output directory, overriding the scenario's `[outputs] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Schedule generator seed, overriding the scenario's.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Integration step in seconds, overriding the scenario's.
    #[arg(long, global = true, value_name = "SECONDS")]
    step: Option<f64>,
    /// Keep every K-th sample, overriding the scenario's decimation.
    #[arg(long, global = true, value_name = "K")]
    decimate: Option<usize>,
    /// Suppress console output (artifacts are still written).
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario, certify its schedule, and write artifacts.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
    /// Run a scenario once per value along one axis and tabulate the rates.
    Sweep {
        /// Base scenario TOML file.
        scenario: PathBuf,
        /// Which knob to vary.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Axis values: gains for kappa, counts for players, names for
        /// topology (cycle, bidirectional, complete), schedule fragment
        /// files for budget.
        #[arg(required = true)]
        values: Vec<String>,
    },
    /// Solve the scenario's game and print the equilibrium and constants.
    Oracle {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
    /// Check the scenario's schedule against its declared budget.
    VerifySchedule {
        /// Scenario TOML file (needs a [schedule.budget] section).
        scenario: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    /// Consensus gain `gains.kappa`.
    Kappa,
    /// Player count: rebuilds the energy game and a one-directional cycle
    /// graph for each N, dropping the init and schedule sections.
    Players,
    /// Edge pattern on the same node set.
    Topology,
    /// Replace the whole [schedule] section from fragment files.
    Budget,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Kappa => "kappa",
            Axis::Players => "players",
            Axis::Topology => "topology",
            Axis::Budget => "budget",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("integration diverged at t = {t} s (state norm {norm:.3e}); partial artifacts written")]
    Diverged { t: f64, norm: f64 },
    #[error("{0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Artifact {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sweep member '{label}': {source}")]
    SweepMember {
        label: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Diverged { .. } => EXIT_SOLVER,
            CliError::Game(GameError::NonConvergence { .. })
            | CliError::Game(GameError::SingularJacobian { .. }) => EXIT_SOLVER,
            CliError::Scenario(ScenarioError::Dynamics(DynamicsError::Diverged { .. })) => {
                EXIT_SOLVER
            }
            CliError::SweepMember { source, .. } => source.exit_code(),
            _ => EXIT_CONFIG,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut cause = std::error::Error::source(&error);
            while let Some(inner) = cause {
                eprintln!("  caused by: {inner}");
                cause = inner.source();
            }
            ExitCode::from(error.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.flags.seed,
        step: cli.flags.step,
        decimate: cli.flags.decimate,
        out_dir: cli.flags.out.clone(),
    };
    match &cli.command {
        Command::Run { scenario } => {
            let loaded = load_scenario(scenario, &overrides)?;
            run_loaded(loaded, cli.flags.quiet).map(|_| ())
        }
        Command::Sweep {
            scenario,
            axis,
            values,
        } => sweep(scenario, *axis, values, &overrides, cli.flags.quiet),
        Command::Oracle { scenario } => oracle(scenario, &overrides),
        Command::VerifySchedule { scenario } => verify_schedule(scenario, &overrides),
    }
}

/// Artifacts of one completed (or diverged) run.
struct RunArtifacts {
    summary: RunSummary,
    certification: Option<RateReport>,
}

/// Integrates, certifies, and writes trace/summary/report for one loaded
/// scenario. Divergence still writes the partial artifacts and surfaces as
/// an error afterwards.
fn run_loaded(loaded: LoadedScenario, quiet: bool) -> Result<RunArtifacts, CliError> {
    let config = &loaded.scenario;
    // The oracle pins the error metric; builtin games solve from zero.
    let equilibrium = solve_ne(&config.game, &DVector::zeros(config.game.total_dim())).ok();
    let constants = regularity_constants(&config.game)?;
    // Games that are only locally regular can sample a non-positive
    // strong-monotonicity constant; the run then simply carries no
    // certificate instead of failing.
    let (certification, certification_note) = match AnalysisConfig::new(
        loaded.alpha,
        loaded.beta,
        loaded.eta_star,
        config.game.player_count(),
        constants.epsilon,
        constants.iota,
        config.bundle.lambda2,
        attack_coupling_norm(config)?,
    ) {
        Ok(analysis_cfg) => (
            Some(certify(config, loaded.budget.as_ref(), &analysis_cfg)),
            None,
        ),
        Err(reason) => (None, Some(reason.to_string())),
    };

    let (trace, divergence) = match integrate(config, equilibrium.as_ref()) {
        Ok(trace) => (trace, None),
        Err(DynamicsError::Diverged { t, norm, partial }) => {
            (*partial, Some(DivergenceInfo { t, norm }))
        }
        Err(other) => return Err(ScenarioError::from(other).into()),
    };
    let summary = summarize(&loaded, &trace, equilibrium.as_ref(), divergence)?;

    write_trace_file(&loaded.outputs.trace, &trace).map_err(|source| CliError::Artifact {
        path: loaded.outputs.trace.clone(),
        source,
    })?;
    write_json_file(&loaded.outputs.summary, &summary)?;
    let document = CertificationDocument {
        scenario: &summary.scenario,
        certification: certification.as_ref(),
        note: certification_note.as_deref(),
    };
    write_json_file(&loaded.outputs.report, &document)?;

    if !quiet {
        print_run(&summary, certification.as_ref(), certification_note.as_deref());
    }
    match divergence {
        Some(info) => Err(CliError::Diverged {
            t: info.t,
            norm: info.norm,
        }),
        None => Ok(RunArtifacts {
            summary,
            certification,
        }),
    }
}

/// Certification JSON: the rate report plus the resolved scenario.
#[derive(serde::Serialize)]
struct CertificationDocument<'a> {
    scenario: &'a serde_json::Value,
    /// None when no certificate could even be attempted.
    certification: Option<&'a RateReport>,
    /// Why certification was skipped, when it was.
    note: Option<&'a str>,
}

fn print_run(summary: &RunSummary, certification: Option<&RateReport>, note: Option<&str>) {
    println!(
        "run {} ({}): {} samples to t = {} s",
        summary.game, summary.algorithm, summary.samples, summary.final_time
    );
    match summary.final_relative_error {
        Some(rel) => println!(
            "  final relative error {rel:.3e}, consensus gap {:.3e}, converged: {}",
            summary.final_consensus_gap,
            summary.converged.unwrap_or(false)
        ),
        None => println!(
            "  no equilibrium oracle; consensus gap {:.3e}",
            summary.final_consensus_gap
        ),
    }
    if let Some(fit) = &summary.fit {
        println!(
            "  fitted decay rate {:.4} (r^2 = {:.3})",
            fit.eta_hat, fit.r_squared
        );
    }
    if summary.diverged {
        println!("  integration diverged; artifacts hold the partial trace");
    }
    match certification {
        Some(report) if report.certified => println!(
            "  certificate: granted, rate eta = {:.4}, overshoot = {:.3e}",
            report.eta.unwrap_or(f64::NAN),
            report.varsigma.unwrap_or(f64::NAN)
        ),
        Some(report) => {
            let c = &report.conditions;
            println!(
                "  certificate: none (gain above bound: {}, frequency: {}, duration: {}, rate positive: {})",
                c.gain_above_bound, c.frequency_satisfied, c.duration_satisfied, c.rate_positive
            );
        }
        None => println!(
            "  certificate: unavailable ({})",
            note.unwrap_or("constants could not be established")
        ),
    }
}

/// Regularity constants for certification: analytic when the game carries
/// them, otherwise sampled on a fixed box; the Lipschitz constant also
/// covers the stacked estimate-space map.
fn regularity_constants(game: &GameDefinition) -> Result<GameRegularity, CliError> {
    let bounds = vec![REGULARITY_BOX; game.total_dim()];
    let mut constants = estimate_regularity(game, &bounds, REGULARITY_SAMPLES, REGULARITY_SEED)?;
    let stacked = stacked_lipschitz(game, &bounds, REGULARITY_SAMPLES, REGULARITY_SEED)?;
    constants.iota = constants.iota.max(stacked);
    Ok(constants)
}

fn oracle(path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let loaded = load_scenario(path, overrides)?;
    let game = &loaded.scenario.game;
    let solution = match solve_ne(game, &DVector::zeros(game.total_dim())) {
        Ok(solution) => solution,
        Err(GameError::NonConvergence {
            iterations,
            residual,
            last_iterate,
        }) => {
            eprintln!(
                "solver stalled after {iterations} iterations at residual {residual:.3e}"
            );
            eprintln!("last iterate: {:?}", last_iterate.as_slice());
            return Err(GameError::NonConvergence {
                iterations,
                residual,
                last_iterate,
            }
            .into());
        }
        Err(other) => return Err(other.into()),
    };
    let constants = regularity_constants(game)?;
    let lambda2 = loaded.scenario.bundle.lambda2;

    println!("game: {} ({} players)", loaded.game_label, game.player_count());
    println!("equilibrium: {:?}", solution.x_star.as_slice());
    println!(
        "residual: {:.3e} after {} iterations",
        solution.residual, solution.iterations
    );
    println!(
        "regularity: epsilon = {}, iota = {} ({})",
        constants.epsilon,
        constants.iota,
        match constants.provenance {
            Provenance::Analytic => "analytic",
            Provenance::Sampled => "sampled",
        }
    );
    println!("lambda2 = {lambda2}");
    match neseek::analysis::kappa_bound(constants.epsilon, constants.iota, lambda2) {
        Ok(bound) => println!(
            "gain bound kappa* = {bound}; scenario kappa = {} ({})",
            loaded.scenario.kappa,
            if loaded.scenario.kappa > bound {
                "above the bound"
            } else {
                "below the bound"
            }
        ),
        Err(reason) => println!("gain bound kappa*: unavailable ({reason})"),
    }
    if let Some(check) = reference_check(game, &solution.x_star)? {
        println!("reference vector: {:?}", check.reference);
        println!(
            "  largest gap to the solved equilibrium: {:.4}",
            check.max_component_gap
        );
        if !check.consistent {
            println!(
                "  warning: the reference fails its own first-order conditions at player(s) {:?}; gradient there {:?}",
                check.inconsistent_players, check.gradient_at_reference
            );
        }
    }
    Ok(())
}

fn verify_schedule(path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let loaded = load_scenario(path, overrides)?;
    let budget = loaded.budget.ok_or_else(|| {
        CliError::Config("scenario declares no [schedule.budget] to verify against".into())
    })?;
    let report = verify_budget(&loaded.scenario.schedule, &budget);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Report(ReportError::Json(e)))?;
    println!("{json}");
    println!(
        "schedule holds the budget: {} (frequency {}, duration {})",
        report.frequency_ok && report.duration_ok,
        report.frequency_ok,
        report.duration_ok
    );
    Ok(())
}

/// One row of the consolidated sweep table.
struct SweepRow {
    value: String,
    summary: RunSummary,
    certification: Option<RateReport>,
}

fn sweep(
    path: &Path,
    axis: Axis,
    values: &[String],
    overrides: &Overrides,
    quiet: bool,
) -> Result<(), CliError> {
    let base = read_merged_value(path)?;
    let base_spec = spec_from_value(base.clone(), path)?;
    let root = PathBuf::from(
        overrides
            .out_dir
            .clone()
            .unwrap_or_else(|| base_spec.outputs.dir.clone()),
    );

    let mut rows = Vec::with_capacity(values.len());
    for raw in values {
        let label = format!("{}_{}", axis.name(), value_slug(raw));
        let member = (|| -> Result<SweepRow, CliError> {
            let mut value = base.clone();
            apply_axis(&mut value, axis, raw)?;
            let spec = spec_from_value(value, path)?;
            let member_overrides = Overrides {
                out_dir: Some(root.join(&label).to_string_lossy().into_owned()),
                ..overrides.clone()
            };
            let loaded = build_scenario(spec, &member_overrides)?;
            let artifacts = run_loaded(loaded, quiet)?;
            Ok(SweepRow {
                value: raw.clone(),
                summary: artifacts.summary,
                certification: artifacts.certification,
            })
        })();
        rows.push(member.map_err(|source| CliError::SweepMember {
            label: label.clone(),
            source: Box::new(source),
        })?);
    }

    let table = root.join("sweep.csv");
    write_sweep_csv(&table, axis, &rows).map_err(|source| CliError::Artifact {
        path: table.clone(),
        source,
    })?;
    if !quiet {
        println!("sweep over {}: {} runs, table at {}", axis.name(), rows.len(), table.display());
    }
    Ok(())
}

/// Keeps axis values usable as directory names.
fn value_slug(raw: &str) -> String {
    let stem = Path::new(raw)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| raw.to_string());
    stem.chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn write_sweep_csv(path: &Path, axis: Axis, rows: &[SweepRow]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "axis,value,final_relative_error,final_consensus_gap,eta_hat,r_squared,\
         certified,eta_certified,converged,diverged"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            axis.name(),
            row.value,
            opt(row.summary.final_relative_error),
            row.summary.final_consensus_gap,
            opt(row.summary.fit.as_ref().map(|f| f.eta_hat)),
            opt(row.summary.fit.as_ref().map(|f| f.r_squared)),
            row.certification.as_ref().is_some_and(|r| r.certified),
            opt(row.certification.as_ref().and_then(|r| r.eta)),
            row.summary
                .converged
                .map(|b| b.to_string())
                .unwrap_or_default(),
            row.summary.diverged,
        )?;
    }
    w.flush()
}

/// Rewrites the merged scenario value for one axis setting.
fn apply_axis(value: &mut toml::Value, axis: Axis, raw: &str) -> Result<(), CliError> {
    match axis {
        Axis::Kappa => {
            let kappa: f64 = raw
                .parse()
                .map_err(|_| CliError::Config(format!("kappa value '{raw}' is not a number")))?;
            set_key(value, &["gains", "kappa"], toml::Value::Float(kappa))
        }
        Axis::Players => {
            let n: usize = raw.parse().map_err(|_| {
                CliError::Config(format!("player count '{raw}' is not an integer"))
            })?;
            if n < 2 {
                return Err(CliError::Config(format!(
                    "player count must be at least 2, got {n}"
                )));
            }
            let game_name = value
                .get("game")
                .and_then(|g| g.get("name"))
                .and_then(toml::Value::as_str);
            if game_name != Some("hvac") {
                return Err(CliError::Config(
                    "the players axis rescales the energy game; the scenario must use game \
                     name = \"hvac\""
                        .into(),
                ));
            }
            // Comfort targets follow the benchmark's arithmetic pattern.
            let ones = toml::Value::Array(vec![toml::Value::Float(1.0); n]);
            let targets = toml::Value::Array(
                (1..=n)
                    .map(|i| toml::Value::Float(5.0 * (i as f64 + 1.0)))
                    .collect(),
            );
            set_key(value, &["game", "a"], ones)?;
            set_key(value, &["game", "b"], targets)?;
            set_key(
                value,
                &["graph", "nodes"],
                toml::Value::Integer(n as i64),
            )?;
            set_key(value, &["graph", "edges"], cycle_edges(n))?;
            remove_key(value, "init");
            remove_key(value, "schedule");
            Ok(())
        }
        Axis::Topology => {
            let nodes = value
                .get("graph")
                .and_then(|g| g.get("nodes"))
                .and_then(toml::Value::as_integer)
                .ok_or_else(|| {
                    CliError::Config("the topology axis needs [graph] nodes in the scenario".into())
                })? as usize;
            let edges = match raw {
                "cycle" => cycle_edges(nodes),
                "bidirectional" => bidirectional_edges(nodes),
                "complete" => complete_edges(nodes),
                other => {
                    return Err(CliError::Config(format!(
                        "unknown topology '{other}' (expected cycle, bidirectional, or complete)"
                    )))
                }
            };
            set_key(value, &["graph", "edges"], edges)
        }
        Axis::Budget => {
            let fragment_path = Path::new(raw);
            let fragment = read_merged_value(fragment_path)?;
            let schedule = fragment.get("schedule").cloned().ok_or_else(|| {
                CliError::Config(format!("fragment {raw} has no [schedule] section"))
            })?;
            remove_key(value, "schedule");
            set_key(value, &["schedule"], schedule)
        }
    }
}

fn edge_value(from: usize, to: usize) -> toml::Value {
    toml::Value::Array(vec![
        toml::Value::Integer(from as i64),
        toml::Value::Integer(to as i64),
    ])
}

/// One-directional ring `1 -> 2 -> ... -> n -> 1` (1-based).
fn cycle_edges(n: usize) -> toml::Value {
    toml::Value::Array((1..=n).map(|i| edge_value(i, i % n + 1)).collect())
}

fn bidirectional_edges(n: usize) -> toml::Value {
    let mut edges: Vec<toml::Value> = (1..=n).map(|i| edge_value(i, i % n + 1)).collect();
    edges.extend((1..=n).map(|i| edge_value(i % n + 1, i)));
    toml::Value::Array(edges)
}

fn complete_edges(n: usize) -> toml::Value {
    let mut edges = Vec::with_capacity(n * (n - 1));
    for i in 1..=n {
        for j in 1..=n {
            if i != j {
                edges.push(edge_value(i, j));
            }
        }
    }
    toml::Value::Array(edges)
}

/// Sets `root[keys[0]]...[keys.last()] = new`, creating tables on the way.
fn set_key(root: &mut toml::Value, keys: &[&str], new: toml::Value) -> Result<(), CliError> {
    let mut slot = root;
    for key in &keys[..keys.len() - 1] {
        let table = slot.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("scenario entry '{key}' is not a table"))
        })?;
        slot = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let last = keys.last().expect("set_key needs at least one key");
    slot.as_table_mut()
        .ok_or_else(|| CliError::Config(format!("scenario entry '{last}' is not inside a table")))?
        .insert((*last).to_string(), new);
    Ok(())
}

fn remove_key(root: &mut toml::Value, key: &str) {
    if let Some(table) = root.as_table_mut() {
        table.remove(key);
    }
}
