//! Declarative scenario files: a single TOML document describes the game,
//! the communication graph, initial estimates, gains, the attack schedule,
//! and integration settings; this module turns one into a validated
//! [`ScenarioConfig`] plus the surrounding run metadata.
//!
//! Node and player ids are 1-based in files and 0-based everywhere in the
//! API. A file can pull shared fragments (a game table, a graph table) via a
//! top-level `include` list; fragments are merged first, in order, and the
//! including file wins on conflicts.
//!
//! ```toml
//! include = ["fragments/energy_game.toml"]
//!
//! [graph]
//! nodes = 5
//! edges = [[1, 2], [2, 3], [3, 4], [4, 5], [5, 1], [2, 1]]
//!
//! [init]
//! actions = [-2.0, -4.0, -6.0, -8.0, -10.0]
//! fill = [15.0, 10.0, 5.0, 0.0]
//!
//! [gains]
//! kappa = 10.0
//!
//! [schedule]
//! horizon = 100.0
//! [schedule.budget]
//! n0 = 2.0
//! t_f = 7.4
//! t0 = 0.4
//! t_a = 91.0
//! [schedule.generator]
//! seed = 11
//! window = 100.0
//!
//! [sim]
//! t_end = 100.0
//! step = 0.001
//! decimate = 100
//! ```
//!
//! Attack intervals are written per channel as `[start, duration]` pairs
//! under `[schedule.channels]`, keyed `"from->to"`; alternatively a
//! `[schedule.generator]` draws a schedule satisfying `[schedule.budget]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::attack::{
    generate_schedule, AttackBudget, AttackError, AttackSchedule, Channel, Interval,
};
use crate::dynamics::{Algorithm, DynamicsError, ScenarioConfig, StackedEstimate, StateLayout};
use crate::game::{builtin_game, BuiltinParams, GameDefinition, GameError};
use crate::graph::{build_digraph, Digraph, GraphError};

/// Errors from reading, parsing, or assembling a scenario file. All of them
/// are configuration errors (as opposed to solver failures at run time).
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("includes nested deeper than {limit} levels at {path} (cycle?)")]
    IncludeTooDeep { path: PathBuf, limit: usize },
    #[error("unknown game '{0}' (expected cournot, hvac, or nonquadratic)")]
    UnknownGame(String),
    #[error("unknown algorithm '{0}' (expected resilient or baseline)")]
    UnknownAlgorithm(String),
    #[error("channel key '{0}' is not of the form 'from->to' with 1-based node ids")]
    BadChannelKey(String),
    #[error("channel '{key}' references node {node}, outside 1..={nodes}")]
    ChannelOutOfRange {
        key: String,
        node: usize,
        nodes: usize,
    },
    #[error("edge ({from}, {to}) references a node outside 1..={nodes}")]
    EdgeOutOfRange {
        from: usize,
        to: usize,
        nodes: usize,
    },
    #[error("schedule has both explicit channels and a generator; pick one")]
    ScheduleConflict,
    #[error("schedule generator needs a [schedule.budget] section")]
    GeneratorNeedsBudget,
    #[error("init.actions has {got} entries, the game needs {expected}")]
    ActionLengthMismatch { expected: usize, got: usize },
    #[error("init.fill has {got} entries, expected {expected} (one per other player)")]
    FillLengthMismatch { expected: usize, got: usize },
    #[error("init.fill requires scalar (one-dimensional) player actions")]
    FillNeedsScalarActions,
    #[error("init.estimates key '{0}' is not a 1-based player id")]
    BadEstimateKey(String),
    #[error("estimate for player {player} has {got} entries, the profile needs {expected}")]
    EstimateLengthMismatch {
        player: usize,
        expected: usize,
        got: usize,
    },
    #[error("interval {index} of channel '{key}' has non-positive duration {duration}")]
    BadDuration {
        key: String,
        index: usize,
        duration: f64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Typed image of a scenario file after include resolution. Serializing it
/// back yields the fully resolved configuration (defaults baked in) that
/// run outputs embed for reproducibility.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub include: Vec<String>,
    pub game: Value,
    pub graph: GraphSection,
    #[serde(default)]
    pub init: Option<InitSection>,
    pub gains: GainsSection,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
    pub sim: SimSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub nodes: usize,
    pub edges: Vec<EdgeSpec>,
}

/// Edge as `[from, to]` (unit weight) or `[from, to, weight]`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Weighted(usize, usize, f64),
    Unit(usize, usize),
}

impl EdgeSpec {
    fn parts(self) -> (usize, usize, f64) {
        match self {
            EdgeSpec::Weighted(from, to, w) => (from, to, w),
            EdgeSpec::Unit(from, to) => (from, to, 1.0),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// Own initial actions, one scalar per action coordinate.
    pub actions: Vec<f64>,
    /// Initial estimates of the *other* players, in ascending player order
    /// skipping oneself; requires scalar actions.
    #[serde(default)]
    pub fill: Option<Vec<f64>>,
    /// Full per-player estimate overrides keyed by 1-based player id; each
    /// value replaces that player's whole estimated profile.
    #[serde(default)]
    pub estimates: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub eta_star: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Defaults to `sim.t_end`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Attack budget: drives the generator and the certification check.
    #[serde(default)]
    pub budget: Option<BudgetSection>,
    /// Explicit `[start, duration]` interval lists keyed `"from->to"`.
    #[serde(default)]
    pub channels: Option<BTreeMap<String, Vec<(f64, f64)>>>,
    #[serde(default)]
    pub generator: Option<GeneratorSection>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub n0: f64,
    pub t_f: f64,
    pub t0: f64,
    pub t_a: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub seed: u64,
    /// Attacks are confined to `[0, window)`; defaults to the horizon.
    #[serde(default)]
    pub window: Option<f64>,
    /// Channels to attack; defaults to every graph edge.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_decimate")]
    pub decimate: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_report")]
    pub report: String,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trace: default_trace(),
            summary: default_summary(),
            report: default_report(),
        }
    }
}

fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    2.0
}
fn default_step() -> f64 {
    1e-3
}
fn default_decimate() -> usize {
    1
}
fn default_algorithm() -> String {
    "resilient".into()
}
fn default_dir() -> String {
    "out".into()
}
fn default_trace() -> String {
    "trace.csv".into()
}
fn default_summary() -> String {
    "summary.json".into()
}
fn default_report() -> String {
    "report.json".into()
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replaces the schedule generator's seed.
    pub seed: Option<u64>,
    pub step: Option<f64>,
    pub decimate: Option<usize>,
    pub out_dir: Option<String>,
}

/// Output file locations after resolving the scenario and overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub report: PathBuf,
}

/// A scenario ready to run: the validated dynamics configuration plus the
/// certification budget, weights, and output plumbing around it.
#[derive(Debug)]
pub struct LoadedScenario {
    pub scenario: ScenarioConfig,
    /// Budget to certify against, when the file declares one.
    pub budget: Option<AttackBudget>,
    pub alpha: f64,
    pub beta: f64,
    pub eta_star: Option<f64>,
    pub game_label: String,
    pub generator_seed: Option<u64>,
    pub outputs: OutputPaths,
    /// The spec with defaults and overrides baked in, for embedding in
    /// output files.
    pub resolved: ScenarioSpec,
}

const INCLUDE_DEPTH_LIMIT: usize = 8;

/// Reads a scenario file and all its includes into one merged TOML value.
pub fn read_merged_value(path: &Path) -> Result<Value, ScenarioError> {
    load_value(path, 0)
}

fn load_value(path: &Path, depth: usize) -> Result<Value, ScenarioError> {
    if depth > INCLUDE_DEPTH_LIMIT {
        return Err(ScenarioError::IncludeTooDeep {
            path: path.to_path_buf(),
            limit: INCLUDE_DEPTH_LIMIT,
        });
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let own: Value = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let includes: Vec<String> = match own.get("include") {
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| {
            ScenarioError::Parse {
                path: path.to_path_buf(),
                message: format!("include: {e}"),
            }
        })?,
        None => Vec::new(),
    };
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut merged = Value::Table(toml::map::Map::new());
    for inc in &includes {
        let inc_path = base_dir.join(inc);
        let fragment = load_value(&inc_path, depth + 1)?;
        merge_value(&mut merged, fragment);
    }
    merge_value(&mut merged, own);
    Ok(merged)
}

/// Deep-merges `overlay` into `base`: tables merge key-wise, everything
/// else is replaced by the overlay.
fn merge_value(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(b), Value::Table(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Types a merged TOML value as a scenario spec.
pub fn spec_from_value(value: Value, path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    value.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads, merges, types, overrides, and builds a scenario in one call.
pub fn load_scenario(path: &Path, overrides: &Overrides) -> Result<LoadedScenario, ScenarioError> {
    let value = read_merged_value(path)?;
    let spec = spec_from_value(value, path)?;
    build_scenario(spec, overrides)
}

/// Applies overrides and assembles the runnable scenario.
pub fn build_scenario(
    mut spec: ScenarioSpec,
    overrides: &Overrides,
) -> Result<LoadedScenario, ScenarioError> {
    if let Some(step) = overrides.step {
        spec.sim.step = step;
    }
    if let Some(decimate) = overrides.decimate {
        spec.sim.decimate = decimate;
    }
    if let Some(dir) = &overrides.out_dir {
        spec.outputs.dir = dir.clone();
    }
    if let Some(seed) = overrides.seed {
        if let Some(generator) = spec
            .schedule
            .as_mut()
            .and_then(|s| s.generator.as_mut())
        {
            generator.seed = seed;
        }
    }

    let game = build_game(&spec.game)?;
    let game_label = game.label().to_string();
    let graph = build_graph(&spec.graph)?;
    let horizon = spec
        .schedule
        .as_ref()
        .and_then(|s| s.horizon)
        .unwrap_or(spec.sim.t_end);
    let budget = spec
        .schedule
        .as_ref()
        .and_then(|s| s.budget.as_ref())
        .map(|b| AttackBudget::new(b.n0, b.t_f, b.t0, b.t_a))
        .transpose()?;
    let schedule = build_schedule(spec.schedule.as_ref(), &graph, budget.as_ref(), horizon)?;
    let x0 = build_init(spec.init.as_ref(), &game)?;
    let algorithm = match spec.sim.algorithm.as_str() {
        "resilient" => Algorithm::Resilient,
        "baseline" => Algorithm::Baseline,
        other => return Err(ScenarioError::UnknownAlgorithm(other.to_string())),
    };
    let generator_seed = spec
        .schedule
        .as_ref()
        .and_then(|s| s.generator.as_ref())
        .map(|g| g.seed);

    let scenario = ScenarioConfig::new(
        game,
        graph,
        schedule,
        spec.gains.kappa,
        x0,
        spec.sim.t_end,
        spec.sim.step,
        spec.sim.decimate,
        algorithm,
    )?;

    let dir = PathBuf::from(&spec.outputs.dir);
    let outputs = OutputPaths {
        trace: dir.join(&spec.outputs.trace),
        summary: dir.join(&spec.outputs.summary),
        report: dir.join(&spec.outputs.report),
        dir,
    };

    Ok(LoadedScenario {
        scenario,
        budget,
        alpha: spec.gains.alpha,
        beta: spec.gains.beta,
        eta_star: spec.gains.eta_star,
        game_label,
        generator_seed,
        outputs,
        resolved: spec,
    })
}

/// Builds the game from its `[game]` table, dispatching on `name`.
pub fn build_game(section: &Value) -> Result<GameDefinition, ScenarioError> {
    let name = section
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ScenarioError::Parse {
            path: PathBuf::from("[game]"),
            message: "missing field `name`".into(),
        })?;
    let params = match name {
        "cournot" => {
            let p: CournotSection = typed_game_section(section)?;
            let n = p.b.len();
            BuiltinParams::Cournot {
                a: p.a.unwrap_or_else(|| vec![0.0; n]),
                b: p.b,
                c: p.c.unwrap_or_else(|| vec![0.0; n]),
                d: p.d.unwrap_or_else(|| vec![0.0; n]),
                f0: p.f0,
                f1: p.f1,
            }
        }
        "hvac" => {
            let p: HvacSection = typed_game_section(section)?;
            BuiltinParams::Hvac {
                a: p.a,
                b: p.b,
                c: p.c,
                d: p.d,
            }
        }
        "nonquadratic" => {
            let _: NonquadraticSection = typed_game_section(section)?;
            BuiltinParams::Nonquadratic
        }
        other => return Err(ScenarioError::UnknownGame(other.to_string())),
    };
    Ok(builtin_game(&params)?)
}

fn typed_game_section<T: serde::de::DeserializeOwned>(
    section: &Value,
) -> Result<T, ScenarioError> {
    section
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Parse {
            path: PathBuf::from("[game]"),
            message: e.to_string(),
        })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CournotSection {
    #[allow(dead_code)]
    name: String,
    #[serde(default)]
    a: Option<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default)]
    c: Option<Vec<f64>>,
    #[serde(default)]
    d: Option<Vec<f64>>,
    f0: f64,
    f1: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HvacSection {
    #[allow(dead_code)]
    name: String,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    d: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NonquadraticSection {
    #[allow(dead_code)]
    name: String,
}

fn build_graph(section: &GraphSection) -> Result<Digraph, ScenarioError> {
    let mut edges = Vec::with_capacity(section.edges.len());
    for spec in &section.edges {
        let (from, to, weight) = spec.parts();
        for node in [from, to] {
            if node == 0 || node > section.nodes {
                return Err(ScenarioError::EdgeOutOfRange {
                    from,
                    to,
                    nodes: section.nodes,
                });
            }
        }
        edges.push((from - 1, to - 1, weight));
    }
    Ok(build_digraph(section.nodes, &edges)?)
}

/// Parses `"from->to"` with 1-based ids into a 0-based channel.
pub fn parse_channel(key: &str, nodes: usize) -> Result<Channel, ScenarioError> {
    let (from, to) = key
        .split_once("->")
        .ok_or_else(|| ScenarioError::BadChannelKey(key.to_string()))?;
    let parse = |part: &str| -> Result<usize, ScenarioError> {
        part.trim()
            .parse::<usize>()
            .map_err(|_| ScenarioError::BadChannelKey(key.to_string()))
    };
    let (from, to) = (parse(from)?, parse(to)?);
    for node in [from, to] {
        if node == 0 || node > nodes {
            return Err(ScenarioError::ChannelOutOfRange {
                key: key.to_string(),
                node,
                nodes,
            });
        }
    }
    Ok(Channel::new(from - 1, to - 1))
}

fn build_schedule(
    section: Option<&ScheduleSection>,
    graph: &Digraph,
    budget: Option<&AttackBudget>,
    horizon: f64,
) -> Result<AttackSchedule, ScenarioError> {
    let Some(section) = section else {
        return Ok(AttackSchedule::empty(horizon)?);
    };
    match (&section.channels, &section.generator) {
        (Some(_), Some(_)) => Err(ScenarioError::ScheduleConflict),
        (Some(channels), None) => {
            let mut per_channel = BTreeMap::new();
            for (key, pairs) in channels {
                let channel = parse_channel(key, graph.node_count())?;
                let mut intervals = Vec::with_capacity(pairs.len());
                for (index, &(start, duration)) in pairs.iter().enumerate() {
                    if !duration.is_finite() || duration <= 0.0 {
                        return Err(ScenarioError::BadDuration {
                            key: key.clone(),
                            index,
                            duration,
                        });
                    }
                    intervals.push(Interval::new(start, start + duration));
                }
                per_channel.insert(channel, intervals);
            }
            Ok(AttackSchedule::new(horizon, per_channel)?)
        }
        (None, Some(generator)) => {
            let budget = budget.ok_or(ScenarioError::GeneratorNeedsBudget)?;
            let channels: BTreeSet<Channel> = match &generator.channels {
                Some(keys) => keys
                    .iter()
                    .map(|k| parse_channel(k, graph.node_count()))
                    .collect::<Result<_, _>>()?,
                None => graph
                    .edges()
                    .map(|(from, to, _)| Channel::new(from, to))
                    .collect(),
            };
            let window = generator.window.unwrap_or(horizon);
            Ok(generate_schedule(
                &channels,
                budget,
                horizon,
                window,
                generator.seed,
            )?)
        }
        (None, None) => Ok(AttackSchedule::empty(horizon)?),
    }
}

fn build_init(
    section: Option<&InitSection>,
    game: &GameDefinition,
) -> Result<StackedEstimate, ScenarioError> {
    let layout = Arc::new(StateLayout::new(game.action_dims())?);
    let n = layout.action_dim();
    let big_n = layout.player_count();
    let actions = match section {
        Some(init) => {
            if init.actions.len() != n {
                return Err(ScenarioError::ActionLengthMismatch {
                    expected: n,
                    got: init.actions.len(),
                });
            }
            DVector::from_row_slice(&init.actions)
        }
        None => DVector::zeros(n),
    };

    // Default: every player assumes the others start at their own actions.
    let mut x = DVector::zeros(layout.stacked_dim());
    for i in 0..big_n {
        x.rows_mut(i * n, n).copy_from(&actions);
    }

    if let Some(fill) = section.and_then(|s| s.fill.as_ref()) {
        if layout.action_dims().iter().any(|&d| d != 1) {
            return Err(ScenarioError::FillNeedsScalarActions);
        }
        if fill.len() != big_n - 1 {
            return Err(ScenarioError::FillLengthMismatch {
                expected: big_n - 1,
                got: fill.len(),
            });
        }
        for i in 0..big_n {
            let mut values = fill.iter();
            for j in 0..big_n {
                if j != i {
                    x[i * n + j] = *values.next().expect("fill length checked");
                }
            }
        }
    }

    if let Some(estimates) = section.and_then(|s| s.estimates.as_ref()) {
        for (key, row) in estimates {
            let player: usize = key
                .trim()
                .parse()
                .map_err(|_| ScenarioError::BadEstimateKey(key.clone()))?;
            if player == 0 || player > big_n {
                return Err(ScenarioError::BadEstimateKey(key.clone()));
            }
            if row.len() != n {
                return Err(ScenarioError::EstimateLengthMismatch {
                    player,
                    expected: n,
                    got: row.len(),
                });
            }
            x.rows_mut((player - 1) * n, n)
                .copy_from(&DVector::from_row_slice(row));
        }
    }

    Ok(StackedEstimate::new(layout, x)?)
}
