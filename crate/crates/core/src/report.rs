//! Run artifacts: the trace CSV and the JSON run summary.
//!
//! The CSV has one row per recorded sample with columns `time`, `mode`, the
//! `N*n` state coordinates named `x{i}_{j}[k]` (player `i`'s estimate of
//! player `j`'s coordinate `k`; `i` and `j` are 1-based, `k` 0-based), then
//! `error_to_ne` (empty when no equilibrium oracle was available) and
//! `consensus_gap`. Numbers are written with the shortest representation
//! that round-trips, so identical runs produce byte-identical files.

use std::io::{self, Write as _};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{fit_rate, relative_error_series, FittedRate};
use crate::dynamics::{Algorithm, DynamicsError, SimulationTrace, SnapReport, StateLayout};
use crate::game::{pseudo_gradient, GameDefinition, GameError, NESolution};
use crate::scenario::LoadedScenario;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("cannot serialize summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Header line for a trace CSV with the given state layout.
pub fn trace_csv_header(layout: &StateLayout) -> String {
    let mut columns = Vec::with_capacity(layout.stacked_dim() + 4);
    columns.push("time".to_string());
    columns.push("mode".to_string());
    for i in 0..layout.player_count() {
        for j in 0..layout.player_count() {
            for k in 0..layout.action_dims()[j] {
                columns.push(format!("x{}_{}[{}]", i + 1, j + 1, k));
            }
        }
    }
    columns.push("error_to_ne".to_string());
    columns.push("consensus_gap".to_string());
    columns.join(",")
}

/// Writes the whole trace as CSV.
pub fn write_trace_csv<W: io::Write>(writer: W, trace: &SimulationTrace) -> io::Result<()> {
    let mut w = io::BufWriter::new(writer);
    writeln!(w, "{}", trace_csv_header(trace.layout()))?;
    let errors = trace.errors_to_ne();
    let gaps = trace.consensus_gaps();
    for (idx, (t, state)) in trace.times().iter().zip(trace.states()).enumerate() {
        write!(w, "{},{}", t, trace.modes()[idx])?;
        for value in state.vector().iter() {
            write!(w, ",{value}")?;
        }
        match errors {
            Some(series) => write!(w, ",{}", series[idx])?,
            None => write!(w, ",")?,
        }
        writeln!(w, ",{}", gaps[idx])?;
    }
    w.flush()
}

/// Writes the trace CSV to a path, creating parent directories.
pub fn write_trace_file(path: &Path, trace: &SimulationTrace) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_trace_csv(std::fs::File::create(path)?, trace)
}

/// Serializes any report as pretty JSON to a path, creating parents.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

/// Interval count and attacked seconds for one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelStats {
    pub channel: String,
    pub intervals: usize,
    pub attacked_seconds: f64,
}

/// Schedule-level accounting echoed into the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleSummary {
    pub horizon: f64,
    pub channels: Vec<ChannelStats>,
    /// Measure of the union of all attack intervals.
    pub attacked_seconds: f64,
    pub union_intervals: usize,
}

/// Where and how hard the divergence guard tripped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceInfo {
    pub t: f64,
    pub norm: f64,
}

/// The solved equilibrium the run was measured against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumInfo {
    pub actions: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Comparison of the solved equilibrium against a published reference
/// vector attached to the game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceCheck {
    pub reference: Vec<f64>,
    pub solved: Vec<f64>,
    pub max_component_gap: f64,
    /// Pseudo-gradient evaluated at the reference vector.
    pub gradient_at_reference: Vec<f64>,
    /// 1-based players whose own gradient is not zero at the reference,
    /// i.e. where the reference fails its own first-order conditions.
    pub inconsistent_players: Vec<usize>,
    /// True when the reference satisfies the first-order conditions.
    pub consistent: bool,
}

/// Own-gradient tolerance above which a reference component is flagged.
const REFERENCE_GRADIENT_TOL: f64 = 1e-3;

/// Checks a game's attached reference equilibrium, if any, against the
/// solved one and against its own first-order conditions.
pub fn reference_check(
    game: &GameDefinition,
    solved: &DVector<f64>,
) -> Result<Option<ReferenceCheck>, GameError> {
    let Some(reference) = game.reference_equilibrium() else {
        return Ok(None);
    };
    let gradient = pseudo_gradient(game, reference)?;
    let mut inconsistent = Vec::new();
    for i in 0..game.player_count() {
        let block = gradient.rows(game.offset(i), game.action_dims()[i]);
        if block.norm() > REFERENCE_GRADIENT_TOL {
            inconsistent.push(i + 1);
        }
    }
    let max_gap = (reference - solved).abs().max();
    Ok(Some(ReferenceCheck {
        reference: reference.iter().copied().collect(),
        solved: solved.iter().copied().collect(),
        max_component_gap: max_gap,
        gradient_at_reference: gradient.iter().copied().collect(),
        consistent: inconsistent.is_empty(),
        inconsistent_players: inconsistent,
    }))
}

/// Everything a finished (or diverged) run reports, embedding the resolved
/// scenario for reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub game: String,
    pub algorithm: Algorithm,
    pub players: usize,
    pub t_end: f64,
    pub step: f64,
    pub decimate: usize,
    pub samples: usize,
    pub generator_seed: Option<u64>,
    pub schedule: ScheduleSummary,
    pub snap: SnapReport,
    pub diverged: bool,
    pub divergence: Option<DivergenceInfo>,
    pub equilibrium: Option<EquilibriumInfo>,
    pub reference_check: Option<ReferenceCheck>,
    pub final_time: f64,
    /// Final own actions `col(x^i_i)`.
    pub final_actions: Vec<f64>,
    /// Norm of the estimated pseudo-gradient at the final state.
    pub final_gradient_norm: f64,
    pub final_consensus_gap: f64,
    /// `|x - 1 (x*)| / |1 (x*)|` at the last sample, when the
    /// equilibrium is known.
    pub final_relative_error: Option<f64>,
    /// Relative error below 1e-2 at the end (None without an oracle).
    pub converged: Option<bool>,
    /// Empirical decay rate fitted to the error series, when it fits.
    pub fit: Option<FittedRate>,
    /// The scenario with includes, defaults, and overrides resolved.
    pub scenario: serde_json::Value,
}

/// Relative-error threshold under which a run counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-2;

/// Assembles the run summary from the loaded scenario, the (possibly
/// partial) trace, and the equilibrium oracle used during integration.
pub fn summarize(
    loaded: &LoadedScenario,
    trace: &SimulationTrace,
    oracle: Option<&NESolution>,
    divergence: Option<DivergenceInfo>,
) -> Result<RunSummary, ReportError> {
    let config = &loaded.scenario;
    let schedule = &config.schedule;
    let channels = schedule
        .per_channel_stats()
        .into_iter()
        .map(|(channel, intervals, attacked_seconds)| ChannelStats {
            // 1-based in reports, matching scenario files.
            channel: format!("{}->{}", channel.from + 1, channel.to + 1),
            intervals,
            attacked_seconds,
        })
        .collect();
    let union = crate::attack::union_attack_intervals(schedule);
    let schedule_summary = ScheduleSummary {
        horizon: schedule.horizon(),
        channels,
        attacked_seconds: union.iter().map(|iv| iv.measure()).sum(),
        union_intervals: union.len(),
    };

    let final_state = trace.final_state();
    let final_gradient =
        crate::dynamics::estimated_pseudo_gradient(&config.game, final_state)?;
    let final_relative_error = match oracle {
        Some(solution) => relative_error_series(trace, &solution.x_star)
            .ok()
            .and_then(|series| series.values.last().copied()),
        None => None,
    };
    let fit = fit_rate(trace).ok();

    Ok(RunSummary {
        game: loaded.game_label.clone(),
        algorithm: config.algorithm,
        players: config.game.player_count(),
        t_end: config.t_end,
        step: config.step,
        decimate: config.decimate,
        samples: trace.len(),
        generator_seed: loaded.generator_seed,
        schedule: schedule_summary,
        snap: trace.snap(),
        diverged: divergence.is_some(),
        divergence,
        equilibrium: oracle.map(|s| EquilibriumInfo {
            actions: s.x_star.iter().copied().collect(),
            residual: s.residual,
            iterations: s.iterations,
        }),
        reference_check: match oracle {
            Some(solution) => reference_check(&config.game, &solution.x_star)?,
            None => None,
        },
        final_time: *trace.times().last().expect("trace is never empty"),
        final_actions: final_state.actions().iter().copied().collect(),
        final_gradient_norm: final_gradient.norm(),
        final_consensus_gap: *trace
            .consensus_gaps()
            .last()
            .expect("trace is never empty"),
        final_relative_error,
        converged: final_relative_error
            .map(|rel| divergence.is_none() && rel < CONVERGENCE_THRESHOLD),
        fit,
        scenario: serde_json::to_value(&loaded.resolved)?,
    })
}
