//! Switched continuous-time dynamics of the distributed equilibrium-seeking
//! algorithm, integrated with fixed-step fourth-order Runge-Kutta.
//!
//! Every player `i` carries an estimate `x^i` of the *full* action profile
//! and evolves it by
//!
//! ```text
//! d/dt x^i = -R_i^T grad_i J_i(x^i) + e^i(t)
//! ```
//!
//! where `R_i` selects player i's own coordinates and the consensus term
//! `e^i` switches with the attack state: while every channel is clear,
//! `e = -kappa (L (x) I_n) x` with the balanced weighted Laplacian `L`;
//! while any flag is raised, `e = -(L_psi (x) I_n) x` where `L_psi` is the
//! unit-weight Laplacian of the channels currently surviving the flag
//! protocol (no `kappa`). Gradients are always evaluated at the player's own
//! estimate, never at the true joint state: that is the distributed
//! information constraint.
//!
//! An attack-unaware baseline variant runs the safe branch throughout,
//! zeroing attacked entries of the fixed weighted Laplacian without touching
//! its diagonal and without any flag protocol; it serves as the comparison
//! algorithm that the resilient design improves upon.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::attack::{
    active_channels, step_flags, AttackError, AttackFlagState, AttackSchedule, Channel,
};
use crate::game::{GameDefinition, GameError, NESolution};
use crate::graph::{effective_laplacian, laplacian_bundle, Digraph, GraphError, LaplacianBundle};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e9;

/// Errors raised while configuring or integrating a scenario.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// Action dimensions must be non-empty with every entry positive.
    #[error("action dimensions must be non-empty and positive")]
    InvalidActionDims,
    /// A stacked vector had the wrong dimension.
    #[error("stacked state has dimension {got}, layout expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The state layout does not match the game's action dimensions.
    #[error("initial state layout does not match the game's action dimensions")]
    LayoutMismatch,
    /// The graph must have one node per player.
    #[error("graph has {nodes} nodes but the game has {players} players")]
    GraphGameMismatch { players: usize, nodes: usize },
    /// The safe-mode gain must be positive and finite.
    #[error("kappa = {0} must be positive and finite")]
    InvalidGain(f64),
    /// The integration step must be positive and finite.
    #[error("step = {0} must be positive and finite")]
    InvalidStep(f64),
    /// The end time must be positive and finite.
    #[error("t_end = {0} must be positive and finite")]
    InvalidEndTime(f64),
    /// `t_end` must be an integer number of steps.
    #[error("t_end = {t_end} is not a multiple of step = {step}")]
    EndTimeOffGrid { t_end: f64, step: f64 },
    /// The schedule must cover the whole simulation.
    #[error("schedule horizon {horizon} is shorter than t_end {t_end}")]
    HorizonTooShort { horizon: f64, t_end: f64 },
    /// Decimation must be positive and divide the step count.
    #[error("decimation {decimate} does not divide the {steps} integration steps")]
    BadDecimation { decimate: usize, steps: usize },
    /// The schedule attacked a channel that is not a graph edge.
    #[error("schedule attacks channel {0} which is not an edge of the graph")]
    ScheduleChannelNotInGraph(Channel),
    /// Attack-mode consensus error needs the effective Laplacian.
    #[error("attack-mode consensus error requires the effective Laplacian")]
    MissingEffectiveLaplacian,
    /// The oracle equilibrium has the wrong dimension.
    #[error("oracle equilibrium has dimension {got}, game expects {expected}")]
    OracleDimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    /// The state norm crossed [`DIVERGENCE_GUARD`]; the trace up to the last
    /// completed sample is attached.
    #[error("state norm {norm:.3e} exceeded the divergence guard at t = {t}")]
    Diverged {
        t: f64,
        norm: f64,
        partial: Box<SimulationTrace>,
    },
}

/// Block layout of stacked estimates: N players, player j's action block
/// has dimension `n_j` at offset `profile_offset(j)` within a profile of
/// total dimension n, and player i's estimate occupies
/// `[i*n, (i+1)*n)` within the stacked vector of dimension N*n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    action_dims: Vec<usize>,
    offsets: Vec<usize>,
    action_dim: usize,
}

impl StateLayout {
    pub fn new(action_dims: &[usize]) -> Result<Self, DynamicsError> {
        if action_dims.is_empty() || action_dims.contains(&0) {
            return Err(DynamicsError::InvalidActionDims);
        }
        let mut offsets = Vec::with_capacity(action_dims.len());
        let mut acc = 0;
        for &d in action_dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self {
            action_dims: action_dims.to_vec(),
            offsets,
            action_dim: acc,
        })
    }

    pub fn player_count(&self) -> usize {
        self.action_dims.len()
    }

    /// Profile dimension `n = sum n_j`.
    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Stacked dimension `N * n`.
    pub fn stacked_dim(&self) -> usize {
        self.player_count() * self.action_dim
    }

    pub fn action_dims(&self) -> &[usize] {
        &self.action_dims
    }

    /// Offset of player `j`'s action block within one profile.
    pub fn profile_offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// Offset of player `i`'s estimate within the stacked vector.
    pub fn estimate_offset(&self, i: usize) -> usize {
        i * self.action_dim
    }
}

/// Stacked estimate vector `col(x^1, ..., x^N)` with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEstimate {
    layout: Arc<StateLayout>,
    x: DVector<f64>,
}

impl StackedEstimate {
    pub fn new(layout: Arc<StateLayout>, x: DVector<f64>) -> Result<Self, DynamicsError> {
        if x.len() != layout.stacked_dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: layout.stacked_dim(),
                got: x.len(),
            });
        }
        Ok(Self { layout, x })
    }

    /// All players share the same estimated profile (`1_N (x) profile`).
    pub fn from_consensus(
        layout: Arc<StateLayout>,
        profile: &DVector<f64>,
    ) -> Result<Self, DynamicsError> {
        if profile.len() != layout.action_dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: layout.action_dim(),
                got: profile.len(),
            });
        }
        let n = layout.action_dim();
        let mut x = DVector::zeros(layout.stacked_dim());
        for i in 0..layout.player_count() {
            x.rows_mut(i * n, n).copy_from(profile);
        }
        Self::new(layout, x)
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<StateLayout> {
        Arc::clone(&self.layout)
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.x
    }

    /// Player i's full estimated profile `x^i`.
    pub fn estimate(&self, i: usize) -> DVector<f64> {
        let n = self.layout.action_dim();
        self.x.rows(self.layout.estimate_offset(i), n).into_owned()
    }

    /// Player i's estimate of player j's action block `x^i_j`.
    pub fn estimate_of(&self, i: usize, j: usize) -> DVector<f64> {
        let off = self.layout.estimate_offset(i) + self.layout.profile_offset(j);
        self.x.rows(off, self.layout.action_dims[j]).into_owned()
    }

    /// Player i's own action `x^i_i`.
    pub fn action(&self, i: usize) -> DVector<f64> {
        self.estimate_of(i, i)
    }

    /// Joint action profile `col(x^1_1, ..., x^N_N)` (what `R x` selects).
    pub fn actions(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.action_dim());
        for i in 0..self.layout.player_count() {
            let block = self.action(i);
            out.rows_mut(self.layout.profile_offset(i), block.len())
                .copy_from(&block);
        }
        out
    }
}

/// Per-player selectors `R_i` and their block-diagonal stack `R`.
///
/// `R_i` is the `n_i x n` matrix with an identity block over player i's own
/// coordinates, so `R_i x^i = x^i_i`; the stack `R` is `n x (N n)` with
/// `R x = col(x^1_1, ..., x^N_N)` and spectral norm 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrices {
    pub blocks: Vec<DMatrix<f64>>,
    pub stacked: DMatrix<f64>,
}

/// Builds the selection matrices for the given action dimensions.
pub fn selection_matrices(action_dims: &[usize]) -> Result<SelectionMatrices, DynamicsError> {
    let layout = StateLayout::new(action_dims)?;
    let n = layout.action_dim();
    let big_n = layout.player_count();
    let mut blocks = Vec::with_capacity(big_n);
    let mut stacked = DMatrix::zeros(n, big_n * n);
    for i in 0..big_n {
        let ni = action_dims[i];
        let mut r = DMatrix::zeros(ni, n);
        for k in 0..ni {
            r[(k, layout.profile_offset(i) + k)] = 1.0;
        }
        stacked
            .view_mut((layout.profile_offset(i), i * n), (ni, n))
            .copy_from(&r);
        blocks.push(r);
    }
    Ok(SelectionMatrices { blocks, stacked })
}

/// Which branch of the switched dynamics is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Safe,
    Attack,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Safe => "safe",
            Mode::Attack => "attack",
        })
    }
}

/// Which algorithm the integrator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Flag-protocol switching dynamics.
    Resilient,
    /// Attack-unaware comparison: safe branch throughout with attacked
    /// entries zeroed in the fixed weighted Laplacian.
    Baseline,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Resilient => "resilient",
            Algorithm::Baseline => "baseline",
        })
    }
}

/// A fully validated simulation setup.
#[derive(Debug)]
pub struct ScenarioConfig {
    pub game: GameDefinition,
    pub graph: Digraph,
    pub bundle: LaplacianBundle,
    pub schedule: AttackSchedule,
    pub kappa: f64,
    pub x0: StackedEstimate,
    pub t_end: f64,
    pub step: f64,
    pub decimate: usize,
    pub algorithm: Algorithm,
}

impl ScenarioConfig {
    /// Validates all cross-field invariants and precomputes the Laplacian
    /// bundle: positive gain and step, `t_end` on the step grid, decimation
    /// dividing the step count, horizon covering `t_end`, one graph node per
    /// player, matching layouts, and scheduled channels being graph edges.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        game: GameDefinition,
        graph: Digraph,
        schedule: AttackSchedule,
        kappa: f64,
        x0: StackedEstimate,
        t_end: f64,
        step: f64,
        decimate: usize,
        algorithm: Algorithm,
    ) -> Result<Self, DynamicsError> {
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(DynamicsError::InvalidGain(kappa));
        }
        if !step.is_finite() || step <= 0.0 {
            return Err(DynamicsError::InvalidStep(step));
        }
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(DynamicsError::InvalidEndTime(t_end));
        }
        let steps_f = t_end / step;
        let steps = steps_f.round();
        if steps < 1.0 || (steps_f - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(DynamicsError::EndTimeOffGrid { t_end, step });
        }
        let steps = steps as usize;
        if decimate == 0 || !steps.is_multiple_of(decimate) {
            return Err(DynamicsError::BadDecimation { decimate, steps });
        }
        if schedule.horizon() < t_end {
            return Err(DynamicsError::HorizonTooShort {
                horizon: schedule.horizon(),
                t_end,
            });
        }
        if graph.node_count() != game.player_count() {
            return Err(DynamicsError::GraphGameMismatch {
                players: game.player_count(),
                nodes: graph.node_count(),
            });
        }
        if x0.layout().action_dims() != game.action_dims() {
            return Err(DynamicsError::LayoutMismatch);
        }
        for channel in schedule.attacked_channels() {
            if !graph.has_edge(channel.from, channel.to) {
                return Err(DynamicsError::ScheduleChannelNotInGraph(channel));
            }
        }
        let bundle = laplacian_bundle(&graph)?;
        Ok(Self {
            game,
            graph,
            bundle,
            schedule,
            kappa,
            x0,
            t_end,
            step,
            decimate,
            algorithm,
        })
    }

    /// Number of integration steps.
    pub fn steps(&self) -> usize {
        (self.t_end / self.step).round() as usize
    }
}

/// How far attack interval endpoints moved when snapped to the step grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapReport {
    /// Largest |original - snapped| over all endpoints (seconds).
    pub max_distance: f64,
    /// Endpoints that moved by more than 1e-12 s.
    pub moved_endpoints: usize,
    /// Intervals shorter than half a step that vanished entirely.
    pub dropped_intervals: usize,
}

/// Time-sampled result of one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    layout: Arc<StateLayout>,
    step: f64,
    decimate: usize,
    times: Vec<f64>,
    states: Vec<StackedEstimate>,
    modes: Vec<Mode>,
    error_to_ne: Option<Vec<f64>>,
    consensus_gap: Vec<f64>,
    snap: SnapReport,
}

impl SimulationTrace {
    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// Integration step h (the sampling interval is `h * decimate`).
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn decimate(&self) -> usize {
        self.decimate
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StackedEstimate] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &StackedEstimate {
        &self.states[idx]
    }

    pub fn final_state(&self) -> &StackedEstimate {
        self.states.last().expect("trace holds at least the initial sample")
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// `||x(t) - 1_N (x) x*||` per sample, when an oracle was attached.
    pub fn errors_to_ne(&self) -> Option<&[f64]> {
        self.error_to_ne.as_deref()
    }

    /// `max_i ||x^i - mean_i x^i||` per sample.
    pub fn consensus_gaps(&self) -> &[f64] {
        &self.consensus_gap
    }

    pub fn snap(&self) -> SnapReport {
        self.snap
    }
}

/// Splits a stacked state into its consensus and disagreement parts:
/// the mean profile `x_bar = (1/N) sum_i x^i`, the consensus component
/// `1_N (x) x_bar`, and the disagreement `x - 1_N (x) x_bar`. The two
/// components are orthogonal.
pub fn decompose(
    x: &StackedEstimate,
) -> (StackedEstimate, StackedEstimate, DVector<f64>) {
    let layout = x.layout_arc();
    let n = layout.action_dim();
    let big_n = layout.player_count();
    let mut mean = DVector::zeros(n);
    for i in 0..big_n {
        mean += x.vector().rows(i * n, n);
    }
    mean /= big_n as f64;
    let consensus = StackedEstimate::from_consensus(Arc::clone(&layout), &mean)
        .expect("mean profile has layout dimension");
    let disagreement = StackedEstimate::new(Arc::clone(&layout), x.vector() - consensus.vector())
        .expect("difference keeps the stacked dimension");
    (consensus, disagreement, mean)
}

/// `max_i ||x^i - x_bar||`, the worst single-player disagreement.
pub fn consensus_gap(x: &StackedEstimate) -> f64 {
    let n = x.layout().action_dim();
    let (_, disagreement, _) = decompose(x);
    (0..x.layout().player_count())
        .map(|i| disagreement.vector().rows(i * n, n).norm())
        .fold(0.0, f64::max)
}

/// Consensus coupling term of the dynamics.
///
/// Safe mode returns `-kappa (L (x) I_n) x` with the balanced Laplacian from
/// `bundle`; attack mode returns `-(L_psi (x) I_n) x` with unit gain, where
/// `effective` must supply the surviving-edge Laplacian `L_psi`.
pub fn consensus_error(
    mode: Mode,
    x: &StackedEstimate,
    bundle: &LaplacianBundle,
    kappa: f64,
    effective: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>, DynamicsError> {
    let big_n = x.layout().player_count();
    if bundle.balanced.nrows() != big_n {
        return Err(DynamicsError::DimensionMismatch {
            expected: big_n,
            got: bundle.balanced.nrows(),
        });
    }
    let (coupling, gain) = match mode {
        Mode::Safe => (&bundle.balanced, kappa),
        Mode::Attack => (
            effective.ok_or(DynamicsError::MissingEffectiveLaplacian)?,
            1.0,
        ),
    };
    if coupling.nrows() != big_n || coupling.ncols() != big_n {
        return Err(DynamicsError::DimensionMismatch {
            expected: big_n,
            got: coupling.nrows(),
        });
    }
    let mut out = DVector::zeros(x.vector().len());
    add_coupling(&mut out, coupling, gain, x.vector(), x.layout().action_dim());
    Ok(out)
}

/// `out -= gain * (L (x) I_n) x`, looping over nonzero Laplacian entries.
fn add_coupling(out: &mut DVector<f64>, l: &DMatrix<f64>, gain: f64, x: &DVector<f64>, n: usize) {
    let big_n = l.nrows();
    for i in 0..big_n {
        for j in 0..big_n {
            let w = l[(i, j)];
            if w != 0.0 {
                let c = gain * w;
                for k in 0..n {
                    out[i * n + k] -= c * x[j * n + k];
                }
            }
        }
    }
}

/// `out -= R^T F_est(x)`: each player's own-block gradient, evaluated at its
/// own estimated profile, lands in its own coordinates.
fn add_own_gradients(
    out: &mut DVector<f64>,
    game: &GameDefinition,
    layout: &StateLayout,
    x: &DVector<f64>,
    scratch: &mut DVector<f64>,
) -> Result<(), GameError> {
    let n = layout.action_dim();
    for i in 0..layout.player_count() {
        scratch.copy_from(&x.rows(i * n, n));
        let g = game.partial_gradient(i, scratch)?;
        let off = i * n + layout.profile_offset(i);
        for (k, gv) in g.iter().enumerate() {
            out[off + k] -= gv;
        }
    }
    Ok(())
}

fn derivative(
    out: &mut DVector<f64>,
    x: &DVector<f64>,
    game: &GameDefinition,
    layout: &StateLayout,
    coupling: &DMatrix<f64>,
    gain: f64,
    scratch: &mut DVector<f64>,
) -> Result<(), GameError> {
    out.fill(0.0);
    add_own_gradients(out, game, layout, x, scratch)?;
    add_coupling(out, coupling, gain, x, layout.action_dim());
    Ok(())
}

/// Stacked gradient `F_est(x) = col(grad_1 J_1(x^1), ..., grad_N J_N(x^N))`
/// with each gradient taken at that player's own estimate.
pub fn estimated_pseudo_gradient(
    game: &GameDefinition,
    x: &StackedEstimate,
) -> Result<DVector<f64>, DynamicsError> {
    let layout = x.layout();
    let mut out = DVector::zeros(layout.action_dim());
    for i in 0..layout.player_count() {
        let g = game.partial_gradient(i, &x.estimate(i))?;
        out.rows_mut(layout.profile_offset(i), g.len()).copy_from(&g);
    }
    Ok(out)
}

/// Pointwise right-hand side of the switched dynamics at absolute time `t`.
///
/// The branch is chosen from the schedule at `t`: with no channel attacked,
/// the safe branch; otherwise the attack branch with the flag protocol
/// assumed settled (attacked channels and their reverse notifications muted).
/// The integrator itself applies the one-step notification lag instead; use
/// this evaluator for pointwise checks, not for stepping.
pub fn rhs(
    t: f64,
    x: &StackedEstimate,
    scenario: &ScenarioConfig,
) -> Result<DVector<f64>, DynamicsError> {
    if x.layout().action_dims() != scenario.game.action_dims() {
        return Err(DynamicsError::LayoutMismatch);
    }
    let attacked = active_channels(&scenario.schedule, t)?;
    let layout = x.layout();
    let mut out = DVector::zeros(layout.stacked_dim());
    let mut scratch = DVector::zeros(layout.action_dim());
    if attacked.is_empty() {
        derivative(
            &mut out,
            x.vector(),
            &scenario.game,
            layout,
            &scenario.bundle.balanced,
            scenario.kappa,
            &mut scratch,
        )?;
        return Ok(out);
    }
    let (coupling, gain) = match scenario.algorithm {
        Algorithm::Resilient => {
            let surviving = settled_surviving_edges(&scenario.graph, &attacked);
            (effective_laplacian(&scenario.graph, &surviving)?, 1.0)
        }
        Algorithm::Baseline => (
            baseline_laplacian(&scenario.bundle, &attacked),
            scenario.kappa,
        ),
    };
    derivative(
        &mut out,
        x.vector(),
        &scenario.game,
        layout,
        &coupling,
        gain,
        &mut scratch,
    )?;
    Ok(out)
}

/// Edges surviving once the flag protocol has settled on `attacked`:
/// attacked channels and their existing reverse channels are muted.
fn settled_surviving_edges(
    graph: &Digraph,
    attacked: &BTreeSet<Channel>,
) -> BTreeSet<(usize, usize)> {
    let mut surviving = graph.edge_set();
    for c in attacked {
        surviving.remove(&(c.from, c.to));
        surviving.remove(&(c.to, c.from));
    }
    surviving
}

/// Fixed weighted Laplacian with attacked off-diagonal entries zeroed and
/// the diagonal untouched (the attack-unaware baseline's coupling matrix).
fn baseline_laplacian(bundle: &LaplacianBundle, attacked: &BTreeSet<Channel>) -> DMatrix<f64> {
    let mut l = bundle.balanced.clone();
    for c in attacked {
        if c.from != c.to {
            l[(c.to, c.from)] = 0.0;
        }
    }
    l
}

/// Attack intervals of one channel as half-open step-index ranges.
struct ChannelTimeline {
    channel: Channel,
    intervals: Vec<(usize, usize)>,
    cursor: usize,
}

impl ChannelTimeline {
    /// Whether step `k` is attacked. Queries must be monotone in `k`.
    fn attacked_at(&mut self, k: usize) -> bool {
        while self.cursor < self.intervals.len() && self.intervals[self.cursor].1 <= k {
            self.cursor += 1;
        }
        self.cursor < self.intervals.len() && self.intervals[self.cursor].0 <= k
    }
}

fn snap_timelines(
    schedule: &AttackSchedule,
    step: f64,
) -> (Vec<ChannelTimeline>, Vec<(usize, usize)>, SnapReport) {
    let mut snap = SnapReport {
        max_distance: 0.0,
        moved_endpoints: 0,
        dropped_intervals: 0,
    };
    let mut snap_endpoint = |t: f64| -> usize {
        let idx = (t / step).round();
        let distance = (t - idx * step).abs();
        snap.max_distance = snap.max_distance.max(distance);
        if distance > 1e-12 {
            snap.moved_endpoints += 1;
        }
        idx as usize
    };
    let mut timelines = Vec::new();
    let mut all: Vec<(usize, usize)> = Vec::new();
    for channel in schedule.attacked_channels() {
        let mut intervals = Vec::new();
        for iv in schedule.intervals(channel) {
            let s = snap_endpoint(iv.start);
            let e = snap_endpoint(iv.end);
            if e <= s {
                snap.dropped_intervals += 1;
                continue;
            }
            intervals.push((s, e));
            all.push((s, e));
        }
        timelines.push(ChannelTimeline {
            channel,
            intervals,
            cursor: 0,
        });
    }
    all.sort_unstable();
    let mut union: Vec<(usize, usize)> = Vec::with_capacity(all.len());
    for (s, e) in all {
        match union.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => union.push((s, e)),
        }
    }
    (timelines, union, snap)
}

/// Every distinct surviving-edge Laplacian the resilient integrator would
/// couple with during attack mode, obtained by replaying the flag protocol
/// over the snapped schedule without integrating the state.
///
/// Includes the transient matrices of the notification lag, so a norm bound
/// taken over this set covers every instant of attack-mode operation.
pub fn attack_mode_laplacians(
    scenario: &ScenarioConfig,
) -> Result<Vec<DMatrix<f64>>, DynamicsError> {
    let base_channels: BTreeSet<Channel> = scenario
        .graph
        .edges()
        .map(|(from, to, _)| Channel::new(from, to))
        .collect();
    let (mut timelines, _, _) = snap_timelines(&scenario.schedule, scenario.step);
    let mut flags = AttackFlagState::new(&base_channels);
    let mut seen: BTreeSet<BTreeSet<Channel>> = BTreeSet::new();
    let mut out = Vec::new();
    for k in 0..scenario.steps() {
        let mut attacked = BTreeSet::new();
        for tl in &mut timelines {
            if tl.attacked_at(k) {
                attacked.insert(tl.channel);
            }
        }
        let (next, surviving) = step_flags(&flags, &attacked)?;
        flags = next;
        if surviving.len() < base_channels.len() && seen.insert(surviving.clone()) {
            let edges = surviving.iter().map(|c| (c.from, c.to)).collect();
            out.push(effective_laplacian(&scenario.graph, &edges)?);
        }
    }
    Ok(out)
}

/// Integrates the scenario with classical fixed-step RK4.
///
/// Attack interval endpoints are snapped to the step grid first, so every
/// step evaluates a single smooth branch; the snap distances are reported in
/// the trace. The branch and flag state update once per step. Samples are
/// recorded every `decimate` steps; when `oracle` is given, each sample also
/// carries `||x - 1_N (x) x*||`. A state norm beyond [`DIVERGENCE_GUARD`]
/// aborts with [`DynamicsError::Diverged`] carrying the partial trace.
pub fn integrate(
    scenario: &ScenarioConfig,
    oracle: Option<&NESolution>,
) -> Result<SimulationTrace, DynamicsError> {
    let layout = scenario.x0.layout_arc();
    let n = layout.action_dim();
    let dim = layout.stacked_dim();
    let steps = scenario.steps();
    let h = scenario.step;

    let tilde = match oracle {
        Some(sol) => {
            if sol.x_star.len() != n {
                return Err(DynamicsError::OracleDimensionMismatch {
                    expected: n,
                    got: sol.x_star.len(),
                });
            }
            Some(
                StackedEstimate::from_consensus(Arc::clone(&layout), &sol.x_star)?
                    .vector()
                    .clone(),
            )
        }
        None => None,
    };

    let (mut timelines, union, snap) = snap_timelines(&scenario.schedule, h);
    let mut union_cursor = 0usize;
    let mut mode_at = move |k: usize| -> Mode {
        while union_cursor < union.len() && union[union_cursor].1 <= k {
            union_cursor += 1;
        }
        if union_cursor < union.len() && union[union_cursor].0 <= k {
            Mode::Attack
        } else {
            Mode::Safe
        }
    };

    let base_channels: BTreeSet<Channel> = scenario
        .graph
        .edges()
        .map(|(from, to, _)| Channel::new(from, to))
        .collect();
    let mut flags = AttackFlagState::new(&base_channels);
    let safe_coupling = Arc::new(scenario.bundle.balanced.clone());
    let mut cache: HashMap<BTreeSet<Channel>, Arc<DMatrix<f64>>> = HashMap::new();

    let samples = steps / scenario.decimate + 1;
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    let mut modes = Vec::with_capacity(samples);
    let mut errors = oracle.map(|_| Vec::with_capacity(samples));
    let mut gaps = Vec::with_capacity(samples);

    let mut y = scenario.x0.vector().clone();
    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    let mut tmp = DVector::zeros(dim);
    let mut scratch = DVector::zeros(n);

    let record = |k: usize,
                      y: &DVector<f64>,
                      mode: Mode,
                      times: &mut Vec<f64>,
                      states: &mut Vec<StackedEstimate>,
                      modes: &mut Vec<Mode>,
                      errors: &mut Option<Vec<f64>>,
                      gaps: &mut Vec<f64>|
     -> Result<(), DynamicsError> {
        let state = StackedEstimate::new(Arc::clone(&layout), y.clone())?;
        times.push(k as f64 * h);
        if let (Some(errs), Some(tilde)) = (errors.as_mut(), tilde.as_ref()) {
            errs.push((y - tilde).norm());
        }
        gaps.push(consensus_gap(&state));
        states.push(state);
        modes.push(mode);
        Ok(())
    };

    for k in 0..steps {
        let mode = mode_at(k);
        if k % scenario.decimate == 0 {
            record(
                k, &y, mode, &mut times, &mut states, &mut modes, &mut errors, &mut gaps,
            )?;
        }

        let mut attacked = BTreeSet::new();
        for tl in &mut timelines {
            if tl.attacked_at(k) {
                attacked.insert(tl.channel);
            }
        }

        let (coupling, gain) = match scenario.algorithm {
            Algorithm::Resilient => {
                let (next, surviving) = step_flags(&flags, &attacked)?;
                flags = next;
                if surviving.len() == base_channels.len() {
                    (Arc::clone(&safe_coupling), scenario.kappa)
                } else {
                    let matrix = match cache.get(&surviving) {
                        Some(m) => Arc::clone(m),
                        None => {
                            let edges = surviving.iter().map(|c| (c.from, c.to)).collect();
                            let m = Arc::new(effective_laplacian(&scenario.graph, &edges)?);
                            cache.insert(surviving, Arc::clone(&m));
                            m
                        }
                    };
                    (matrix, 1.0)
                }
            }
            Algorithm::Baseline => {
                if attacked.is_empty() {
                    (Arc::clone(&safe_coupling), scenario.kappa)
                } else {
                    let matrix = match cache.get(&attacked) {
                        Some(m) => Arc::clone(m),
                        None => {
                            let m = Arc::new(baseline_laplacian(&scenario.bundle, &attacked));
                            cache.insert(attacked.clone(), Arc::clone(&m));
                            m
                        }
                    };
                    (matrix, scenario.kappa)
                }
            }
        };

        derivative(&mut k1, &y, &scenario.game, &layout, &coupling, gain, &mut scratch)?;
        tmp.copy_from(&y);
        tmp.axpy(0.5 * h, &k1, 1.0);
        derivative(&mut k2, &tmp, &scenario.game, &layout, &coupling, gain, &mut scratch)?;
        tmp.copy_from(&y);
        tmp.axpy(0.5 * h, &k2, 1.0);
        derivative(&mut k3, &tmp, &scenario.game, &layout, &coupling, gain, &mut scratch)?;
        tmp.copy_from(&y);
        tmp.axpy(h, &k3, 1.0);
        derivative(&mut k4, &tmp, &scenario.game, &layout, &coupling, gain, &mut scratch)?;
        y.axpy(h / 6.0, &k1, 1.0);
        y.axpy(h / 3.0, &k2, 1.0);
        y.axpy(h / 3.0, &k3, 1.0);
        y.axpy(h / 6.0, &k4, 1.0);

        let norm = y.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            let partial = SimulationTrace {
                layout: Arc::clone(&layout),
                step: h,
                decimate: scenario.decimate,
                times,
                states,
                modes,
                error_to_ne: errors,
                consensus_gap: gaps,
                snap,
            };
            return Err(DynamicsError::Diverged {
                t: (k + 1) as f64 * h,
                norm,
                partial: Box::new(partial),
            });
        }
    }
    let final_mode = mode_at(steps);
    record(
        steps, &y, final_mode, &mut times, &mut states, &mut modes, &mut errors, &mut gaps,
    )?;

    Ok(SimulationTrace {
        layout,
        step: h,
        decimate: scenario.decimate,
        times,
        states,
        modes,
        error_to_ne: errors,
        consensus_gap: gaps,
        snap,
    })
}
