//! Denial-of-service attack schedules, budget accounting, and the
//! flag-based detection protocol.
//!
//! Attacks are per-channel: jamming channel `(from, to)` stops node `to`
//! from receiving node `from`'s estimates over half-open intervals
//! `[a, a + tau)`. The global attack mode is the union of all per-channel
//! intervals. Two budget inequalities bound how much attacking is allowed
//! on every window `[T1, T2)`:
//!
//! * frequency: `N_a(T1, T2) <= N0 + (T2 - T1) / T_f`, where `N_a` counts
//!   global attack intervals intersecting the window;
//! * duration: `|A(T1, T2)| <= T0 + (T2 - T1) / T_a`, where `|A|` is the
//!   Lebesgue measure of the attacked portion of the window.
//!
//! [`verify_budget`] decides both inequalities exactly (see its docs), and
//! [`generate_schedule`] draws random schedules guaranteed to satisfy a
//! budget. [`step_flags`] implements the receiver-side detection flags that
//! the resilient dynamics consume.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

/// Errors raised by schedule construction, queries, or generation.
#[derive(Debug, Error)]
pub enum AttackError {
    /// Horizon must be a positive finite number of seconds.
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    /// An interval had a non-finite, negative, or empty extent.
    #[error("channel {channel}: interval [{start}, {end}) is invalid")]
    BadInterval {
        channel: Channel,
        start: f64,
        end: f64,
    },
    /// An interval extended past the schedule horizon.
    #[error("channel {channel}: interval ends at {end} past horizon {horizon}")]
    IntervalBeyondHorizon {
        channel: Channel,
        end: f64,
        horizon: f64,
    },
    /// Per-channel intervals must be disjoint with strictly positive gaps.
    #[error("channel {channel}: interval starting at {second_start} does not leave a gap after the one ending at {first_end}")]
    OverlappingIntervals {
        channel: Channel,
        first_end: f64,
        second_start: f64,
    },
    /// A point query fell outside `[0, horizon)`.
    #[error("query time {t} outside [0, {horizon})")]
    QueryOutOfRange { t: f64, horizon: f64 },
    /// Accounting windows must satisfy `T2 > T1 >= 0`.
    #[error("window [{t1}, {t2}) is degenerate")]
    DegenerateWindow { t1: f64, t2: f64 },
    /// A budget field violated its sign or range constraint.
    #[error("budget field {field} = {value} is out of range ({requirement})")]
    InvalidBudget {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
    /// A channel was referenced that the flag state does not track.
    #[error("channel {0} is not part of the base graph")]
    UnknownChannel(Channel),
    /// The random generator could not satisfy the budget.
    #[error("schedule generator failed to satisfy the budget after {attempts} attempts")]
    GeneratorFailed { attempts: usize },
    /// Generator event window must fit inside the horizon.
    #[error("generator window {window} must lie in (0, horizon = {horizon}]")]
    InvalidWindow { window: f64, horizon: f64 },
}

/// Directed communication channel: `to` receives from `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Channel {
    pub from: usize,
    pub to: usize,
}

impl Channel {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    /// The opposite direction of the same node pair.
    pub fn reverse(self) -> Self {
        Self {
            from: self.to,
            to: self.from,
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn measure(&self) -> f64 {
        self.end - self.start
    }
}

/// Per-channel DoS attack intervals over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    horizon: f64,
    channels: BTreeMap<Channel, Vec<Interval>>,
}

impl AttackSchedule {
    /// Validates and stores per-channel interval lists.
    ///
    /// Intervals are sorted per channel; consecutive intervals must leave a
    /// strictly positive gap (touching intervals should be merged by the
    /// caller), and every interval must lie within `[0, horizon)`.
    pub fn new(
        horizon: f64,
        per_channel: BTreeMap<Channel, Vec<Interval>>,
    ) -> Result<Self, AttackError> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(AttackError::InvalidHorizon(horizon));
        }
        let mut channels = BTreeMap::new();
        for (channel, mut intervals) in per_channel {
            if intervals.is_empty() {
                continue;
            }
            intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
            for iv in &intervals {
                if !iv.start.is_finite() || !iv.end.is_finite() || iv.start < 0.0 || iv.end <= iv.start
                {
                    return Err(AttackError::BadInterval {
                        channel,
                        start: iv.start,
                        end: iv.end,
                    });
                }
                if iv.end > horizon {
                    return Err(AttackError::IntervalBeyondHorizon {
                        channel,
                        end: iv.end,
                        horizon,
                    });
                }
            }
            for pair in intervals.windows(2) {
                if pair[1].start <= pair[0].end {
                    return Err(AttackError::OverlappingIntervals {
                        channel,
                        first_end: pair[0].end,
                        second_start: pair[1].start,
                    });
                }
            }
            channels.insert(channel, intervals);
        }
        Ok(Self { horizon, channels })
    }

    /// Schedule with no attacks at all.
    pub fn empty(horizon: f64) -> Result<Self, AttackError> {
        Self::new(horizon, BTreeMap::new())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Channels that carry at least one attack interval.
    pub fn attacked_channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.channels.keys().copied()
    }

    /// Intervals of one channel (empty slice if never attacked).
    pub fn intervals(&self, channel: Channel) -> &[Interval] {
        self.channels.get(&channel).map_or(&[], Vec::as_slice)
    }

    /// Whether no channel is ever attacked.
    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Per-channel `(channel, interval count, total attacked seconds)`.
    pub fn per_channel_stats(&self) -> Vec<(Channel, usize, f64)> {
        self.channels
            .iter()
            .map(|(c, ivs)| (*c, ivs.len(), ivs.iter().map(Interval::measure).sum()))
            .collect()
    }
}

/// Frequency and duration allowances an attacker must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackBudget {
    /// Chattering allowance `N0 >= 0` (count).
    pub n0: f64,
    /// Inverse average frequency `T_f > 0` (seconds per attack).
    pub t_f: f64,
    /// Duration allowance `T0 >= 0` (seconds).
    pub t0: f64,
    /// Inverse average duty ratio `T_a > 1` (dimensionless).
    pub t_a: f64,
}

impl AttackBudget {
    pub fn new(n0: f64, t_f: f64, t0: f64, t_a: f64) -> Result<Self, AttackError> {
        let check = |field: &'static str, value: f64, ok: bool, requirement: &'static str| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(AttackError::InvalidBudget {
                    field,
                    value,
                    requirement,
                })
            }
        };
        check("N0", n0, n0 >= 0.0, "N0 >= 0")?;
        check("T_f", t_f, t_f > 0.0, "T_f > 0")?;
        check("T0", t0, t0 >= 0.0, "T0 >= 0")?;
        check("T_a", t_a, t_a > 1.0, "T_a > 1")?;
        Ok(Self { n0, t_f, t0, t_a })
    }
}

/// Merged union of all per-channel attack intervals, sorted and disjoint.
///
/// These are the global attack-mode intervals; the safe mode is their
/// complement in `[0, horizon)`.
pub fn union_attack_intervals(s: &AttackSchedule) -> Vec<Interval> {
    let mut all: Vec<Interval> = s.channels.values().flatten().copied().collect();
    all.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut merged: Vec<Interval> = Vec::with_capacity(all.len());
    for iv in all {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Clips sorted disjoint intervals to the window `[t1, t2)`, dropping empty
/// remainders.
pub fn restrict_intervals(intervals: &[Interval], t1: f64, t2: f64) -> Vec<Interval> {
    intervals
        .iter()
        .filter_map(|iv| {
            let start = iv.start.max(t1);
            let end = iv.end.min(t2);
            (end > start).then_some(Interval::new(start, end))
        })
        .collect()
}

/// Channels under attack at time `t` (half-open interval semantics).
pub fn active_channels(s: &AttackSchedule, t: f64) -> Result<BTreeSet<Channel>, AttackError> {
    if !(0.0..s.horizon).contains(&t) {
        return Err(AttackError::QueryOutOfRange {
            t,
            horizon: s.horizon,
        });
    }
    Ok(s
        .channels
        .iter()
        .filter(|(_, ivs)| ivs.iter().any(|iv| iv.contains(t)))
        .map(|(c, _)| *c)
        .collect())
}

/// Number of global attack intervals intersecting `[t1, t2)` and the
/// corresponding frequency `N_a / (t2 - t1)`.
pub fn frequency_stats(s: &AttackSchedule, t1: f64, t2: f64) -> Result<(usize, f64), AttackError> {
    check_window(t1, t2)?;
    let count = union_attack_intervals(s)
        .iter()
        .filter(|iv| iv.start < t2 && iv.end > t1)
        .count();
    Ok((count, count as f64 / (t2 - t1)))
}

/// Lebesgue measure of the attacked portion of `[t1, t2)` in seconds.
pub fn duration_stats(s: &AttackSchedule, t1: f64, t2: f64) -> Result<f64, AttackError> {
    check_window(t1, t2)?;
    Ok(restrict_intervals(&union_attack_intervals(s), t1, t2)
        .iter()
        .map(Interval::measure)
        .sum())
}

/// Measure of the attack-free portion of `[t1, t2)`, defined as the window
/// length minus [`duration_stats`]. The accounting identity
/// `safe = (t2 - t1) - attacked` therefore holds exactly in floating point;
/// the rearranged sum `attacked + safe` reproduces the window to the last
/// ulp (bitwise for most inputs, but some windows have no complementary
/// float at all once both round-to-even ties fall against them).
pub fn safe_measure(s: &AttackSchedule, t1: f64, t2: f64) -> Result<f64, AttackError> {
    Ok((t2 - t1) - duration_stats(s, t1, t2)?)
}

fn check_window(t1: f64, t2: f64) -> Result<(), AttackError> {
    if !(t1 >= 0.0 && t2 > t1) || !t1.is_finite() || !t2.is_finite() {
        return Err(AttackError::DegenerateWindow { t1, t2 });
    }
    Ok(())
}

/// One audited window with its observed statistic and budget allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowCheck {
    pub t1: f64,
    pub t2: f64,
    /// Interval count (frequency check) or attacked seconds (duration check).
    pub observed: f64,
    /// Budget right-hand side for this window.
    pub allowed: f64,
    /// `observed - allowed`; positive means the window violates the budget.
    pub margin: f64,
}

/// Outcome of checking a schedule against a budget on every window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub frequency_ok: bool,
    pub duration_ok: bool,
    /// Window with the largest frequency margin (None for empty schedules).
    pub worst_frequency_window: Option<WindowCheck>,
    /// Window with the largest duration margin (None for empty schedules).
    pub worst_duration_window: Option<WindowCheck>,
}

/// Decides both budget inequalities exactly over all windows `[T1, T2)`.
///
/// Both statistics are piecewise linear in the window endpoints, so each
/// check reduces to finitely many candidates:
///
/// * Duration: the margin decreases when `T1` moves into an attack interval
///   and increases when `T2` does, so the maximum is attained with `T1` at 0
///   or an interval start and `T2` at an interval end or the horizon.
/// * Frequency: a window intersecting union intervals `j..=k` can shrink
///   toward length `start_k - end_j` (length 0 for `j == k`) while keeping
///   its count, so the binding constraint per pair is the limit
///   `k - j + 1 <= N0 + (start_k - end_j) / T_f`. The limit length is not
///   attained by any actual window, so equality counts as satisfied. A
///   reported zero-length window stands for arbitrarily small windows inside
///   one attack interval.
pub fn verify_budget(s: &AttackSchedule, b: &AttackBudget) -> BudgetReport {
    let union = union_attack_intervals(s);
    let mut worst_frequency: Option<WindowCheck> = None;
    for j in 0..union.len() {
        for k in j..union.len() {
            let (t1, t2) = if j == k {
                (union[j].start, union[j].start)
            } else {
                (union[j].end, union[k].start)
            };
            let observed = (k - j + 1) as f64;
            let allowed = b.n0 + (t2 - t1) / b.t_f;
            record_worst(&mut worst_frequency, t1, t2, observed, allowed);
        }
    }

    let mut worst_duration: Option<WindowCheck> = None;
    if !union.is_empty() {
        let mut t1_candidates = vec![0.0];
        t1_candidates.extend(union.iter().map(|iv| iv.start));
        let mut t2_candidates: Vec<f64> = union.iter().map(|iv| iv.end).collect();
        t2_candidates.push(s.horizon);
        for &t1 in &t1_candidates {
            for &t2 in &t2_candidates {
                if t2 <= t1 {
                    continue;
                }
                let observed = restrict_intervals(&union, t1, t2)
                    .iter()
                    .map(Interval::measure)
                    .sum();
                let allowed = b.t0 + (t2 - t1) / b.t_a;
                record_worst(&mut worst_duration, t1, t2, observed, allowed);
            }
        }
    }

    BudgetReport {
        frequency_ok: worst_frequency.is_none_or(|w| w.margin <= 0.0),
        duration_ok: worst_duration.is_none_or(|w| w.margin <= 0.0),
        worst_frequency_window: worst_frequency,
        worst_duration_window: worst_duration,
    }
}

fn record_worst(worst: &mut Option<WindowCheck>, t1: f64, t2: f64, observed: f64, allowed: f64) {
    let margin = observed - allowed;
    if worst.is_none_or(|w| margin > w.margin) {
        *worst = Some(WindowCheck {
            t1,
            t2,
            observed,
            allowed,
            margin,
        });
    }
}

/// Receiver-side attack flags, one per base-graph channel.
///
/// Flag values: `Clear` (channel usable), `Jammed` (the receiver detected an
/// attack this step), `Notified` (the reverse channel was jammed last step,
/// so this side mutes itself too). A channel contributes to the effective
/// adjacency only while `Clear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i8)]
pub enum Flag {
    Clear = 0,
    Jammed = 1,
    Notified = -1,
}

/// Flags for every channel of the base graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackFlagState {
    flags: BTreeMap<Channel, Flag>,
}

impl AttackFlagState {
    /// All channels start `Clear`.
    pub fn new(base_channels: &BTreeSet<Channel>) -> Self {
        Self {
            flags: base_channels.iter().map(|&c| (c, Flag::Clear)).collect(),
        }
    }

    pub fn flag(&self, channel: Channel) -> Option<Flag> {
        self.flags.get(&channel).copied()
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.flags.keys().copied()
    }
}

/// Advances all flags one step given the currently attacked channels and
/// returns the new state plus the set of surviving channels (effective
/// adjacency 1).
///
/// Update per channel: attacked now -> `Jammed`; otherwise, if the reverse
/// channel exists and was `Jammed` last step -> `Notified`; otherwise
/// `Clear`. The one-step lag of the notification models the time the
/// receiver needs to tell its neighbor about the jammed link.
pub fn step_flags(
    state: &AttackFlagState,
    attacked: &BTreeSet<Channel>,
) -> Result<(AttackFlagState, BTreeSet<Channel>), AttackError> {
    for c in attacked {
        if !state.flags.contains_key(c) {
            return Err(AttackError::UnknownChannel(*c));
        }
    }
    let mut flags = BTreeMap::new();
    let mut surviving = BTreeSet::new();
    for &channel in state.flags.keys() {
        let flag = if attacked.contains(&channel) {
            Flag::Jammed
        } else if state.flag(channel.reverse()) == Some(Flag::Jammed) {
            Flag::Notified
        } else {
            Flag::Clear
        };
        if flag == Flag::Clear {
            surviving.insert(channel);
        }
        flags.insert(channel, flag);
    }
    Ok((AttackFlagState { flags }, surviving))
}

/// Draws a random schedule that satisfies `budget`, attacking every channel
/// in `channels` simultaneously during each event.
///
/// Events are confined to `[0, window)` with `window <= horizon`; the rest
/// of the horizon stays attack-free. Construction already respects the
/// budget (end-to-start gaps of at least `T_f`, durations at most
/// `0.9 * min(T0, T_f / T_a)`), and [`verify_budget`] is re-checked
/// anyway; durations shrink geometrically on the rare retry. Budgets with
/// `N0 < 1` or `T0 = 0` admit only the empty schedule, which is returned.
pub fn generate_schedule(
    channels: &BTreeSet<Channel>,
    budget: &AttackBudget,
    horizon: f64,
    window: f64,
    seed: u64,
) -> Result<AttackSchedule, AttackError> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(AttackError::InvalidHorizon(horizon));
    }
    if window.is_nan() || window <= 0.0 || window > horizon {
        return Err(AttackError::InvalidWindow { window, horizon });
    }
    if channels.is_empty() || budget.n0 < 1.0 || budget.t0 <= 0.0 {
        return AttackSchedule::empty(horizon);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tau_base = 0.9 * budget.t0.min(budget.t_f / budget.t_a);
    const ATTEMPTS: usize = 64;
    for _ in 0..ATTEMPTS {
        let mut events = Vec::new();
        let mut cursor = 0.0;
        loop {
            let gap = budget.t_f * (1.0 + 0.25 * rng.random_range(0.0..1.0));
            let tau = tau_base * rng.random_range(0.4..1.0);
            let start = cursor + gap;
            if start + tau >= window {
                break;
            }
            events.push(Interval::new(start, start + tau));
            cursor = start + tau;
        }
        let per_channel: BTreeMap<Channel, Vec<Interval>> =
            channels.iter().map(|&c| (c, events.clone())).collect();
        let schedule = AttackSchedule::new(horizon, per_channel)?;
        let report = verify_budget(&schedule, budget);
        if report.frequency_ok && report.duration_ok {
            return Ok(schedule);
        }
        tau_base *= 0.7;
    }
    Err(AttackError::GeneratorFailed { attempts: ATTEMPTS })
}
