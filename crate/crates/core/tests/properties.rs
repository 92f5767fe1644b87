//! Randomized invariant checks across the library.
//!
//! Each property encodes a structural guarantee that must hold for every
//! valid input, not just the benchmark fixtures: Laplacian balance and
//! spectrum, game regularity brackets, solver start-independence, attack
//! accounting, flag-protocol consistency, state decomposition, selection
//! algebra, switching fidelity, and certification-rate monotonicity.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use neseek::analysis::{certify, kappa_bound, rate_constants, safe_mode_margin, AnalysisConfig};
use neseek::attack::{
    duration_stats, frequency_stats, generate_schedule, safe_measure, step_flags,
    union_attack_intervals, verify_budget, AttackBudget, AttackFlagState, AttackSchedule, Channel,
    Flag, Interval,
};
use neseek::dynamics::{
    decompose, integrate, selection_matrices, Algorithm, Mode, ScenarioConfig, StackedEstimate,
    StateLayout,
};
use neseek::game::{builtin_game, sample_regularity, solve_ne, BuiltinParams};
use neseek::graph::{build_digraph, effective_laplacian, laplacian_bundle, Digraph};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Strongly connected digraph: a directed ring plus random extra edges.
fn sc_digraph_strategy() -> impl Strategy<Value = Digraph> {
    (3usize..=8)
        .prop_flat_map(|n| {
            let extras = prop::collection::vec(
                (0..n, 0..n, 0.1f64..5.0),
                0..=2 * n,
            );
            (Just(n), extras)
        })
        .prop_map(|(n, extras)| {
            let mut edges: BTreeMap<(usize, usize), f64> =
                (0..n).map(|i| ((i, (i + 1) % n), 1.0)).collect();
            for (from, to, w) in extras {
                if from != to {
                    edges.entry((from, to)).or_insert(w);
                }
            }
            let list: Vec<(usize, usize, f64)> =
                edges.into_iter().map(|((f, t), w)| (f, t, w)).collect();
            build_digraph(n, &list).expect("ring plus extras is valid")
        })
}

/// Random attack schedule on up to three channels, plus its horizon.
fn schedule_strategy() -> impl Strategy<Value = AttackSchedule> {
    (10.0f64..100.0)
        .prop_flat_map(|horizon| {
            let channel = prop::collection::vec(
                prop::collection::vec((0.05f64..horizon / 6.0, 0.05f64..horizon / 8.0), 0..4),
                1..=3,
            );
            (Just(horizon), channel)
        })
        .prop_map(|(horizon, chans)| {
            let mut per_channel = BTreeMap::new();
            for (ch, spans) in chans.into_iter().enumerate() {
                let mut cursor = 0.0;
                let mut intervals = Vec::new();
                for (gap, len) in spans {
                    let start = cursor + gap;
                    let end = start + len;
                    if end >= horizon {
                        break;
                    }
                    intervals.push(Interval::new(start, end));
                    cursor = end;
                }
                if !intervals.is_empty() {
                    per_channel.insert(Channel::new(ch, ch + 1), intervals);
                }
            }
            AttackSchedule::new(horizon, per_channel).expect("constructed schedule is valid")
        })
}

fn budget_strategy() -> impl Strategy<Value = AttackBudget> {
    (0.0f64..4.0, 0.1f64..10.0, 0.0f64..5.0, 1.05f64..60.0)
        .prop_map(|(n0, t_f, t0, t_a)| AttackBudget::new(n0, t_f, t0, t_a).expect("valid budget"))
}

/// Positive-definite certification constants (iota at least epsilon).
fn config_strategy() -> impl Strategy<Value = AnalysisConfig> {
    (
        0.05f64..5.0,
        1.0f64..4.0,
        0.01f64..2.0,
        2usize..10,
        0.05f64..8.0,
    )
        .prop_map(|(epsilon, ratio, lambda2, players, c)| {
            AnalysisConfig::new(
                1.0,
                2.0,
                None,
                players,
                epsilon,
                epsilon * ratio,
                lambda2,
                c,
            )
            .expect("valid constants")
        })
}

/// Random energy-style quadratic game with its parameters.
fn energy_params_strategy() -> impl Strategy<Value = BuiltinParams> {
    (2usize..=6)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.5f64..3.0, n),
                prop::collection::vec(1.0f64..30.0, n),
                0.01f64..1.0,
                0.0f64..20.0,
            )
        })
        .prop_map(|(a, b, c, d)| BuiltinParams::Hvac { a, b, c, d })
}

/// Unordered node pairs of an n-ring that are not ring-adjacent, so both
/// directions can be added as fresh edges.
fn chord_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let ring = (j - i == 1) || (i == 0 && j == n - 1);
            if !ring {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

// ---------------------------------------------------------------------------
// Graph module
// ---------------------------------------------------------------------------

proptest! {
    /// Balance, positivity, and spectrum of every constructed bundle.
    #[test]
    fn bundle_invariants(g in sc_digraph_strategy()) {
        let n = g.node_count();
        let bundle = laplacian_bundle(&g).expect("strongly connected input");

        prop_assert!(bundle.omega.iter().all(|&w| w > 0.0));
        prop_assert!((bundle.omega.sum() - 1.0).abs() < 1e-12);

        let weighted_null = bundle.omega.transpose() * &bundle.raw;
        prop_assert!(weighted_null.amax() < 1e-10, "omega not a left null vector");

        for i in 0..n {
            prop_assert!(bundle.raw.row(i).sum().abs() < 1e-10 * n as f64);
            prop_assert!(bundle.balanced.row(i).sum().abs() < 1e-10 * n as f64);
            prop_assert!(bundle.balanced.column(i).sum().abs() < 1e-10 * n as f64);
        }

        let asym = (&bundle.symmetrized - bundle.symmetrized.transpose()).amax();
        prop_assert!(asym == 0.0, "symmetrized part not symmetric");
        prop_assert!(bundle.lambda2 > 0.0);

        let eigs = bundle.symmetrized.clone().symmetric_eigenvalues();
        let mut sorted: Vec<f64> = eigs.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(sorted[0] > -1e-10, "symmetrized Laplacian not PSD");
        prop_assert!(sorted[0].abs() < 1e-9, "zero eigenvalue missing");
        prop_assert!(sorted[1] > 1e-12, "zero eigenvalue not simple");
    }

    /// Adding a surviving mutual edge pair can only grow the symmetrized
    /// attack-coupling quadratic form (each pair contributes (x_i - x_j)^2).
    #[test]
    fn effective_laplacian_mutual_pair_monotone(
        n in 3usize..=6,
        raw_mask in any::<u16>(),
        extra_sel in any::<u8>(),
        raw_x in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
        let extra = extra_sel as usize % pairs.len();
        let mask = u32::from(raw_mask) & !(1u32 << extra) & ((1u32 << pairs.len()) - 1);

        let full: Vec<(usize, usize, f64)> = pairs
            .iter()
            .flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)])
            .collect();
        let g = build_digraph(n, &full).expect("complete digraph");

        let mut surviving: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                surviving.insert((i, j));
                surviving.insert((j, i));
            }
        }
        let before = effective_laplacian(&g, &surviving).expect("subset of edges");
        let (i, j) = pairs[extra];
        surviving.insert((i, j));
        surviving.insert((j, i));
        let after = effective_laplacian(&g, &surviving).expect("subset of edges");

        let x = DVector::from_fn(n, |k, _| raw_x[k]);
        let q = |l: &DMatrix<f64>| (x.transpose() * ((l + l.transpose()) * 0.5) * &x)[(0, 0)];
        prop_assert!(q(&after) >= q(&before) - 1e-9);
        let gain = q(&after) - q(&before);
        let direct = (x[i] - x[j]).powi(2);
        prop_assert!((gain - direct).abs() < 1e-9 * (1.0 + direct));
    }

    /// On weight-balanced digraphs (ring plus mutual chords), one more
    /// mutual chord never lowers the consensus rate.
    #[test]
    fn lambda2_mutual_pair_monotone(
        n in 5usize..=8,
        raw_mask in any::<u32>(),
        extra_sel in any::<u8>(),
    ) {
        let pairs = chord_pairs(n);
        let extra = extra_sel as usize % pairs.len();
        let mask = raw_mask & !(1u32 << extra) & ((1u32 << pairs.len()) - 1);

        let mut edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                edges.push((i, j, 1.0));
                edges.push((j, i, 1.0));
            }
        }
        let before = laplacian_bundle(&build_digraph(n, &edges).expect("valid"))
            .expect("strongly connected")
            .lambda2;
        let (i, j) = pairs[extra];
        edges.push((i, j, 1.0));
        edges.push((j, i, 1.0));
        let after = laplacian_bundle(&build_digraph(n, &edges).expect("valid"))
            .expect("strongly connected")
            .lambda2;
        prop_assert!(after >= before - 1e-9, "lambda2 dropped: {before} -> {after}");
    }
}

// ---------------------------------------------------------------------------
// Game module
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sampling can only shrink the analytic regularity bracket, and the
    /// modulus never exceeds the Lipschitz constant.
    #[test]
    fn sampled_regularity_brackets_analytic(params in energy_params_strategy(), seed in any::<u64>()) {
        let game = builtin_game(&params).expect("valid game");
        let analytic = game.analytic_regularity().expect("quadratic game declares constants");
        let bounds = vec![(-10.0, 10.0); game.total_dim()];
        let sampled = sample_regularity(&game, &bounds, 200, seed).expect("monotone on the box");
        prop_assert!(sampled.epsilon >= analytic.epsilon - 1e-6);
        prop_assert!(sampled.iota <= analytic.iota + 1e-6);
        prop_assert!(sampled.epsilon <= sampled.iota + 1e-12);
        prop_assert!(analytic.epsilon <= analytic.iota + 1e-12);
    }

    /// The equilibrium solver lands on the same point from any start, with
    /// a first-order residual at numerical scale.
    #[test]
    fn solver_start_invariance(
        params in energy_params_strategy(),
        starts in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 6), 3),
    ) {
        let game = builtin_game(&params).expect("valid game");
        let n = game.total_dim();
        let mut solutions = Vec::new();
        for start in &starts {
            let x0 = DVector::from_fn(n, |i, _| start[i]);
            let sol = solve_ne(&game, &x0).expect("strongly monotone game converges");
            prop_assert!(sol.residual < 1e-9 * (1.0 + sol.x_star.norm()));
            solutions.push(sol.x_star);
        }
        for other in &solutions[1..] {
            let gap = (&solutions[0] - other).norm();
            prop_assert!(gap < 1e-8 * (1.0 + solutions[0].norm()));
        }
    }

    /// Analytic gradients match central differences on a wide box.
    #[test]
    fn gradient_matches_finite_differences(
        which in 0usize..3,
        point in prop::collection::vec(-50.0f64..50.0, 6),
    ) {
        let game = match which {
            0 => builtin_game(&BuiltinParams::Cournot {
                a: vec![0.0; 6],
                b: (0..6).map(|i| 10.0 + 4.0 * i as f64).collect(),
                c: vec![0.0; 6],
                d: vec![0.0; 6],
                f0: 720.0,
                f1: 1.0,
            }),
            1 => builtin_game(&BuiltinParams::Hvac {
                a: vec![1.0; 5],
                b: vec![10.0, 15.0, 20.0, 25.0, 30.0],
                c: 0.1,
                d: 10.0,
            }),
            _ => builtin_game(&BuiltinParams::Nonquadratic),
        }
        .expect("valid game");
        let n = game.total_dim();
        let x = DVector::from_fn(n, |i, _| point[i]);
        for i in 0..game.player_count() {
            let analytic = game.partial_gradient(i, &x).expect("gradient evaluates");
            for k in 0..game.action_dims()[i] {
                let coord = game.offset(i) + k;
                let h = 1e-6f64.max(1e-8 * x[coord].abs());
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[coord] += h;
                lo[coord] -= h;
                let c_hi = game.cost(i, &hi).unwrap();
                let c_lo = game.cost(i, &lo).unwrap();
                let fd = (c_hi - c_lo) / (2.0 * h);
                // The quotient cannot resolve below the rounding noise of
                // the two cost evaluations, so that floor joins the stated
                // relative tolerance.
                let noise = 8.0 * f64::EPSILON * c_hi.abs().max(c_lo.abs()).max(1.0) / (2.0 * h);
                prop_assert!(
                    (analytic[k] - fd).abs() <= 1e-6 * analytic[k].abs().max(1.0) + noise,
                    "player {i} coord {coord}: analytic {} vs fd {fd}",
                    analytic[k]
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Attack module
// ---------------------------------------------------------------------------

proptest! {
    /// Safe time is the exact window complement of attacked time.
    #[test]
    fn accounting_identity(s in schedule_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let horizon = s.horizon();
        let (t1, t2) = if a < b { (a, b) } else { (b, a) };
        let (t1, t2) = (t1 * horizon, (t2 * horizon).max(t1 * horizon + 1e-6));
        let attacked = duration_stats(&s, t1, t2).expect("valid window");
        let safe = safe_measure(&s, t1, t2).expect("valid window");
        prop_assert_eq!(safe, (t2 - t1) - attacked);
        prop_assert!(attacked >= 0.0 && attacked <= (t2 - t1) + 1e-12);
    }

    /// The merged union is sorted, disjoint, inside the horizon, and its
    /// measure reproduces the duration statistic bit for bit.
    #[test]
    fn union_is_sorted_disjoint_and_measured(s in schedule_strategy()) {
        let union = union_attack_intervals(&s);
        for w in union.windows(2) {
            prop_assert!(w[0].end < w[1].start, "union intervals must be separated: {w:?}");
        }
        for iv in &union {
            prop_assert!(iv.start >= 0.0 && iv.end <= s.horizon() && iv.start < iv.end);
        }
        let total: f64 = union.iter().map(Interval::measure).sum();
        let stat = duration_stats(&s, 0.0, s.horizon()).expect("valid window");
        prop_assert_eq!(total, stat);
    }

    /// One extra attack interval never reduces the attacked measure, and
    /// never reduces the event count when it stays clear of existing events.
    #[test]
    fn added_interval_is_monotone(
        s in schedule_strategy(),
        lo in 0.05f64..0.8,
        len in 0.01f64..0.15,
        t1_frac in 0.0f64..0.5,
        t2_frac in 0.5f64..1.0,
    ) {
        let horizon = s.horizon();
        let start = lo * horizon;
        let end = (start + len * horizon).min(horizon - 1e-9);
        prop_assume!(end > start);

        // Keep a positive gap to every existing union event so the addition
        // cannot merge events (merging legitimately reduces the count).
        let union = union_attack_intervals(&s);
        let clear = union
            .iter()
            .all(|iv| end < iv.start - 1e-9 || start > iv.end + 1e-9);
        prop_assume!(clear);

        let mut per_channel: BTreeMap<Channel, Vec<Interval>> = s
            .attacked_channels()
            .map(|c| (c, s.intervals(c).to_vec()))
            .collect();
        per_channel.insert(Channel::new(8, 9), vec![Interval::new(start, end)]);
        let grown = AttackSchedule::new(horizon, per_channel).expect("still valid");

        let (t1, t2) = (t1_frac * horizon, t2_frac * horizon);
        let d_before = duration_stats(&s, t1, t2).expect("valid window");
        let d_after = duration_stats(&grown, t1, t2).expect("valid window");
        prop_assert!(d_after >= d_before - 1e-12);

        let (n_before, _) = frequency_stats(&s, t1, t2).expect("valid window");
        let (n_after, _) = frequency_stats(&grown, t1, t2).expect("valid window");
        prop_assert!(n_after >= n_before);
    }

    /// Flag-protocol consistency: channels start clear; a channel survives
    /// exactly while its flag is clear; jamming and the one-step reverse
    /// notification are reproduced from the raw attack sets.
    #[test]
    fn flag_protocol_consistency(steps in prop::collection::vec(0u8..16, 1..20)) {
        let channels: BTreeSet<Channel> = [(0, 1), (1, 0), (1, 2), (2, 1)]
            .into_iter()
            .map(|(f, t)| Channel::new(f, t))
            .collect();
        let order: Vec<Channel> = channels.iter().copied().collect();
        let mut state = AttackFlagState::new(&channels);
        prop_assert!(order.iter().all(|&c| state.flag(c) == Some(Flag::Clear)));

        for word in steps {
            let attacked: BTreeSet<Channel> = order
                .iter()
                .enumerate()
                .filter(|(idx, _)| word & (1 << idx) != 0)
                .map(|(_, &c)| c)
                .collect();
            let (next, surviving) = step_flags(&state, &attacked).expect("known channels");
            for &c in &order {
                let expected = if attacked.contains(&c) {
                    Flag::Jammed
                } else if state.flag(c.reverse()) == Some(Flag::Jammed) {
                    Flag::Notified
                } else {
                    Flag::Clear
                };
                prop_assert_eq!(next.flag(c), Some(expected));
                prop_assert_eq!(surviving.contains(&c), expected == Flag::Clear);
            }
            state = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever the generator draws satisfies the budget it was given and
    /// stays inside the requested window.
    #[test]
    fn generator_respects_budget(
        b in budget_strategy(),
        horizon in 20.0f64..200.0,
        window_frac in 0.2f64..1.0,
        seed in any::<u64>(),
    ) {
        let channels: BTreeSet<Channel> =
            [(0, 1), (1, 2)].into_iter().map(|(f, t)| Channel::new(f, t)).collect();
        let window = window_frac * horizon;
        let Ok(schedule) = generate_schedule(&channels, &b, horizon, window, seed) else {
            // The generator may give up on adversarial budgets; that is a
            // refusal, not a violation.
            return Ok(());
        };
        let report = verify_budget(&schedule, &b);
        prop_assert!(report.frequency_ok && report.duration_ok, "{report:?}");
        for c in schedule.attacked_channels() {
            for iv in schedule.intervals(c) {
                prop_assert!(iv.start >= 0.0 && iv.end <= window);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dynamics module
// ---------------------------------------------------------------------------

proptest! {
    /// The consensus/disagreement split is exact and orthogonal.
    #[test]
    fn decomposition_is_orthogonal(
        dims in prop::collection::vec(1usize..=3, 2..=5),
        scale in 0.1f64..100.0,
        raw in prop::collection::vec(-1.0f64..1.0, 75),
    ) {
        let layout = Arc::new(StateLayout::new(&dims).expect("valid dims"));
        let dim = layout.stacked_dim();
        let x = StackedEstimate::new(
            Arc::clone(&layout),
            DVector::from_fn(dim, |i, _| raw[i % raw.len()] * scale),
        )
        .expect("dimension matches");
        let (consensus, disagreement, mean) = decompose(&x);

        let rebuilt = consensus.vector() + disagreement.vector();
        prop_assert!((rebuilt - x.vector()).amax() <= 1e-12 * scale.max(1.0));

        let dot = consensus.vector().dot(disagreement.vector());
        prop_assert!(dot.abs() <= 1e-9 * x.vector().norm_squared().max(1e-30));

        // The consensus part replicates the mean profile.
        for i in 0..layout.player_count() {
            let block = consensus.vector().rows(i * layout.action_dim(), layout.action_dim());
            prop_assert!((block - &mean).amax() == 0.0);
        }
    }

    /// Selection blocks are orthonormal 0/1 row selectors; the stack picks
    /// each player's own coordinates from a replicated profile and has unit
    /// spectral norm.
    #[test]
    fn selection_matrices_are_orthonormal_selectors(
        dims in prop::collection::vec(1usize..=3, 2..=5),
        raw in prop::collection::vec(-5.0f64..5.0, 15),
    ) {
        let sel = selection_matrices(&dims).expect("valid dims");
        let layout = StateLayout::new(&dims).expect("valid dims");
        let n = layout.action_dim();
        for (i, r) in sel.blocks.iter().enumerate() {
            prop_assert_eq!(r.nrows(), dims[i]);
            prop_assert!(r.iter().all(|&e| e == 0.0 || e == 1.0));
            let gram = r * r.transpose();
            prop_assert!((gram - DMatrix::identity(dims[i], dims[i])).amax() == 0.0);
        }
        let v = DVector::from_fn(n, |k, _| raw[k % raw.len()]);
        let replicated = StackedEstimate::from_consensus(
            Arc::new(layout),
            &v,
        )
        .expect("dimension matches");
        let picked = &sel.stacked * replicated.vector();
        prop_assert!((picked - &v).amax() == 0.0);

        let sigma = sel.stacked.clone().svd(false, false).singular_values.max();
        prop_assert!((sigma - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The recorded mode at every sample equals membership of the sample
    /// time in the union of attack intervals (half-open, grid-aligned).
    #[test]
    fn trace_mode_matches_schedule(
        spans in prop::collection::vec((1usize..200, 1usize..150), 0..4),
    ) {
        let steps_total = 1000usize;
        let h = 1e-3;
        let mut intervals = Vec::new();
        let mut cursor = 0usize;
        for (gap, len) in spans {
            let start = cursor + gap;
            let end = start + len;
            if end >= steps_total {
                break;
            }
            intervals.push((start, end));
            cursor = end;
        }
        let mut per_channel = BTreeMap::new();
        if !intervals.is_empty() {
            per_channel.insert(
                Channel::new(0, 1),
                intervals
                    .iter()
                    .map(|&(s, e)| Interval::new(s as f64 * h, e as f64 * h))
                    .collect::<Vec<_>>(),
            );
        }
        let schedule = AttackSchedule::new(1.0, per_channel).expect("grid-aligned schedule");

        let game = builtin_game(&BuiltinParams::Hvac {
            a: vec![1.0, 1.0],
            b: vec![1.0, 2.0],
            c: 0.1,
            d: 0.0,
        })
        .expect("valid game");
        let graph = build_digraph(2, &[(0, 1, 1.0), (1, 0, 1.0)]).expect("two-ring");
        let layout = Arc::new(StateLayout::new(game.action_dims()).expect("valid dims"));
        let x0 = StackedEstimate::new(Arc::clone(&layout), DVector::zeros(4)).expect("dims");
        let scenario = ScenarioConfig::new(
            game, graph, schedule, 5.0, x0, 1.0, h, 5, Algorithm::Resilient,
        )
        .expect("valid scenario");
        let trace = integrate(&scenario, None).expect("integration succeeds");

        for (idx, (&t, &mode)) in trace.times().iter().zip(trace.modes()).enumerate() {
            let step = (t / h).round() as usize;
            let inside = intervals.iter().any(|&(s, e)| s <= step && step < e);
            prop_assert_eq!(
                mode == Mode::Attack,
                inside,
                "sample {} at t = {}: mode {:?}",
                idx,
                t,
                mode
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Analysis module
// ---------------------------------------------------------------------------

proptest! {
    /// The gain bound is the exact positive-definiteness threshold of the
    /// safe-mode form, bracketed at one part in a million.
    #[test]
    fn gain_bound_is_exact_threshold(cfg in config_strategy()) {
        let threshold = kappa_bound(cfg.epsilon, cfg.iota, cfg.lambda2).expect("positive inputs");
        prop_assert!(safe_mode_margin(&cfg, threshold * (1.0 - 1e-6)) < 0.0);
        prop_assert!(safe_mode_margin(&cfg, threshold * (1.0 + 1e-6)) > 0.0);
        prop_assert!(rate_constants(&cfg, threshold * (1.0 - 1e-6)).is_err());
        let rates = rate_constants(&cfg, threshold * (1.0 + 1e-6)).expect("above bound");
        prop_assert!(rates.lambda_a > 0.0 && rates.lambda_b > 0.0);
    }

    /// Mode rates do not depend on the Lyapunov weights: both quadratic
    /// forms scale linearly in their own weight.
    #[test]
    fn rates_are_weight_invariant(cfg in config_strategy(), alpha in 0.1f64..5.0, beta in 0.1f64..5.0) {
        prop_assume!((alpha - beta).abs() > 1e-3);
        let kappa = kappa_bound(cfg.epsilon, cfg.iota, cfg.lambda2).unwrap() * 1.5;
        let reference = rate_constants(&cfg, kappa).expect("above bound");
        let rescaled_cfg = AnalysisConfig::new(
            alpha,
            beta,
            None,
            cfg.player_count,
            cfg.epsilon,
            cfg.iota,
            cfg.lambda2,
            cfg.c,
        )
        .expect("valid constants");
        let rescaled = rate_constants(&rescaled_cfg, kappa).expect("above bound");
        prop_assert!((reference.lambda_a - rescaled.lambda_a).abs() <= 1e-9 * reference.lambda_a.abs());
        prop_assert!((reference.lambda_b - rescaled.lambda_b).abs() <= 1e-9 * reference.lambda_b.abs());
    }

    /// Sparser attacks (larger T_a) never slow the certified rate; a larger
    /// coupling norm never speeds it up.
    #[test]
    fn certified_rate_monotonicity(
        cfg in config_strategy(),
        t_a_lo in 1.5f64..30.0,
        t_a_gain in 1.01f64..4.0,
        c_gain in 1.01f64..4.0,
    ) {
        let kappa = kappa_bound(cfg.epsilon, cfg.iota, cfg.lambda2).unwrap() * 2.0;
        let game = builtin_game(&BuiltinParams::Hvac {
            a: vec![1.0; 2],
            b: vec![1.0, 2.0],
            c: 0.1,
            d: 0.0,
        })
        .expect("valid game");
        let graph = build_digraph(2, &[(0, 1, 1.0), (1, 0, 1.0)]).expect("two-ring");
        let layout = Arc::new(StateLayout::new(game.action_dims()).expect("dims"));
        let x0 = StackedEstimate::new(Arc::clone(&layout), DVector::zeros(4)).expect("dims");
        let scenario = ScenarioConfig::new(
            game,
            graph,
            AttackSchedule::empty(1.0).unwrap(),
            kappa,
            x0,
            1.0,
            1e-2,
            1,
            Algorithm::Resilient,
        )
        .expect("valid scenario");

        let slow = AttackBudget::new(1.0, 2.0, 0.5, t_a_lo).unwrap();
        let sparse = AttackBudget::new(1.0, 2.0, 0.5, t_a_lo * t_a_gain).unwrap();
        let eta_slow = certify(&scenario, Some(&slow), &cfg).eta;
        let eta_sparse = certify(&scenario, Some(&sparse), &cfg).eta;
        if let (Some(lo), Some(hi)) = (eta_slow, eta_sparse) {
            prop_assert!(hi >= lo - 1e-12, "eta fell from {lo} to {hi} as T_a grew");
        }

        let harsher = AnalysisConfig::new(
            cfg.alpha,
            cfg.beta,
            cfg.eta_star,
            cfg.player_count,
            cfg.epsilon,
            cfg.iota,
            cfg.lambda2,
            cfg.c * c_gain,
        )
        .expect("valid constants");
        let base_rates = rate_constants(&cfg, kappa).expect("above bound");
        let harsh_rates = rate_constants(&harsher, kappa).expect("above bound");
        prop_assert!(harsh_rates.lambda_b >= base_rates.lambda_b - 1e-12);
        let eta_base = certify(&scenario, Some(&slow), &cfg).eta.unwrap();
        let eta_harsh = certify(&scenario, Some(&slow), &harsher).eta.unwrap();
        prop_assert!(eta_harsh <= eta_base + 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Integrator order
// ---------------------------------------------------------------------------

/// Halving the step shrinks the endpoint difference at fourth order
/// (observed order at least 3.5 on a smooth attack-free run).
#[test]
fn step_halving_shows_fourth_order() {
    let game = || {
        builtin_game(&BuiltinParams::Hvac {
            a: vec![1.0; 5],
            b: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            c: 0.1,
            d: 10.0,
        })
        .expect("valid game")
    };
    let graph = || {
        build_digraph(
            5,
            &[
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 0, 1.0),
                (1, 0, 1.0),
            ],
        )
        .expect("valid digraph")
    };
    let run = |h: f64| -> DVector<f64> {
        let g = game();
        let layout = Arc::new(StateLayout::new(g.action_dims()).expect("dims"));
        let x0 = StackedEstimate::new(
            Arc::clone(&layout),
            DVector::from_fn(25, |i, _| (i as f64 * 0.7).sin() * 5.0),
        )
        .expect("dims");
        let steps = (2.0 / h).round() as usize;
        let scenario = ScenarioConfig::new(
            g,
            graph(),
            AttackSchedule::empty(2.0).unwrap(),
            10.0,
            x0,
            2.0,
            h,
            steps,
            Algorithm::Resilient,
        )
        .expect("valid scenario");
        integrate(&scenario, None)
            .expect("integration succeeds")
            .final_state()
            .vector()
            .clone()
    };
    let coarse = run(8e-3);
    let mid = run(4e-3);
    let fine = run(2e-3);
    let e1 = (&coarse - &mid).norm();
    let e2 = (&mid - &fine).norm();
    let order = (e1 / e2).log2();
    assert!(
        order >= 3.5,
        "observed convergence order {order:.2} (gaps {e1:.3e}, {e2:.3e})"
    );
}
