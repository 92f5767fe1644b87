//! Certified convergence constants for the switched dynamics, plus
//! empirical rate fitting from simulation traces.
//!
//! The certificate machinery revolves around two quadratic forms. In safe
//! mode a Lyapunov function decays at rate `lambda_a` determined by the
//! smallest eigenvalue of
//!
//! ```text
//! Q_a = 2 alpha [ eps/N         -iota/sqrt(N) ]
//!               [ -iota/sqrt(N)  kappa lambda2 - iota ]
//! ```
//!
//! which is positive definite exactly when `kappa` exceeds the gain bound
//! `kappa* = (iota^2/eps + iota)/lambda2`. During attacks a second function
//! grows at most at rate `lambda_b` from the largest singular value of
//!
//! ```text
//! Q_b = 2 beta [ c - eps/N       c + iota/sqrt(N) ]
//!              [ c + iota/sqrt(N)  c + iota ]
//! ```
//!
//! where `c` bounds the spectral norm of every surviving-edge Laplacian the
//! attack mode can couple with. Balancing the two modes yields minimum
//! requirements on the attack budget (a dwell-time threshold `T_f*` for the
//! frequency bound and a duty threshold `T_a*` for the duration bound) and,
//! when a schedule's budget clears both, a net exponential rate
//! `eta = lambda_a - (lambda_a + lambda_b)/T_a - eta*` with overshoot
//! constant `varsigma`.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::attack::{
    restrict_intervals, union_attack_intervals, AttackBudget, AttackSchedule, BudgetReport,
    Interval,
};
use crate::game::{GameDefinition, GameError};
use crate::dynamics::{
    attack_mode_laplacians, estimated_pseudo_gradient, DynamicsError, ScenarioConfig,
    SimulationTrace, StackedEstimate, StateLayout,
};
use crate::graph::effective_laplacian;

/// Errors raised by certificate computations and rate fitting.
#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{name} = {value} must be strictly positive")]
    NonPositive { name: &'static str, value: f64 },
    #[error("the mode weights must differ (alpha = beta = {0})")]
    EqualWeights(f64),
    #[error("eta_star = {eta_star} must lie strictly below lambda_a = {lambda_a}")]
    EtaStarTooLarge { eta_star: f64, lambda_a: f64 },
    #[error(
        "kappa = {kappa} does not exceed the gain bound {kappa_min}; \
         the safe-mode quadratic form is not positive definite"
    )]
    GainBelowBound { kappa: f64, kappa_min: f64 },
    #[error("trace has no equilibrium error series; integrate with an oracle")]
    MissingErrorSeries,
    #[error("rate fitting needs at least {needed} usable samples, found {samples}")]
    TraceTooShort { samples: usize, needed: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sampling box entry {index} must be a finite non-empty interval")]
    InvalidBox { index: usize },
    #[error("Lipschitz sampling needs at least 100 pairs")]
    SampleCountTooSmall,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Constants feeding the certificate: Lyapunov mode weights, the chattering
/// margin, and the regularity/network constants of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig {
    /// Safe-mode Lyapunov weight (> 0).
    pub alpha: f64,
    /// Attack-mode Lyapunov weight (> 0, != alpha).
    pub beta: f64,
    /// Chattering margin eta* in (0, lambda_a); `None` defaults to
    /// lambda_a / 2 once lambda_a is known.
    pub eta_star: Option<f64>,
    /// Number of players N.
    pub player_count: usize,
    /// Strong-monotonicity modulus of the pseudo-gradient.
    pub epsilon: f64,
    /// Lipschitz constant (the larger of the joint-action and stacked maps).
    pub iota: f64,
    /// Smallest nonzero eigenvalue of the symmetrized balanced Laplacian.
    pub lambda2: f64,
    /// Spectral norm bound on every attack-mode coupling Laplacian.
    pub c: f64,
}

impl AnalysisConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        beta: f64,
        eta_star: Option<f64>,
        player_count: usize,
        epsilon: f64,
        iota: f64,
        lambda2: f64,
        c: f64,
    ) -> Result<Self, AnalysisError> {
        let positive = |name: &'static str, value: f64| -> Result<(), AnalysisError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(AnalysisError::NonPositive { name, value })
            }
        };
        positive("alpha", alpha)?;
        positive("beta", beta)?;
        if let Some(e) = eta_star {
            positive("eta_star", e)?;
        }
        positive("player_count", player_count as f64)?;
        positive("epsilon", epsilon)?;
        positive("iota", iota)?;
        positive("lambda2", lambda2)?;
        positive("c", c)?;
        if alpha == beta {
            return Err(AnalysisError::EqualWeights(alpha));
        }
        Ok(Self {
            alpha,
            beta,
            eta_star,
            player_count,
            epsilon,
            iota,
            lambda2,
            c,
        })
    }

    /// Default weights alpha = 1, beta = 2 and a deferred eta* choice.
    pub fn with_default_weights(
        player_count: usize,
        epsilon: f64,
        iota: f64,
        lambda2: f64,
        c: f64,
    ) -> Result<Self, AnalysisError> {
        Self::new(1.0, 2.0, None, player_count, epsilon, iota, lambda2, c)
    }

    /// The chattering margin to use given the computed decay rate.
    pub fn resolved_eta_star(&self, lambda_a: f64) -> f64 {
        self.eta_star.unwrap_or(lambda_a / 2.0)
    }

    /// `mu = max{alpha/beta, beta/alpha} > 1`, the worst ratio between the
    /// two mode weights.
    pub fn mu(&self) -> f64 {
        (self.alpha / self.beta).max(self.beta / self.alpha)
    }
}

/// Gain bound `kappa* = (iota^2/eps + iota)/lambda2`: the consensus gain
/// must exceed it for the safe-mode quadratic form to be positive definite.
pub fn kappa_bound(epsilon: f64, iota: f64, lambda2: f64) -> Result<f64, AnalysisError> {
    for (name, value) in [
        ("epsilon", epsilon),
        ("iota", iota),
        ("lambda2", lambda2),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(AnalysisError::NonPositive { name, value });
        }
    }
    Ok((iota * iota / epsilon + iota) / lambda2)
}

/// Eigenvalues (min, max) of the symmetric 2x2 matrix [[p, q], [q, r]].
fn sym2_eigenvalues(p: f64, q: f64, r: f64) -> (f64, f64) {
    let half_trace = 0.5 * (p + r);
    let radius = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    (half_trace - radius, half_trace + radius)
}

/// Safe-mode quadratic form `Q_a` at the given gain.
pub fn safe_mode_form(cfg: &AnalysisConfig, kappa: f64) -> Matrix2<f64> {
    let n = cfg.player_count as f64;
    let s = 2.0 * cfg.alpha;
    Matrix2::new(
        s * cfg.epsilon / n,
        s * (-cfg.iota / n.sqrt()),
        s * (-cfg.iota / n.sqrt()),
        s * (kappa * cfg.lambda2 - cfg.iota),
    )
}

/// Attack-mode quadratic form `Q_b`.
pub fn attack_mode_form(cfg: &AnalysisConfig) -> Matrix2<f64> {
    let n = cfg.player_count as f64;
    let s = 2.0 * cfg.beta;
    Matrix2::new(
        s * (cfg.c - cfg.epsilon / n),
        s * (cfg.c + cfg.iota / n.sqrt()),
        s * (cfg.c + cfg.iota / n.sqrt()),
        s * (cfg.c + cfg.iota),
    )
}

/// Smallest eigenvalue of `Q_a` at the given gain; positive exactly when
/// `kappa` exceeds [`kappa_bound`]. Usable on either side of the threshold.
pub fn safe_mode_margin(cfg: &AnalysisConfig, kappa: f64) -> f64 {
    let q = safe_mode_form(cfg, kappa);
    sym2_eigenvalues(q[(0, 0)], q[(0, 1)], q[(1, 1)]).0
}

/// Per-mode Lyapunov rates with the quadratic forms they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// Safe-mode decay rate `lambda_min(Q_a)/alpha`.
    pub lambda_a: f64,
    /// Attack-mode growth bound `sigma_max(Q_b)/beta`.
    pub lambda_b: f64,
    pub q_a: Matrix2<f64>,
    pub q_b: Matrix2<f64>,
}

/// Computes both mode rates, refusing gains at or below [`kappa_bound`].
pub fn rate_constants(cfg: &AnalysisConfig, kappa: f64) -> Result<RateConstants, AnalysisError> {
    let q_a = safe_mode_form(cfg, kappa);
    let margin = sym2_eigenvalues(q_a[(0, 0)], q_a[(0, 1)], q_a[(1, 1)]).0;
    if margin <= 0.0 {
        return Err(AnalysisError::GainBelowBound {
            kappa,
            kappa_min: kappa_bound(cfg.epsilon, cfg.iota, cfg.lambda2)?,
        });
    }
    let q_b = attack_mode_form(cfg);
    let (lo, hi) = sym2_eigenvalues(q_b[(0, 0)], q_b[(0, 1)], q_b[(1, 1)]);
    let sigma_max = lo.abs().max(hi.abs());
    Ok(RateConstants {
        lambda_a: margin / cfg.alpha,
        lambda_b: sigma_max / cfg.beta,
        q_a,
        q_b,
    })
}

/// Minimum budget thresholds `(T_f*, T_a*)`: attacks must be rarer than one
/// per `T_f*` seconds on average and occupy less than a `1/T_a*` fraction of
/// time for the certificate to close.
pub fn budget_thresholds(
    cfg: &AnalysisConfig,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<(f64, f64), AnalysisError> {
    let eta_star = cfg.resolved_eta_star(lambda_a);
    if eta_star <= 0.0 {
        return Err(AnalysisError::NonPositive {
            name: "eta_star",
            value: eta_star,
        });
    }
    if eta_star >= lambda_a {
        return Err(AnalysisError::EtaStarTooLarge { eta_star, lambda_a });
    }
    let t_f_star = 2.0 * cfg.mu().ln() / eta_star;
    let t_a_star = (lambda_a + lambda_b) / (lambda_a - eta_star);
    Ok((t_f_star, t_a_star))
}

/// Truth value of each certificate condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CertificateConditions {
    /// kappa above the gain bound (Q_a positive definite).
    pub gain_above_bound: bool,
    /// Budget frequency above T_f* and the schedule inside the budget.
    pub frequency_satisfied: bool,
    /// Budget duty above T_a* and the schedule inside the budget.
    pub duration_satisfied: bool,
    /// Net rate eta positive.
    pub rate_positive: bool,
}

/// Full certification output: every constant entering the rate bound, the
/// budget checked against (given or fitted from the schedule), and the
/// resulting net rate when the certificate closes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub alpha: f64,
    pub beta: f64,
    /// Resolved chattering margin (the lambda_a/2 default applied).
    pub eta_star: f64,
    pub c: f64,
    pub epsilon: f64,
    pub iota: f64,
    pub lambda2: f64,
    pub kappa: f64,
    /// Gain bound kappa*.
    pub kappa_min: f64,
    /// Safe-mode decay rate; not positive when kappa is below the bound.
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub mu: f64,
    pub t_f_star: Option<f64>,
    pub t_a_star: Option<f64>,
    /// Budget certified against; `None` in the attack-free regime.
    pub budget: Option<AttackBudget>,
    /// Whether the budget was fitted from the schedule rather than given.
    pub budget_fitted: bool,
    pub budget_check: Option<BudgetReport>,
    /// Net certified rate `lambda_a - (lambda_a + lambda_b)/T_a - eta*`
    /// (attack-free: `lambda_a - eta*`).
    pub eta: Option<f64>,
    /// Overshoot constant of the certified envelope.
    pub varsigma: Option<f64>,
    pub conditions: CertificateConditions,
    pub certified: bool,
}

/// Tightest budget the schedule satisfies at the given `T_f`, `T_a`:
/// the smallest `N0` and `T0` making every window inequality hold.
///
/// The fixed offsets absorb transients, not sustained attack mass, so each
/// is capped at what its rate term earns over the whole horizon
/// (`N0 <= horizon/T_f`, `T0 <= horizon/T_a`). A near-always-on schedule
/// blows past the duration cap and yields no budget: its duty can only be
/// explained by `T_a <= 1/duty`, below the certifiable threshold.
fn minimal_budget(schedule: &AttackSchedule, t_f: f64, t_a: f64) -> Option<AttackBudget> {
    let union = union_attack_intervals(schedule);
    let mut n0 = 0.0f64;
    for j in 0..union.len() {
        for k in j..union.len() {
            let gap = if k == j {
                0.0
            } else {
                union[k].start - union[j].end
            };
            n0 = n0.max((k - j + 1) as f64 - gap / t_f);
        }
    }
    let mut t0 = 0.0f64;
    let mut t1_candidates = vec![0.0];
    t1_candidates.extend(union.iter().map(|iv| iv.start));
    let mut t2_candidates: Vec<f64> = union.iter().map(|iv| iv.end).collect();
    t2_candidates.push(schedule.horizon());
    for &t1 in &t1_candidates {
        for &t2 in &t2_candidates {
            if t2 <= t1 {
                continue;
            }
            let measure: f64 = restrict_intervals(&union, t1, t2)
                .iter()
                .map(Interval::measure)
                .sum();
            t0 = t0.max(measure - (t2 - t1) / t_a);
        }
    }
    let horizon = schedule.horizon();
    if n0 > horizon / t_f || t0 > horizon / t_a {
        return None;
    }
    AttackBudget::new(n0, t_f, t0, t_a).ok()
}

/// Assembles the certificate for a scenario.
///
/// The budget argument selects the regime: `Some` checks the scenario's
/// schedule against that budget; `None` with an empty schedule certifies the
/// attack-free rate `lambda_a - eta*`; `None` with a nonempty schedule fits
/// a budget at twice each threshold and the tightest capped `N0`, `T0` the
/// schedule allows (see [`minimal_budget`]'s caps; schedules too dense for
/// any modest budget fit none). Failed conditions are report content, never
/// errors.
pub fn certify(
    scenario: &ScenarioConfig,
    budget: Option<&AttackBudget>,
    cfg: &AnalysisConfig,
) -> RateReport {
    let kappa = scenario.kappa;
    let kappa_min = (cfg.iota * cfg.iota / cfg.epsilon + cfg.iota) / cfg.lambda2;
    let margin = safe_mode_margin(cfg, kappa);
    let lambda_a = margin / cfg.alpha;
    let q_b = attack_mode_form(cfg);
    let (lo, hi) = sym2_eigenvalues(q_b[(0, 0)], q_b[(0, 1)], q_b[(1, 1)]);
    let lambda_b = lo.abs().max(hi.abs()) / cfg.beta;
    let mu = cfg.mu();
    let eta_star = cfg.resolved_eta_star(lambda_a);
    let gain_above_bound = margin > 0.0;

    let t_f_star = (eta_star > 0.0).then(|| 2.0 * mu.ln() / eta_star);
    let t_a_star =
        (lambda_a > eta_star && eta_star > 0.0).then(|| (lambda_a + lambda_b) / (lambda_a - eta_star));

    let attack_free = budget.is_none() && scenario.schedule.is_empty();
    let (resolved_budget, budget_fitted) = match budget {
        Some(b) => (Some(*b), false),
        None if attack_free => (None, false),
        None => {
            let fitted = match (t_f_star, t_a_star) {
                (Some(tf), Some(ta)) => minimal_budget(&scenario.schedule, 2.0 * tf, 2.0 * ta),
                _ => None,
            };
            (fitted, true)
        }
    };
    let budget_check = resolved_budget
        .as_ref()
        .map(|b| crate::attack::verify_budget(&scenario.schedule, b));

    let (frequency_satisfied, duration_satisfied) = if attack_free {
        (true, true)
    } else {
        match (&resolved_budget, &budget_check) {
            (Some(b), Some(check)) => (
                check.frequency_ok && t_f_star.is_some_and(|t| b.t_f > t),
                check.duration_ok && t_a_star.is_some_and(|t| b.t_a > t),
            ),
            _ => (false, false),
        }
    };

    let eta = if attack_free {
        (eta_star > 0.0).then_some(lambda_a - eta_star)
    } else {
        resolved_budget
            .as_ref()
            .map(|b| lambda_a - (lambda_a + lambda_b) / b.t_a - eta_star)
    };
    let varsigma = if attack_free {
        Some(mu)
    } else {
        resolved_budget
            .as_ref()
            .map(|b| ((lambda_a + lambda_b) * b.t0 + 2.0 * mu.ln() * b.n0).exp() * mu)
    };

    let rate_positive = eta.is_some_and(|e| e > 0.0);
    let certified = gain_above_bound && frequency_satisfied && duration_satisfied && rate_positive;

    RateReport {
        alpha: cfg.alpha,
        beta: cfg.beta,
        eta_star,
        c: cfg.c,
        epsilon: cfg.epsilon,
        iota: cfg.iota,
        lambda2: cfg.lambda2,
        kappa,
        kappa_min,
        lambda_a,
        lambda_b,
        mu,
        t_f_star,
        t_a_star,
        budget: resolved_budget,
        budget_fitted,
        budget_check,
        eta,
        varsigma,
        conditions: CertificateConditions {
            gain_above_bound,
            frequency_satisfied,
            duration_satisfied,
            rate_positive,
        },
        certified,
    }
}

/// Largest spectral norm among the attack-mode coupling Laplacians the
/// scenario can produce; falls back to the all-edges unit-weight Laplacian
/// norm when the schedule never triggers attack mode (a vacuous but positive
/// bound, keeping the certificate constants well defined).
pub fn attack_coupling_norm(scenario: &ScenarioConfig) -> Result<f64, AnalysisError> {
    let laplacians = attack_mode_laplacians(scenario)?;
    if laplacians.is_empty() {
        let full = effective_laplacian(&scenario.graph, &scenario.graph.edge_set())
            .map_err(DynamicsError::from)?;
        return Ok(spectral_norm(&full));
    }
    Ok(laplacians
        .iter()
        .map(spectral_norm)
        .fold(0.0, f64::max))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Sampled Lipschitz constant of the stacked estimated-gradient map: the
/// supremum of `||F_est(x) - F_est(y)|| / ||x - y||` over estimate pairs
/// with every player's estimate drawn from the joint-action box.
pub fn stacked_lipschitz(
    game: &GameDefinition,
    bounds: &[(f64, f64)],
    sample_count: usize,
    rng_seed: u64,
) -> Result<f64, AnalysisError> {
    if sample_count < 100 {
        return Err(AnalysisError::SampleCountTooSmall);
    }
    if bounds.len() != game.total_dim() {
        return Err(AnalysisError::DimensionMismatch {
            expected: game.total_dim(),
            got: bounds.len(),
        });
    }
    for (index, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(AnalysisError::InvalidBox { index });
        }
    }
    let layout = Arc::new(StateLayout::new(game.action_dims()).map_err(AnalysisError::from)?);
    let n = layout.action_dim();
    let dim = layout.stacked_dim();
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let draw = |rng: &mut ChaCha20Rng| {
        DVector::from_fn(dim, |k, _| {
            let (lo, hi) = bounds[k % n];
            rng.random_range(lo..hi)
        })
    };
    let mut iota = 0.0f64;
    for _ in 0..sample_count {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let dist = (&x - &y).norm();
        if dist * dist < 1e-300 {
            continue;
        }
        let fx = estimated_pseudo_gradient(
            game,
            &StackedEstimate::new(Arc::clone(&layout), x)?,
        )?;
        let fy = estimated_pseudo_gradient(
            game,
            &StackedEstimate::new(Arc::clone(&layout), y)?,
        )?;
        iota = iota.max((fx - fy).norm() / dist);
    }
    Ok(iota)
}

/// Exponential decay rate fitted from a trace's equilibrium error series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedRate {
    /// Decay rate of the squared error, `-2 x` the log-error slope.
    pub eta_hat: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
}

/// Fits `eta_hat` by least squares on `ln ||x(t) - x_tilde||` over the last
/// half of the samples (by count), truncating first at the numerical floor
/// (error below 1e-13). Needs the trace's oracle error series and at least
/// 100 samples.
pub fn fit_rate(trace: &SimulationTrace) -> Result<FittedRate, AnalysisError> {
    let errors = trace.errors_to_ne().ok_or(AnalysisError::MissingErrorSeries)?;
    if errors.len() < 100 {
        return Err(AnalysisError::TraceTooShort {
            samples: errors.len(),
            needed: 100,
        });
    }
    fit_rate_series(trace.times(), errors)
}

/// [`fit_rate`] on raw (time, error) samples.
pub fn fit_rate_series(times: &[f64], errors: &[f64]) -> Result<FittedRate, AnalysisError> {
    debug_assert_eq!(times.len(), errors.len());
    let cut = errors
        .iter()
        .position(|&e| e < 1e-13)
        .unwrap_or(errors.len());
    let times = &times[..cut];
    let errors = &errors[..cut];
    if errors.len() < 4 {
        return Err(AnalysisError::TraceTooShort {
            samples: errors.len(),
            needed: 4,
        });
    }
    let start = errors.len() / 2;
    let t = &times[start..];
    let y: Vec<f64> = errors[start..].iter().map(|e| e.ln()).collect();
    let m = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / m;
    let y_mean = y.iter().sum::<f64>() / m;
    let mut s_tt = 0.0;
    let mut s_ty = 0.0;
    let mut s_yy = 0.0;
    for (ti, yi) in t.iter().zip(&y) {
        let dt = ti - t_mean;
        let dy = yi - y_mean;
        s_tt += dt * dt;
        s_ty += dt * dy;
        s_yy += dy * dy;
    }
    let slope = s_ty / s_tt;
    let r_squared = if s_yy < 1e-300 {
        1.0
    } else {
        (s_ty * s_ty) / (s_tt * s_yy)
    };
    Ok(FittedRate {
        eta_hat: -2.0 * slope,
        r_squared,
    })
}

/// Per-sample distance to the replicated equilibrium, normalized by its
/// norm; falls back to absolute distances (flagged) when the equilibrium is
/// the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeErrorSeries {
    pub values: Vec<f64>,
    /// True when `||1_N (x) x*|| = 0` forced absolute errors.
    pub absolute_fallback: bool,
}

/// Computes `||x(t) - 1_N (x) x*|| / ||1_N (x) x*||` for every sample.
pub fn relative_error_series(
    trace: &SimulationTrace,
    x_star: &DVector<f64>,
) -> Result<RelativeErrorSeries, AnalysisError> {
    let layout = trace.layout();
    if x_star.len() != layout.action_dim() {
        return Err(AnalysisError::DimensionMismatch {
            expected: layout.action_dim(),
            got: x_star.len(),
        });
    }
    let tilde_norm_sq = x_star.norm_squared() * layout.player_count() as f64;
    let tilde_norm = tilde_norm_sq.sqrt();
    let absolute_fallback = tilde_norm < 1e-300;
    let scale = if absolute_fallback { 1.0 } else { tilde_norm };
    let n = layout.action_dim();
    let values = trace
        .states()
        .iter()
        .map(|state| {
            let mut sum = 0.0;
            for i in 0..layout.player_count() {
                let mut block = state.vector().rows(i * n, n).clone_owned();
                block -= x_star;
                sum += block.norm_squared();
            }
            sum.sqrt() / scale
        })
        .collect();
    Ok(RelativeErrorSeries {
        values,
        absolute_fallback,
    })
}
