//! N-player games: costs, gradients, regularity constants, and an
//! equilibrium oracle.
//!
//! A game assigns each player `i` a cost `J_i(x)` over the joint action
//! `x = col(x_1, ..., x_N)`. The pseudo-gradient stacks each player's
//! gradient with respect to its own action block,
//! `F(x) = col(grad_1 J_1(x), ..., grad_N J_N(x))`; a Nash equilibrium is a
//! zero of `F`. The oracle here solves `F(x) = 0` by damped Newton iteration
//! with a finite-difference Jacobian, deliberately sharing no machinery with
//! the continuous-time seeking dynamics in [`crate::dynamics`] so simulation
//! results can be checked against an independent solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Errors raised by game construction, evaluation, or the equilibrium oracle.
#[derive(Debug, Error)]
pub enum GameError {
    /// A joint-action vector had the wrong total dimension.
    #[error("joint action has dimension {got}, game expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Parameter vectors for a builtin game disagreed in length.
    #[error("parameter `{name}` has length {got}, expected {expected}")]
    ParamArity {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    /// A game must have at least one player.
    #[error("game has no players")]
    NoPlayers,
    /// Newton's method stalled or ran out of iterations.
    #[error("equilibrium solver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: DVector<f64>,
    },
    /// The finite-difference Jacobian was singular at some iterate.
    #[error("singular Jacobian at solver iteration {iteration}")]
    SingularJacobian { iteration: usize },
    /// Regularity sampling needs enough pairs to be meaningful.
    #[error("sample_count {0} is below the minimum of 100")]
    SampleCountTooSmall(usize),
    /// The sampling box must be bounded with strictly ordered endpoints.
    #[error("sampling box coordinate {index} has invalid interval [{lo}, {hi}]")]
    InvalidBox { index: usize, lo: f64, hi: f64 },
    /// The sampling box must have one interval per joint-action coordinate.
    #[error("sampling box has {got} intervals, game expects {expected}")]
    BoxArity { expected: usize, got: usize },
    /// Sampled monotonicity modulus was non-positive on the box.
    #[error("pseudo-gradient is not strongly monotone on the box: sampled modulus {epsilon_hat:.3e}")]
    MonotonicityViolated { epsilon_hat: f64 },
}

type CostFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// How regularity constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Exact constants from a closed-form (constant) Jacobian.
    Analytic,
    /// Constants bracketed by random pair sampling on a box.
    Sampled,
}

/// Strong-monotonicity modulus and Lipschitz constant of the pseudo-gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameRegularity {
    pub epsilon: f64,
    pub iota: f64,
    pub provenance: Provenance,
}

/// Result of the Newton equilibrium oracle.
#[derive(Debug, Clone)]
pub struct NESolution {
    pub x_star: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// An N-player game with per-player costs and analytic own-block gradients.
pub struct GameDefinition {
    label: &'static str,
    action_dims: Vec<usize>,
    offsets: Vec<usize>,
    costs: Vec<CostFn>,
    gradients: Vec<GradientFn>,
    analytic_regularity: Option<(f64, f64)>,
    reference_equilibrium: Option<DVector<f64>>,
}

impl std::fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameDefinition")
            .field("label", &self.label)
            .field("action_dims", &self.action_dims)
            .field("analytic_regularity", &self.analytic_regularity)
            .field("reference_equilibrium", &self.reference_equilibrium)
            .finish_non_exhaustive()
    }
}

impl GameDefinition {
    /// Builds a game from per-player cost and gradient closures.
    ///
    /// `action_dims[i]` is the dimension of player i's action block; each
    /// gradient closure must return a vector of that length.
    pub fn new(
        label: &'static str,
        action_dims: Vec<usize>,
        costs: Vec<CostFn>,
        gradients: Vec<GradientFn>,
    ) -> Result<Self, GameError> {
        if action_dims.is_empty() {
            return Err(GameError::NoPlayers);
        }
        if costs.len() != action_dims.len() {
            return Err(GameError::ParamArity {
                name: "costs",
                expected: action_dims.len(),
                got: costs.len(),
            });
        }
        if gradients.len() != action_dims.len() {
            return Err(GameError::ParamArity {
                name: "gradients",
                expected: action_dims.len(),
                got: gradients.len(),
            });
        }
        let mut offsets = Vec::with_capacity(action_dims.len());
        let mut acc = 0;
        for &d in &action_dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self {
            label,
            action_dims,
            offsets,
            costs,
            gradients,
            analytic_regularity: None,
            reference_equilibrium: None,
        })
    }

    /// Attaches exact regularity constants (for games whose pseudo-gradient
    /// Jacobian is constant).
    pub fn with_analytic_regularity(mut self, epsilon: f64, iota: f64) -> Self {
        self.analytic_regularity = Some((epsilon, iota));
        self
    }

    /// Attaches an externally published equilibrium for cross-checking the
    /// solver. The two may legitimately disagree; reports surface the gap.
    pub fn with_reference_equilibrium(mut self, x: DVector<f64>) -> Self {
        self.reference_equilibrium = Some(x);
        self
    }

    /// Short name for reports ("cournot", "hvac", ...).
    pub fn label(&self) -> &'static str {
        self.label
    }

    /// Number of players N.
    pub fn player_count(&self) -> usize {
        self.action_dims.len()
    }

    /// Per-player action dimensions `n_i`.
    pub fn action_dims(&self) -> &[usize] {
        &self.action_dims
    }

    /// Total action dimension `n = sum n_i`.
    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap() + self.action_dims.last().unwrap()
    }

    /// Start index of player `i`'s block within the joint action.
    pub fn offset(&self, player: usize) -> usize {
        self.offsets[player]
    }

    /// Cost `J_i(x)` of one player at a joint action.
    pub fn cost(&self, player: usize, x: &DVector<f64>) -> Result<f64, GameError> {
        self.check_dim(x)?;
        Ok((self.costs[player])(x))
    }

    /// Gradient of `J_i` with respect to player `i`'s own action block.
    pub fn partial_gradient(&self, player: usize, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_dim(x)?;
        let g = (self.gradients[player])(x);
        assert_eq!(
            g.len(),
            self.action_dims[player],
            "gradient closure for player {player} returned wrong dimension"
        );
        Ok(g)
    }

    /// Externally published equilibrium, if the game carries one.
    pub fn reference_equilibrium(&self) -> Option<&DVector<f64>> {
        self.reference_equilibrium.as_ref()
    }

    /// Exact regularity constants if the game declares them.
    pub fn analytic_regularity(&self) -> Option<GameRegularity> {
        self.analytic_regularity.map(|(epsilon, iota)| GameRegularity {
            epsilon,
            iota,
            provenance: Provenance::Analytic,
        })
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), GameError> {
        if x.len() != self.total_dim() {
            return Err(GameError::DimensionMismatch {
                expected: self.total_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Stacked pseudo-gradient `F(x) = col(grad_1 J_1(x), ..., grad_N J_N(x))`.
pub fn pseudo_gradient(game: &GameDefinition, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
    let mut out = DVector::zeros(game.total_dim());
    for i in 0..game.player_count() {
        let g = game.partial_gradient(i, x)?;
        out.rows_mut(game.offset(i), g.len()).copy_from(&g);
    }
    Ok(out)
}

/// Solves `F(x) = 0` by damped Newton iteration from `x0`.
///
/// The Jacobian is approximated by central finite differences with step
/// `max(1e-6, 1e-8 |x_k|)` per coordinate; each Newton step is halved until
/// the residual norm strictly decreases. Convergence is declared when
/// `||F(x)|| < 1e-12 (1 + ||x||)`.
pub fn solve_ne(game: &GameDefinition, x0: &DVector<f64>) -> Result<NESolution, GameError> {
    const MAX_ITERS: usize = 100;
    let mut x = x0.clone();
    let mut f = pseudo_gradient(game, &x)?;
    let mut residual = f.norm();
    for iteration in 0..MAX_ITERS {
        if !residual.is_finite() {
            return Err(GameError::NonConvergence {
                iterations: iteration,
                residual,
                last_iterate: x,
            });
        }
        if residual < 1e-12 * (1.0 + x.norm()) {
            return Ok(NESolution {
                x_star: x,
                residual,
                iterations: iteration,
            });
        }
        let jac = fd_jacobian(game, &x)?;
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or(GameError::SingularJacobian { iteration })?;
        let mut t = 1.0;
        let mut advanced = false;
        while t >= 1e-10 {
            let candidate = &x + &step * t;
            let f_new = pseudo_gradient(game, &candidate)?;
            let r_new = f_new.norm();
            if r_new < residual {
                x = candidate;
                f = f_new;
                residual = r_new;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if !advanced {
            return Err(GameError::NonConvergence {
                iterations: iteration,
                residual,
                last_iterate: x,
            });
        }
    }
    Err(GameError::NonConvergence {
        iterations: MAX_ITERS,
        residual,
        last_iterate: x,
    })
}

fn fd_jacobian(game: &GameDefinition, x: &DVector<f64>) -> Result<DMatrix<f64>, GameError> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for k in 0..n {
        let h = (1e-8 * x[k].abs()).max(1e-6);
        probe[k] = x[k] + h;
        let plus = pseudo_gradient(game, &probe)?;
        probe[k] = x[k] - h;
        let minus = pseudo_gradient(game, &probe)?;
        probe[k] = x[k];
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Regularity constants of a game.
///
/// Games with a constant pseudo-gradient Jacobian return their exact
/// constants; all others are sampled on `bounds` (one interval per
/// joint-action coordinate) with `sample_count` random pairs. Fails if the
/// sampled monotonicity modulus is non-positive.
pub fn estimate_regularity(
    game: &GameDefinition,
    bounds: &[(f64, f64)],
    sample_count: usize,
    rng_seed: u64,
) -> Result<GameRegularity, GameError> {
    validate_box(game, bounds, sample_count)?;
    if let Some(analytic) = game.analytic_regularity() {
        return Ok(analytic);
    }
    sample_regularity(game, bounds, sample_count, rng_seed)
}

/// Pair-sampled regularity constants, ignoring any declared analytic values.
///
/// Over `sample_count` random pairs (x, y) in the box:
/// `epsilon_hat = min (x-y)^T (F(x)-F(y)) / ||x-y||^2` and
/// `iota_hat = max ||F(x)-F(y)|| / ||x-y||`.
pub fn sample_regularity(
    game: &GameDefinition,
    bounds: &[(f64, f64)],
    sample_count: usize,
    rng_seed: u64,
) -> Result<GameRegularity, GameError> {
    validate_box(game, bounds, sample_count)?;
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut epsilon_hat = f64::INFINITY;
    let mut iota_hat: f64 = 0.0;
    let mut done = 0;
    while done < sample_count {
        let x = sample_point(bounds, &mut rng);
        let y = sample_point(bounds, &mut rng);
        let diff = &x - &y;
        let dist2 = diff.norm_squared();
        if dist2 < 1e-300 {
            continue;
        }
        let df = pseudo_gradient(game, &x)? - pseudo_gradient(game, &y)?;
        epsilon_hat = epsilon_hat.min(diff.dot(&df) / dist2);
        iota_hat = iota_hat.max(df.norm() / dist2.sqrt());
        done += 1;
    }
    if epsilon_hat <= 0.0 {
        return Err(GameError::MonotonicityViolated { epsilon_hat });
    }
    Ok(GameRegularity {
        epsilon: epsilon_hat,
        iota: iota_hat,
        provenance: Provenance::Sampled,
    })
}

fn validate_box(
    game: &GameDefinition,
    bounds: &[(f64, f64)],
    sample_count: usize,
) -> Result<(), GameError> {
    if sample_count < 100 {
        return Err(GameError::SampleCountTooSmall(sample_count));
    }
    if bounds.len() != game.total_dim() {
        return Err(GameError::BoxArity {
            expected: game.total_dim(),
            got: bounds.len(),
        });
    }
    for (index, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(GameError::InvalidBox { index, lo, hi });
        }
    }
    Ok(())
}

fn sample_point(bounds: &[(f64, f64)], rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_iterator(
        bounds.len(),
        bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)),
    )
}

/// Parameters for [`builtin_game`].
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinParams {
    /// Production game with linearly price-elastic demand:
    /// `J_i = a_i + b_i (x_i - c_i) + d_i x_i^2 - x_i (f0 - f1 * sum_j x_j)`.
    Cournot {
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        d: Vec<f64>,
        f0: f64,
        f1: f64,
    },
    /// Energy consumption game, comfort deviation plus a load-dependent
    /// electricity price:
    /// `J_i = a_i (x_i - b_i)^2 + (c * sum_j x_j + d) x_i`.
    Hvac {
        a: Vec<f64>,
        b: Vec<f64>,
        c: f64,
        d: f64,
    },
    /// Fixed five-player benchmark with exponential and cubic couplings;
    /// only locally regular, so its constants must be sampled.
    Nonquadratic,
}

/// Constructs one of the builtin games with analytic gradients.
///
/// Cournot and HVAC have constant symmetric pseudo-gradient Jacobians
/// (`f1*(1 1^T) + diag(f1 + 2 d_i)` and `c*(1 1^T) + diag(2 a_i + c)`
/// respectively), so their exact regularity constants are attached as the
/// extreme eigenvalues of that matrix.
pub fn builtin_game(params: &BuiltinParams) -> Result<GameDefinition, GameError> {
    match params {
        BuiltinParams::Cournot { a, b, c, d, f0, f1 } => cournot(a, b, c, d, *f0, *f1),
        BuiltinParams::Hvac { a, b, c, d } => hvac(a, b, *c, *d),
        BuiltinParams::Nonquadratic => Ok(nonquadratic()),
    }
}

fn cournot(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
    f0: f64,
    f1: f64,
) -> Result<GameDefinition, GameError> {
    let n = a.len();
    if n == 0 {
        return Err(GameError::NoPlayers);
    }
    check_len("b", b, n)?;
    check_len("c", c, n)?;
    check_len("d", d, n)?;
    let mut costs: Vec<CostFn> = Vec::with_capacity(n);
    let mut gradients: Vec<GradientFn> = Vec::with_capacity(n);
    for i in 0..n {
        let (ai, bi, ci, di) = (a[i], b[i], c[i], d[i]);
        costs.push(Box::new(move |x: &DVector<f64>| {
            let xi = x[i];
            ai + bi * (xi - ci) + di * xi * xi - xi * (f0 - f1 * x.sum())
        }));
        gradients.push(Box::new(move |x: &DVector<f64>| {
            let xi = x[i];
            DVector::from_element(1, bi + 2.0 * di * xi - f0 + f1 * x.sum() + f1 * xi)
        }));
    }
    let jac = DMatrix::from_fn(n, n, |i, j| {
        f1 + if i == j { f1 + 2.0 * d[i] } else { 0.0 }
    });
    let (eps, iota) = extreme_eigenvalues(&jac);
    Ok(
        GameDefinition::new("cournot", vec![1; n], costs, gradients)?
            .with_analytic_regularity(eps, iota),
    )
}

fn hvac(a: &[f64], b: &[f64], c: f64, d: f64) -> Result<GameDefinition, GameError> {
    let n = a.len();
    if n == 0 {
        return Err(GameError::NoPlayers);
    }
    check_len("b", b, n)?;
    let mut costs: Vec<CostFn> = Vec::with_capacity(n);
    let mut gradients: Vec<GradientFn> = Vec::with_capacity(n);
    for i in 0..n {
        let (ai, bi) = (a[i], b[i]);
        costs.push(Box::new(move |x: &DVector<f64>| {
            let xi = x[i];
            ai * (xi - bi) * (xi - bi) + (c * x.sum() + d) * xi
        }));
        gradients.push(Box::new(move |x: &DVector<f64>| {
            let xi = x[i];
            DVector::from_element(1, 2.0 * ai * (xi - bi) + c * x.sum() + c * xi + d)
        }));
    }
    let jac = DMatrix::from_fn(n, n, |i, j| c + if i == j { c + 2.0 * a[i] } else { 0.0 });
    let (eps, iota) = extreme_eigenvalues(&jac);
    Ok(
        GameDefinition::new("hvac", vec![1; n], costs, gradients)?
            .with_analytic_regularity(eps, iota),
    )
}

fn nonquadratic() -> GameDefinition {
    let costs: Vec<CostFn> = vec![
        Box::new(|x| 0.5 * x[0] * x[0] + x[0] * (x[1] + x[2] + x[3] + x[4])),
        Box::new(|x| 0.5 * (0.5 * x[1]).exp() + x[1] * x[3]),
        Box::new(|x| 0.5 * x[2] * x[2] + x[0].powi(3)),
        // ln(e^{x_4}) collapses exactly to x_4.
        Box::new(|x| x[3] + x[3] * x[3] + x[2].powi(3)),
        Box::new(|x| x[4] * x[4] - 5.0 * x[4] + x[0].powi(3) * x[1] + x[2] * x[3].powi(4)),
    ];
    let gradients: Vec<GradientFn> = vec![
        Box::new(|x| DVector::from_element(1, x[0] + x[1] + x[2] + x[3] + x[4])),
        Box::new(|x| DVector::from_element(1, 0.25 * (0.5 * x[1]).exp() + x[3])),
        Box::new(|x| DVector::from_element(1, x[2])),
        Box::new(|x| DVector::from_element(1, 1.0 + 2.0 * x[3])),
        Box::new(|x| DVector::from_element(1, 2.0 * x[4] - 5.0)),
    ];
    // The source this game was transcribed from prints an equilibrium whose
    // fourth component (-2) is not a zero of the printed costs; the actual
    // zero of the fourth gradient 1 + 2 x_4 is -1/2. The vector is kept so
    // reports can surface the disagreement.
    let reference = DVector::from_row_slice(&[-4.6589, 4.1589, 0.0, -2.0, 2.5]);
    GameDefinition::new("nonquadratic", vec![1; 5], costs, gradients)
        .expect("fixed five-player construction")
        .with_reference_equilibrium(reference)
}

fn check_len(name: &'static str, v: &[f64], expected: usize) -> Result<(), GameError> {
    if v.len() != expected {
        return Err(GameError::ParamArity {
            name,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// (min, max) eigenvalues of a symmetric matrix.
fn extreme_eigenvalues(sym: &DMatrix<f64>) -> (f64, f64) {
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
