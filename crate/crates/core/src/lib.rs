//! Simulation and certification toolkit for distributed Nash equilibrium
//! seeking over directed communication networks under denial-of-service
//! attacks.
//!
//! Players only observe their own cost and what neighbors send them, so each
//! one maintains an estimate of the full action profile and descends its own
//! cost along its own coordinates while a consensus term aligns the
//! estimates. When an attacker jams channels, the algorithm switches to a
//! defensive mode driven by a one-bit flag protocol and keeps converging as
//! long as the attacks respect frequency and duration budgets.
//!
//! The crate is organized around that pipeline:
//!
//! - [`graph`]: directed communication graphs, balanced Laplacians, and the
//!   connectivity measure that sets the tolerable attack budgets.
//! - [`game`]: cost functions, pseudo-gradients, a Nash equilibrium solver,
//!   and regularity constants (strong monotonicity and Lipschitz bounds).
//! - [`attack`]: per-channel attack schedules, frequency/duration
//!   accounting, budget verification, and the channel flag protocol.
//! - [`dynamics`]: the switched continuous-time algorithm and its
//!   fixed-step integrator, plus an attack-unaware baseline.
//! - [`analysis`]: gain bounds, certified rates, attack-budget thresholds,
//!   and empirical rate fitting from traces.
//! - [`scenario`]: declarative TOML scenario files tying all of the above
//!   together, with includes and command-line overrides.
//! - [`report`]: trace CSV export and the JSON run summary.

pub mod analysis;
pub mod attack;
pub mod dynamics;
pub mod game;
pub mod graph;
pub mod report;
pub mod scenario;
