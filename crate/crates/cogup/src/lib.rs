//! Distributed power control for the cognitive uplink, and the experiment
//! machinery to verify its sum-rate scaling behavior at desk scale.
//!
//! N secondary users share an uplink with a collision rule (a block delivers
//! rate only when exactly one user transmits) while their aggregate average
//! interference at the primary receiver - and optionally their average total
//! transmit power - stays within budget. Each user acts on purely local
//! channel knowledge: it transmits iff its joint channel state
//! `h / (lambda + mu g)` exceeds the `(1 - p)`-quantile threshold, then
//! water-fills, with the duals `(lambda, mu)` calibrated offline against the
//! budgets.
//!
//! Modules:
//! - [`fading`]: unit-mean power-gain laws (Rayleigh, Rician, Nakagami,
//!   Weibull) with exact tail/origin constants.
//! - [`joint`]: the joint-state distribution, its quantiles, and the
//!   tail-law inverse approximation.
//! - [`policy`]: the threshold water-filling policies plus a brute-force
//!   discrete oracle that revalidates their structure.
//! - [`mod@calibrate`]: constraint functionals by nested quadrature and the
//!   dual solves.
//! - [`simulate`]: reproducible parallel Monte Carlo of the collision
//!   uplink and the orthogonal-access baseline.
//! - [`scaling`]: N-sweeps, scaling-law fits (`ln ln N` and `ln N`), and
//!   transmission-probability optimization.
//! - [`cli`]: spec-file driven experiment runner emitting CSV artifacts.
//!
//! Rates are natural-log based (nats) with unit noise power; budgets are
//! linear in-process and entered in dB at the CLI.

// Frozen high-precision oracle constants keep their full digits, and
// `!(v > 0.0)`-style guards intentionally reject NaN.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cli;
pub mod error;
pub mod fading;
pub mod joint;
pub mod policy;
pub mod quad;
pub mod scaling;
pub mod simulate;
mod special;

pub use calibrate::{
    calibrate, calibrate_baseline, calibrate_dil, calibrate_dtpil, constraint_functionals,
    effective_transmit_prob, ConstraintFunctionals, NetworkConfig, PRule, Regime,
};
pub use error::{Error, Result};
pub use fading::{ClassCParams, FadingKind, FadingModel, TailShift};
pub use joint::{asymptotic_quantile, AsymptoticQuantile, JointStateDistribution};
pub use policy::{
    brute_force_policy_search, dil_power, dtpil_power, waterfill_power, DiscreteState, Multipliers,
    PolicyTable,
};
pub use scaling::{
    fit_scaling, optimize_pn, pn_comparison, scaling_experiment, FitResult, PnOptimum, RowStatus,
    ScalingLaw, ScalingRow, ScalingTable,
};
pub use simulate::{
    orthogonal_baseline, run_monte_carlo, semi_analytic_rate, simulate_block, BlockOutcome,
    SimEstimate,
};
