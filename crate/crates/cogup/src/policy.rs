//! Distributed power-control policies and a discrete exhaustive oracle.
//!
//! The production policies are pure functions of the local channel pair
//! `(h, g)` and the calibrated [`Multipliers`]: transmit only when the joint
//! state clears the threshold, then water-fill. The brute-force search
//! validates that structure independently on small discretized instances by
//! enumerating every transmit set of the right probability mass and
//! water-filling each one with its own dual solve.

use crate::error::{Error, Result};
use crate::quad::brent_root;

/// Calibrated dual multipliers plus the transmission threshold.
///
/// `lambda` prices average total transmit power, `mu` prices average
/// interference power, `threshold` is the `(1-p)`-quantile of the joint
/// channel state, and `p` is the target transmission probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu: f64,
    pub threshold: f64,
    pub p: f64,
}

impl Multipliers {
    /// Water-filling inside the transmit set is guaranteed strictly positive
    /// once the threshold reaches 1 (total-power regimes) or `mu` (pure
    /// interference regimes). Below that the policy formula still applies
    /// but the transmit probability falls short of `p`; callers surface this
    /// as a status flag.
    pub fn waterfill_premise_holds(&self) -> bool {
        if self.lambda > 0.0 {
            self.threshold >= 1.0
        } else {
            self.threshold >= self.mu
        }
    }
}

/// Threshold water-filling for the total-power-and-interference regime:
/// `(1/(lambda + mu g) - 1/h)^+` when `h/(lambda + mu g)` strictly exceeds
/// the threshold, else zero.
pub fn dtpil_power(h: f64, g: f64, m: &Multipliers) -> f64 {
    debug_assert!(m.lambda + m.mu > 0.0);
    let level = m.lambda + m.mu * g;
    if h / level > m.threshold {
        (1.0 / level - 1.0 / h).max(0.0)
    } else {
        0.0
    }
}

/// Threshold water-filling for the interference-only regime: the state is
/// the plain gain ratio `h/g` and the water level is `1/(mu g)`.
pub fn dil_power(h: f64, g: f64, m: &Multipliers) -> f64 {
    debug_assert!(m.mu > 0.0 && m.lambda == 0.0);
    if h / g > m.threshold {
        (1.0 / (m.mu * g) - 1.0 / h).max(0.0)
    } else {
        0.0
    }
}

/// Single-user water-filling without a threshold, used by the orthogonal
/// access baseline.
pub fn waterfill_power(h: f64, g: f64, lambda: f64, mu: f64) -> f64 {
    debug_assert!(lambda + mu > 0.0);
    (1.0 / (lambda + mu * g) - 1.0 / h).max(0.0)
}

/// One state of a discretized channel law.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteState {
    pub h: f64,
    pub g: f64,
    pub prob: f64,
}

/// Optimal (or fixed-point) discrete policy: per-state powers, the transmit
/// set, the achieved objective `E[log(1+hP)]`, and the duals that price it.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub powers: Vec<f64>,
    pub transmit: Vec<bool>,
    pub value: f64,
    pub lambda: f64,
    pub mu: f64,
}

const MAX_ORACLE_STATES: usize = 20;
const MASS_TOL: f64 = 1e-9;

/// Exhaustive policy search over a discrete instance: every subset whose
/// probability mass equals `p_target` is water-filled under both budgets via
/// its own dual solve, and the best subset wins. Exponential in the state
/// count; intended for oracle duty on instances of at most ~12 states.
pub fn brute_force_policy_search(
    states: &[DiscreteState],
    p_target: f64,
    p_budget: f64,
    q_budget: f64,
) -> Result<PolicyTable> {
    validate_instance(states, p_target, p_budget, q_budget)?;
    let n = states.len();
    let mut best: Option<PolicyTable> = None;
    let mut sums: Vec<f64> = Vec::new();
    for mask in 1u32..(1 << n) {
        let mass: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| states[i].prob)
            .sum();
        sums.push(mass);
        if (mass - p_target).abs() > MASS_TOL {
            continue;
        }
        let sol = waterfill_on_subset(states, mask, p_budget, q_budget)?;
        if best.as_ref().is_none_or(|b| sol.value > b.value) {
            best = Some(sol);
        }
    }
    best.ok_or_else(|| {
        sums.sort_by(f64::total_cmp);
        sums.dedup_by(|a, b| (*a - *b).abs() < MASS_TOL);
        let mut nearest: Vec<f64> = sums;
        nearest.sort_by(|a, b| (a - p_target).abs().total_cmp(&(b - p_target).abs()));
        nearest.truncate(3);
        Error::InfeasibleTarget {
            requested: p_target,
            nearest,
        }
    })
}

/// Threshold water-filling evaluated on a discrete instance: iterate
/// "take the top-`p_target` mass by `h/(lambda + mu g)`, recalibrate duals
/// on that set" to a fixed point and return the best visited policy.
/// Requires `p_target` to be realizable as a prefix mass of the induced
/// ordering (equal-probability instances always qualify).
///
/// The threshold family is parameterized by the dual ray `r = mu/lambda`:
/// the transmit set is the top-mass-`p_target` prefix of the ordering by
/// `h/(1 + r g)` for some `r >= 0` (including the `r -> inf` limit, the
/// plain `h/g` ordering). Those orderings change only at pairwise score
/// crossings, so the whole family has O(k^2) distinct sets; every one is
/// water-filled and the best kept.
pub fn threshold_policy_on_states(
    states: &[DiscreteState],
    p_target: f64,
    p_budget: f64,
    q_budget: f64,
) -> Result<PolicyTable> {
    validate_instance(states, p_target, p_budget, q_budget)?;
    let mut best: Option<PolicyTable> = None;
    let mut nearest_mass = f64::NAN;
    for mask in threshold_family_masks(states, p_target, &mut nearest_mass) {
        let sol = waterfill_on_subset(states, mask, p_budget, q_budget)?;
        if best.as_ref().is_none_or(|b| sol.value > b.value) {
            best = Some(sol);
        }
    }
    best.ok_or(Error::InfeasibleTarget {
        requested: p_target,
        nearest: vec![nearest_mass],
    })
}

/// Distinct transmit sets of the threshold family (deduplicated top-prefix
/// masks across all dual-ray orderings) whose mass matches `p_target`.
pub fn threshold_family_masks(
    states: &[DiscreteState],
    p_target: f64,
    nearest_mass: &mut f64,
) -> Vec<u32> {
    let k = states.len();
    // breakpoints of the ordering by h/(1 + r g) as r sweeps [0, inf)
    let mut rays = vec![0.0f64];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let num = states[a].h - states[b].h;
            let den = states[b].g * states[a].h - states[a].g * states[b].h;
            if den.abs() > 1e-300 {
                let r = num / den;
                if r > 0.0 && r.is_finite() {
                    rays.push(r);
                }
            }
        }
    }
    rays.sort_by(f64::total_cmp);
    rays.dedup();
    let mut probes: Vec<f64> = vec![0.0];
    probes.extend(rays.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    probes.push(rays.last().copied().unwrap_or(0.0) * 2.0 + 1.0);
    probes.push(f64::INFINITY);

    let mut masks: Vec<u32> = Vec::new();
    for &r in &probes {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = if r.is_infinite() {
                (states[a].h / states[a].g, states[b].h / states[b].g)
            } else {
                (
                    states[a].h / (1.0 + r * states[a].g),
                    states[b].h / (1.0 + r * states[b].g),
                )
            };
            sb.total_cmp(&sa)
        });
        let mut mask = 0u32;
        let mut mass = 0.0;
        for &i in &order {
            if mass + states[i].prob <= p_target + MASS_TOL {
                mask |= 1 << i;
                mass += states[i].prob;
            }
            if (mass - p_target).abs() <= MASS_TOL {
                break;
            }
        }
        if (mass - p_target).abs() <= MASS_TOL {
            if !masks.contains(&mask) {
                masks.push(mask);
            }
        } else if nearest_mass.is_nan()
            || (mass - p_target).abs() < (*nearest_mass - p_target).abs()
        {
            *nearest_mass = mass;
        }
    }
    masks
}

fn validate_instance(
    states: &[DiscreteState],
    p_target: f64,
    p_budget: f64,
    q_budget: f64,
) -> Result<()> {
    if states.is_empty() || states.len() > MAX_ORACLE_STATES {
        return Err(Error::InvalidParameter(format!(
            "oracle instance must have 1..={MAX_ORACLE_STATES} states, got {}",
            states.len()
        )));
    }
    let mass: f64 = states.iter().map(|s| s.prob).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "state probabilities sum to {mass}, expected 1"
        )));
    }
    if states
        .iter()
        .any(|s| s.h <= 0.0 || s.g <= 0.0 || s.prob <= 0.0)
    {
        return Err(Error::InvalidParameter(
            "states need h > 0, g > 0, prob > 0".into(),
        ));
    }
    if !(p_budget > 0.0) || !(q_budget > 0.0) {
        return Err(Error::Infeasible(format!(
            "budgets must be positive, got ({p_budget}, {q_budget})"
        )));
    }
    if !(p_target > 0.0 && p_target <= 1.0) {
        return Err(Error::Domain {
            what: "p_target",
            value: p_target,
            range: "(0, 1]",
        });
    }
    Ok(())
}

// Convex water-filling on a fixed transmit set under both budgets, solved by
// complementary slackness: try each single active constraint, then the 2-D
// case with an outer root in mu and an inner power-matching root in lambda.
fn waterfill_on_subset(
    states: &[DiscreteState],
    mask: u32,
    p_budget: f64,
    q_budget: f64,
) -> Result<PolicyTable> {
    let n = states.len();
    let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
    let power_of = |lambda: f64, mu: f64, i: usize| -> f64 {
        (1.0 / (lambda + mu * states[i].g) - 1.0 / states[i].h).max(0.0)
    };
    let tot_power = |lambda: f64, mu: f64| -> f64 {
        members
            .iter()
            .map(|&i| states[i].prob * power_of(lambda, mu, i))
            .sum()
    };
    let tot_interf = |lambda: f64, mu: f64| -> f64 {
        members
            .iter()
            .map(|&i| states[i].prob * states[i].g * power_of(lambda, mu, i))
            .sum()
    };

    let h_max = members.iter().map(|&i| states[i].h).fold(0.0, f64::max);
    let ratio_max = members
        .iter()
        .map(|&i| states[i].h / states[i].g)
        .fold(0.0, f64::max);

    let solve_lambda = |mu: f64| -> Result<f64> {
        // root of tot_power(lambda, mu) = p_budget; power is strictly
        // decreasing in lambda with tot_power -> inf as lambda -> 0 (mu = 0)
        let hi = h_max;
        let f_hi = tot_power(hi, mu) - p_budget;
        if mu > 0.0 {
            let f_lo_limit = tot_power(0.0, mu) - p_budget;
            if f_lo_limit <= 0.0 {
                return Ok(0.0); // power budget slack even with free water
            }
        }
        let mut lo = hi;
        let mut f_lo = f_hi;
        for _ in 0..600 {
            if f_lo >= 0.0 {
                break;
            }
            lo *= 0.5;
            f_lo = tot_power(lo, mu) - p_budget;
        }
        brent_root(
            |l| tot_power(l, mu) - p_budget,
            lo,
            hi,
            f_lo,
            f_hi,
            0.0,
            1e-13,
            0.0,
            250,
            "subset power dual",
        )
    };

    // (a) power constraint alone
    let lambda_a = solve_lambda(0.0)?;
    if lambda_a > 0.0 && tot_interf(lambda_a, 0.0) <= q_budget * (1.0 + 1e-12) {
        return Ok(assemble(states, mask, lambda_a, 0.0));
    }

    // (b) interference constraint alone
    {
        let hi = ratio_max;
        let f_hi = tot_interf(0.0, hi) - q_budget;
        let mut lo = hi;
        let mut f_lo = f_hi;
        for _ in 0..600 {
            if f_lo >= 0.0 {
                break;
            }
            lo *= 0.5;
            f_lo = tot_interf(0.0, lo) - q_budget;
        }
        let mu_b = brent_root(
            |m| tot_interf(0.0, m) - q_budget,
            lo,
            hi,
            f_lo,
            f_hi,
            0.0,
            1e-13,
            0.0,
            250,
            "subset interference dual",
        )?;
        if tot_power(0.0, mu_b) <= p_budget * (1.0 + 1e-12) {
            return Ok(assemble(states, mask, 0.0, mu_b));
        }
    }

    // (c) both active
    let psi = |mu: f64| -> Result<f64> {
        let l = solve_lambda(mu)?;
        Ok(tot_interf(l, mu) - q_budget)
    };
    let mut mu_hi = (1.0 / q_budget).max(1e-3);
    let mut f_hi = psi(mu_hi)?;
    for _ in 0..200 {
        if f_hi <= 0.0 {
            break;
        }
        mu_hi *= 2.0;
        f_hi = psi(mu_hi)?;
    }
    let mu_lo = mu_hi * 1e-12;
    let f_lo = psi(mu_lo)?;
    let mu = brent_root(
        |m| psi(m).unwrap_or(f64::NAN),
        mu_lo,
        mu_hi,
        f_lo,
        f_hi,
        0.0,
        1e-12,
        0.0,
        250,
        "subset joint dual",
    )?;
    let lambda = solve_lambda(mu)?;
    Ok(assemble(states, mask, lambda, mu))
}

/// Test support: optimal value of the budgeted water-filling problem on a
/// fixed transmit set.
#[doc(hidden)]
pub fn subset_value_for_tests(
    states: &[DiscreteState],
    mask: u32,
    p_budget: f64,
    q_budget: f64,
) -> crate::error::Result<f64> {
    waterfill_on_subset(states, mask, p_budget, q_budget).map(|t| t.value)
}

fn assemble(states: &[DiscreteState], mask: u32, lambda: f64, mu: f64) -> PolicyTable {
    let n = states.len();
    let mut powers = vec![0.0; n];
    let mut transmit = vec![false; n];
    let mut value = 0.0;
    for i in 0..n {
        if mask & (1 << i) != 0 {
            transmit[i] = true;
            let p = (1.0 / (lambda + mu * states[i].g) - 1.0 / states[i].h).max(0.0);
            powers[i] = p;
            value += states[i].prob * (1.0 + states[i].h * p).ln();
        }
    }
    PolicyTable {
        powers,
        transmit,
        value,
        lambda,
        mu,
    }
}
