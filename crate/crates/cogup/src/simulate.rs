//! Monte Carlo simulation of the N-user collision uplink.
//!
//! Per fading block every user draws its `(h, g)` pair, applies the
//! calibrated policy locally, and the block delivers rate
//! `ln(1 + h P(h,g))` only when exactly one user radiates; concurrent
//! transmissions collide and deliver nothing. Rates are in nats with noise
//! power normalized to 1.
//!
//! Reproducibility: block `b` of a run seeded with `s` always draws from
//! `ChaCha8` stream `b` under a key derived from `s`, so estimates are
//! bit-identical for any thread count or execution order. Blocks are
//! aggregated in fixed-size chunks that are reduced in chunk order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::calibrate::{
    calibrate_baseline, constraint_functionals, effective_transmit_prob, NetworkConfig, Regime,
};
use crate::error::{Error, Result};
use crate::policy::{dil_power, dtpil_power, waterfill_power, Multipliers};

/// One fading block of the collision channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOutcome {
    pub transmitter_count: u32,
    /// `ln(1 + h P)` of the unique transmitter, zero on idle or collision.
    pub delivered_rate: f64,
    pub total_power: f64,
    pub total_interference: f64,
    /// Largest joint channel state among the N users.
    pub max_state: f64,
    /// Second largest joint channel state.
    pub second_state: f64,
}

/// Monte Carlo aggregate with 95% confidence half-widths
/// (`1.96 * stderr`; NaN when a single block makes the spread undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub sum_rate: f64,
    pub sum_rate_ci: f64,
    pub success_prob: f64,
    pub success_ci: f64,
    pub avg_power: f64,
    pub avg_power_ci: f64,
    pub avg_interference: f64,
    pub avg_interference_ci: f64,
    pub blocks: u64,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-block substream: key expanded from `seed`, ChaCha
/// stream index set to the block number.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(block);
    rng
}

/// Deterministic per-row seed for N-sweeps: depends on the base seed and on
/// `N` only, so different p-rules at the same `N` see identical channel
/// draws (paired comparisons).
pub fn row_seed(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n))
}

/// Simulate one block: draw all `(h_i, g_i)` in user order (policy cannot
/// influence the draws), apply the regime's policy locally, resolve the
/// collision rule exactly.
///
/// The multipliers must come from calibrating `config`; orthogonal access
/// does not run the collision channel and goes through
/// [`orthogonal_baseline`].
pub fn simulate_block<R: Rng + ?Sized>(
    config: &NetworkConfig,
    m: &Multipliers,
    rng: &mut R,
) -> BlockOutcome {
    assert!(
        config.regime != Regime::Orthogonal,
        "orthogonal access is simulated by orthogonal_baseline"
    );
    let dil = config.regime == Regime::Dil;
    let mut count = 0u32;
    let mut delivered = 0.0;
    let mut total_power = 0.0;
    let mut total_interference = 0.0;
    let mut max_state = f64::NEG_INFINITY;
    let mut second_state = f64::NEG_INFINITY;
    for _ in 0..config.n {
        let h = config.direct.sample_one(rng);
        let g = config.interference.sample_one(rng);
        let state = if dil {
            h / g
        } else {
            h / (m.lambda + m.mu * g)
        };
        if state > max_state {
            second_state = max_state;
            max_state = state;
        } else if state > second_state {
            second_state = state;
        }
        let p = if dil {
            dil_power(h, g, m)
        } else {
            dtpil_power(h, g, m)
        };
        if p > 0.0 {
            count += 1;
            total_power += p;
            total_interference += g * p;
            delivered = if count == 1 { (1.0 + h * p).ln() } else { 0.0 };
        }
    }
    BlockOutcome {
        transmitter_count: count,
        delivered_rate: if count == 1 { delivered } else { 0.0 },
        total_power,
        total_interference,
        max_state,
        second_state,
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    blocks: u64,
    rate: f64,
    rate_sq: f64,
    successes: u64,
    power: f64,
    power_sq: f64,
    interf: f64,
    interf_sq: f64,
}

impl Acc {
    fn push(&mut self, rate: f64, success: bool, power: f64, interf: f64) {
        self.blocks += 1;
        self.rate += rate;
        self.rate_sq += rate * rate;
        self.successes += u64::from(success);
        self.power += power;
        self.power_sq += power * power;
        self.interf += interf;
        self.interf_sq += interf * interf;
    }

    fn merge(mut self, o: Acc) -> Acc {
        self.blocks += o.blocks;
        self.rate += o.rate;
        self.rate_sq += o.rate_sq;
        self.successes += o.successes;
        self.power += o.power;
        self.power_sq += o.power_sq;
        self.interf += o.interf;
        self.interf_sq += o.interf_sq;
        self
    }
}

const CHUNK: u64 = 4096;

fn run_chunked(
    blocks: u64,
    seed: u64,
    per_block: impl Fn(&mut ChaCha8Rng) -> (f64, bool, f64, f64) + Sync,
) -> SimEstimate {
    let chunks = blocks.div_ceil(CHUNK);
    // per-chunk accumulators are computed in parallel but merged in chunk
    // order, so the result is independent of the thread schedule
    let accs: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(blocks);
            let mut acc = Acc::default();
            for b in lo..hi {
                let mut rng = block_rng(seed, b);
                let (rate, success, power, interf) = per_block(&mut rng);
                acc.push(rate, success, power, interf);
            }
            acc
        })
        .collect();
    let acc = accs.into_iter().fold(Acc::default(), Acc::merge);

    let nb = acc.blocks as f64;
    let mean_ci = |sum: f64, sum_sq: f64| -> (f64, f64) {
        let mean = sum / nb;
        if acc.blocks < 2 {
            return (mean, f64::NAN);
        }
        let var = ((sum_sq - sum * sum / nb) / (nb - 1.0)).max(0.0);
        (mean, 1.96 * (var / nb).sqrt())
    };
    let (sum_rate, sum_rate_ci) = mean_ci(acc.rate, acc.rate_sq);
    let (avg_power, avg_power_ci) = mean_ci(acc.power, acc.power_sq);
    let (avg_interference, avg_interference_ci) = mean_ci(acc.interf, acc.interf_sq);
    let success_prob = acc.successes as f64 / nb;
    let success_ci = if acc.blocks < 2 {
        f64::NAN
    } else {
        1.96 * (success_prob * (1.0 - success_prob) / nb).sqrt()
    };
    SimEstimate {
        sum_rate,
        sum_rate_ci,
        success_prob,
        success_ci,
        avg_power,
        avg_power_ci,
        avg_interference,
        avg_interference_ci,
        blocks: acc.blocks,
        seed,
    }
}

/// Aggregate `blocks` simulated blocks into a [`SimEstimate`]. Identical
/// `(config, m, blocks, seed)` give bit-identical results.
pub fn run_monte_carlo(
    config: &NetworkConfig,
    m: &Multipliers,
    blocks: u64,
    seed: u64,
) -> Result<SimEstimate> {
    if blocks < 1 {
        return Err(Error::InvalidParameter("blocks must be >= 1".into()));
    }
    if config.regime == Regime::Orthogonal {
        return Err(Error::InvalidParameter(
            "orthogonal access is simulated by orthogonal_baseline".into(),
        ));
    }
    config.validate()?;
    Ok(run_chunked(blocks, seed, |rng| {
        let out = simulate_block(config, m, rng);
        (
            out.delivered_rate,
            out.transmitter_count == 1,
            out.total_power,
            out.total_interference,
        )
    }))
}

/// Semi-analytic sum-rate `N (1-p)^(N-1) E[ln(1 + h P)]`, with `p` the
/// effective transmit probability (equal to the target except below the
/// threshold premise).
pub fn semi_analytic_rate(config: &NetworkConfig, m: &Multipliers) -> Result<f64> {
    let f = constraint_functionals(&config.with_p(m.p), m.lambda, m.mu)?;
    let p_eff = effective_transmit_prob(config, m)?;
    let n = config.n as f64;
    Ok(n * (1.0 - p_eff).powi(config.n as i32 - 1) * f.avg_log_term)
}

/// Orthogonal channel access baseline: one scheduled user per block (users
/// are i.i.d., so round-robin scheduling is one fresh draw per block)
/// applying single-user water-filling with duals calibrated to the same
/// long-run budgets. No collisions; every block counts as a success.
pub fn orthogonal_baseline(config: &NetworkConfig, blocks: u64, seed: u64) -> Result<SimEstimate> {
    if blocks < 1 {
        return Err(Error::InvalidParameter("blocks must be >= 1".into()));
    }
    let m = calibrate_baseline(config)?;
    let direct = config.direct.clone();
    let interference = config.interference.clone();
    Ok(run_chunked(blocks, seed, move |rng| {
        let h = direct.sample_one(rng);
        let g = interference.sample_one(rng);
        let p = waterfill_power(h, g, m.lambda, m.mu);
        ((1.0 + h * p).ln(), true, p, g * p)
    }))
}

/// Semi-analytic baseline rate: `E[ln(1 + h P)]` of the calibrated
/// single-user water-filler. Independent of `N`.
pub fn baseline_semi_rate(config: &NetworkConfig) -> Result<f64> {
    let m = calibrate_baseline(config)?;
    let mut single = config.clone();
    single.n = 1;
    single.p_rule = crate::calibrate::PRule::Fixed(1.0);
    single.regime = match config.regime {
        Regime::Dil => Regime::Dil,
        _ => Regime::Dtpil,
    };
    let f = constraint_functionals(&single, m.lambda, m.mu)?;
    Ok(f.avg_log_term)
}
