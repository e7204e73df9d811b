//! Constraint functionals and multiplier calibration.
//!
//! For a generic user with independent gains `h ~ F_h`, `g ~ F_g`, the
//! policy consumes
//!
//! ```text
//! avg_power        = N E[P(h,g)]
//! avg_interference = N E[g P(h,g)]
//! avg_log_term     =   E[ln(1 + h P(h,g))]
//! ```
//!
//! with `P` the threshold water-filling policy of the configured regime.
//! Expectations are nested quadratures: the outer integral runs over the
//! interference gain in survival coordinates (quantile transform, so
//! unbounded supports need no truncation); the inner integral over the
//! direct gain is reduced by parts so only the closed survival function
//! appears,
//!
//! ```text
//! E[(w - 1/h)^+ ; h > a] = S_h(a) (w - 1/a) + int_a^inf S_h(u)/u^2 du
//! E[ln(w h)     ; h > a] = S_h(a) ln(w a)   + int_a^inf S_h(u)/u   du
//! ```
//!
//! where `a = max(t_scale, 1/w)` is the transmit/positivity boundary for the
//! node's water level `w`. The lower limit uses the closed tail exactly;
//! both integrands are positive and decay double-exponentially.
//!
//! Calibration solves the dual multipliers by the active-set order:
//! single-constraint solutions first, then a nested root search (outer in
//! `mu`, inner power-matching in `lambda`), with brackets
//! `lambda in (0, Np/P_ave]`, `mu in (0, Np/Q_ave]` and the threshold
//! `t = F^{-1}_{lambda,mu}(1-p)` recomputed inside every residual.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fading::FadingModel;
use crate::joint::{joint_quantile_sf_with_cache, joint_sf_with_cache, QuantileSfCache};
use crate::policy::Multipliers;
use crate::quad::{brent_root, integrate_vec, unit_interval_edges};

/// Which constraint set governs the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Average total power and average interference limits (plus the
    /// transmission-probability constraint).
    Dtpil,
    /// Average interference limit only.
    Dil,
    /// Round-robin scheduled single user, no threshold.
    Orthogonal,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Dtpil => write!(f, "dtpil"),
            Regime::Dil => write!(f, "dil"),
            Regime::Orthogonal => write!(f, "orthogonal"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dtpil" => Ok(Regime::Dtpil),
            "dil" => Ok(Regime::Dil),
            "orthogonal" => Ok(Regime::Orthogonal),
            other => Err(Error::InvalidParameter(format!("unknown regime '{other}'"))),
        }
    }
}

/// Transmission-probability rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PRule {
    /// `p = 1/N`.
    OneOverN,
    /// `p = c/N`.
    Scaled(f64),
    /// Fixed probability, independent of `N`.
    Fixed(f64),
    /// Resolved per `N` by the rate maximizer.
    Optimized,
}

impl PRule {
    pub fn probability(&self, n: u64) -> Result<f64> {
        let p = match self {
            PRule::OneOverN => 1.0 / n as f64,
            PRule::Scaled(c) => {
                if !(*c > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "scaled rule needs c > 0, got {c}"
                    )));
                }
                c / n as f64
            }
            PRule::Fixed(p) => *p,
            PRule::Optimized => {
                return Err(Error::InvalidParameter(
                    "optimized p-rule must be resolved by the rate maximizer first".into(),
                ))
            }
        };
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain {
                what: "p",
                value: p,
                range: "(0, 1]",
            });
        }
        Ok(p)
    }
}

impl fmt::Display for PRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PRule::OneOverN => write!(f, "1/N"),
            PRule::Scaled(c) => write!(f, "{c}/N"),
            PRule::Fixed(p) => write!(f, "p={p}"),
            PRule::Optimized => write!(f, "optimized"),
        }
    }
}

impl FromStr for PRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("1/N") || t.eq_ignore_ascii_case("one_over_n") {
            return Ok(PRule::OneOverN);
        }
        if t.eq_ignore_ascii_case("optimized") {
            return Ok(PRule::Optimized);
        }
        if let Some(v) = t.strip_prefix("p=") {
            let p: f64 = v
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad fixed probability '{t}'")))?;
            return Ok(PRule::Fixed(p));
        }
        if let Some(c) = t.strip_suffix("/N").or_else(|| t.strip_suffix("/n")) {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad scaled rule '{t}'")))?;
            return Ok(PRule::Scaled(c));
        }
        Err(Error::InvalidParameter(format!("unknown p rule '{s}'")))
    }
}

/// A network scenario: regime, population size, budgets (linear scale,
/// unit-noise normalization) and the two fading laws.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub regime: Regime,
    pub n: u64,
    pub p_rule: PRule,
    /// Average total transmit power budget (linear). Unused by pure
    /// interference-limited calibration.
    pub p_ave: f64,
    /// Average interference power budget at the primary receiver (linear).
    pub q_ave: f64,
    pub direct: FadingModel,
    pub interference: FadingModel,
}

impl NetworkConfig {
    pub fn transmission_prob(&self) -> Result<f64> {
        self.p_rule.probability(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !(self.q_ave > 1e-12) || (self.regime != Regime::Dil && !(self.p_ave > 1e-12)) {
            return Err(Error::Infeasible(format!(
                "degenerate budgets: P_ave={}, Q_ave={}",
                self.p_ave, self.q_ave
            )));
        }
        if !matches!(self.p_rule, PRule::Optimized) {
            self.transmission_prob()?;
        }
        Ok(())
    }

    pub(crate) fn with_p(&self, p: f64) -> NetworkConfig {
        let mut c = self.clone();
        c.p_rule = PRule::Fixed(p);
        c
    }
}

/// Per-network expectations consumed by calibration and the semi-analytic
/// rate. `avg_power` is `+inf` for interference-limited policies whose
/// origin exponent `gamma_g <= 1` (the water level `1/(mu g)` is not
/// integrable there).
#[derive(Debug, Clone, Copy)]
pub struct ConstraintFunctionals {
    pub avg_power: f64,
    pub avg_interference: f64,
    pub avg_log_term: f64,
}

const OUTER_TOL: f64 = 1e-9;
const OUTER_REL_TOL: f64 = 1e-9;
const INNER_ABS_TOL: f64 = 1e-15;
const INNER_REL_TOL: f64 = 1e-10;
const OUTER_PANELS: usize = 6000;
const INNER_PANELS: usize = 3000;
/// Relative residual tolerance on calibrated constraints.
const RESIDUAL_REL: f64 = 5e-4;
const MAX_BISECT: usize = 200;

pub(crate) struct FunctionalEvaluator<'a> {
    config: &'a NetworkConfig,
    p: f64,
    dil: bool,
    qcache: QuantileSfCache,
    threshold_hint: Option<f64>,
    /// DIL threshold, independent of the multiplier.
    ratio_threshold: Option<f64>,
}

impl<'a> FunctionalEvaluator<'a> {
    pub(crate) fn new(config: &'a NetworkConfig, p: f64, dil: bool) -> Self {
        FunctionalEvaluator {
            config,
            p,
            dil,
            qcache: QuantileSfCache::default(),
            threshold_hint: None,
            ratio_threshold: None,
        }
    }

    /// Transmission threshold at these multipliers (recomputed per call for
    /// the total-power regime; the gain-ratio threshold is cached since it
    /// does not depend on `mu`).
    pub(crate) fn threshold(&mut self, lambda: f64, mu: f64) -> Result<f64> {
        if self.p >= 1.0 {
            return Ok(0.0);
        }
        if self.dil {
            if let Some(t) = self.ratio_threshold {
                return Ok(t);
            }
            let t = joint_quantile_sf_with_cache(
                &self.config.direct,
                &self.config.interference,
                0.0,
                1.0,
                self.p,
                None,
                &mut self.qcache,
            )?;
            self.ratio_threshold = Some(t);
            Ok(t)
        } else {
            let t = joint_quantile_sf_with_cache(
                &self.config.direct,
                &self.config.interference,
                lambda,
                mu,
                self.p,
                self.threshold_hint,
                &mut self.qcache,
            )?;
            self.threshold_hint = Some(t);
            Ok(t)
        }
    }

    /// Evaluate the three expectations. The power moment is integrated
    /// only when the water level is bounded (`lambda > 0`); at `lambda = 0`
    /// it has an `(1-s)^(-1/gamma_g)` endpoint singularity and is computed
    /// separately by [`lambda_zero_avg_power`] when finite. The power slot
    /// is NaN in that case.
    pub(crate) fn functionals(
        &mut self,
        lambda: f64,
        mu: f64,
    ) -> Result<(f64, ConstraintFunctionals)> {
        let t = self.threshold(lambda, mu)?;
        let n = self.config.n as f64;
        let direct = &self.config.direct;
        let interference = &self.config.interference;
        let dil = self.dil;
        let power_integrable = !dil && lambda > 0.0;
        let qcache = &mut self.qcache;
        let mut inner_failure: Option<Error> = None;

        let edges = unit_interval_edges();
        let raw = integrate_vec::<3>(
            |s| {
                let g = qcache.get(interference, s).max(1e-300);
                let level = lambda + mu * g;
                let t_scale = if dil { t * g } else { t * level };
                let a = t_scale.max(level);
                let sa = direct.sf(a);
                if sa < 1e-290 || inner_failure.is_some() {
                    return [0.0, 0.0, 0.0];
                }
                let inner = tail_moments(direct, a, sa);
                let [i2, i1] = match inner {
                    Ok(v) => v,
                    Err(e) => {
                        inner_failure = Some(e);
                        return [0.0, 0.0, 0.0];
                    }
                };
                let gw = g / level; // bounded by 1/mu
                let i_p = if power_integrable {
                    sa * (1.0 / level - 1.0 / a) + i2
                } else {
                    0.0
                };
                let i_gp = sa * (gw - g / a) + g * i2;
                let i_l = sa * (a / level).ln() + i1;
                [i_p, i_gp, i_l]
            },
            &edges,
            OUTER_TOL,
            OUTER_REL_TOL,
            OUTER_PANELS,
            "interference-gain expectation",
        )?;
        if let Some(e) = inner_failure {
            return Err(e);
        }
        let avg_power = if power_integrable {
            n * raw[0]
        } else {
            f64::NAN
        };
        Ok((
            t,
            ConstraintFunctionals {
                avg_power,
                avg_interference: n * raw[1],
                avg_log_term: raw[2],
            },
        ))
    }
}

/// `int_a^inf [S_h/h^2, S_h/h] dh`: the two tail moments behind the
/// by-parts reductions. Integrated in `u = ln h` (the integrands span a
/// decade of value per decade of `h`, so linear panels would drown in
/// rounding noise when `a` is many orders below the tail cutoff):
/// `int S/h^2 dh = int S(e^u) e^-u du`, `int S/h dh = int S(e^u) du`.
fn tail_moments(direct: &FadingModel, a: f64, sa: f64) -> Result<[f64; 2]> {
    let cutoff = direct.tail_cutoff((sa * 1e-11).max(1e-290));
    let hmax = cutoff.max(2.0 * a);
    let u_lo = a.ln();
    let u_hi = hmax.ln();
    let n_panels = (((u_hi - u_lo) / 0.8).ceil() as usize).clamp(2, 400);
    let step = (u_hi - u_lo) / n_panels as f64;
    let edges: Vec<f64> = (0..=n_panels).map(|i| u_lo + step * i as f64).collect();
    integrate_vec::<2>(
        |u| {
            let h = u.exp();
            let s_h = direct.sf(h);
            [s_h / h, s_h]
        },
        &edges,
        INNER_ABS_TOL,
        INNER_REL_TOL,
        INNER_PANELS,
        "direct-gain tail moments",
    )
}

/// Per-user `E[P]` for a zero total-power multiplier: the water level
/// `1/(mu g)` makes the integrand blow up like `g^-1` near the origin, so
/// integrate in CDF coordinates with `F_g = v^8` (the substitution flattens
/// the `(1-s)^(-1/gamma)` endpoint singularity for every `gamma_g > 1`,
/// where the expectation is finite). Transmit region is `h > kappa mu g`.
fn lambda_zero_avg_power(
    direct: &FadingModel,
    interference: &FadingModel,
    mu: f64,
    kappa: f64,
) -> Result<f64> {
    let edges = unit_interval_edges();
    let mut inner_failure: Option<Error> = None;
    let value = crate::quad::integrate(
        |v| {
            if inner_failure.is_some() {
                return 0.0;
            }
            let cdf_mass = v.powi(8);
            if cdf_mass < 1e-290 {
                return 0.0; // below f64 quantile representability; the
                            // integrand is O(v^{8(1-1/gamma)}) there
            }
            let g = match interference.quantile(cdf_mass.min(1.0 - 1e-12)) {
                Ok(g) => g.max(1e-300),
                Err(e) => {
                    inner_failure = Some(e);
                    return 0.0;
                }
            };
            let a = kappa * mu * g;
            let sa = direct.sf(a);
            if sa < 1e-290 {
                return 0.0;
            }
            let [i2, _] = match tail_moments(direct, a, sa) {
                Ok(m) => m,
                Err(e) => {
                    inner_failure = Some(e);
                    return 0.0;
                }
            };
            let jac = 8.0 * v.powi(7);
            jac * (sa * (1.0 / (mu * g) - 1.0 / a) + i2)
        },
        &edges,
        1e-9,
        1e-7,
        OUTER_PANELS,
        "lambda-zero power expectation",
    )?;
    if let Some(e) = inner_failure {
        return Err(e);
    }
    Ok(value)
}

/// Evaluate the constraint functionals of `config` at the given multipliers.
/// The threshold is computed internally from the config's transmission
/// probability.
pub fn constraint_functionals(
    config: &NetworkConfig,
    lambda: f64,
    mu: f64,
) -> Result<ConstraintFunctionals> {
    config.validate()?;
    if !(lambda + mu > 0.0) || lambda < 0.0 || mu < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need lambda, mu >= 0 with lambda + mu > 0, got ({lambda}, {mu})"
        )));
    }
    let p = config.transmission_prob()?;
    let dil = config.regime == Regime::Dil;
    if dil && lambda != 0.0 {
        return Err(Error::InvalidParameter(
            "interference-limited policies fix lambda = 0".into(),
        ));
    }
    let mut ev = FunctionalEvaluator::new(config, p, dil);
    let (t, mut f) = ev.functionals(lambda, mu)?;
    if lambda == 0.0 {
        // not integrated above: finite only when E[1/g] converges
        f.avg_power = if config.interference.class_c_params().gamma > 1.0 {
            let kappa = if dil { (t / mu).max(1.0) } else { t.max(1.0) };
            config.n as f64
                * lambda_zero_avg_power(&config.direct, &config.interference, mu, kappa)?
        } else {
            f64::INFINITY
        };
    }
    Ok(f)
}

/// Calibrate the total-power-and-interference regime: find `(lambda, mu)`
/// with complementary slackness so consumed power and interference meet
/// their budgets within 0.1% relative, at least one with equality.
pub fn calibrate_dtpil(config: &NetworkConfig) -> Result<Multipliers> {
    if config.regime != Regime::Dtpil && config.regime != Regime::Orthogonal {
        return Err(Error::InvalidParameter(format!(
            "calibrate_dtpil needs a total-power regime, got {}",
            config.regime
        )));
    }
    config.validate()?;
    let p = config.transmission_prob()?;
    let np = config.n as f64 * p;
    let p_ave = config.p_ave;
    let q_ave = config.q_ave;
    let lambda_max = np / p_ave;
    let mu_max = np / q_ave;
    let mut ev = FunctionalEvaluator::new(config, p, false);

    // (a) interference slack: mu = 0
    let lambda_a = solve_power_lambda(&mut ev, 0.0, lambda_max, p_ave)?;
    let (t_a, f_a) = ev.functionals(lambda_a, 0.0)?;
    if f_a.avg_interference <= q_ave * (1.0 + RESIDUAL_REL) {
        return Ok(Multipliers {
            lambda: lambda_a,
            mu: 0.0,
            threshold: t_a,
            p,
        });
    }

    // (b) power slack: lambda = 0 (only where E[1/g] is finite)
    if config.interference.class_c_params().gamma > 1.0 {
        if let Some(mu_b) = solve_interference_mu(&mut ev, 0.0, mu_max, q_ave)? {
            let (t_b, _) = ev.functionals(0.0, mu_b)?;
            let power_b = config.n as f64
                * lambda_zero_avg_power(&config.direct, &config.interference, mu_b, t_b.max(1.0))?;
            if power_b <= p_ave * (1.0 + RESIDUAL_REL) {
                return Ok(Multipliers {
                    lambda: 0.0,
                    mu: mu_b,
                    threshold: t_b,
                    p,
                });
            }
        }
    }

    // (c) both active: outer root in mu, inner power-matching lambda
    let lambda_floor = lambda_max * 1e-10;
    let lambda_of_mu = |ev: &mut FunctionalEvaluator, mu: f64| -> Result<f64> {
        let (_, f_lo) = ev.functionals(lambda_floor, mu)?;
        if f_lo.avg_power < p_ave {
            return Ok(0.0); // power budget slack at this mu
        }
        solve_power_lambda(ev, mu, lambda_max, p_ave)
    };
    let psi = |ev: &mut FunctionalEvaluator, mu: f64| -> Result<f64> {
        let l = lambda_of_mu(ev, mu)?;
        let (_, f) = ev.functionals(l.max(lambda_floor), mu)?;
        Ok(f.avg_interference - q_ave)
    };
    let mu_lo = mu_max * 1e-9;
    let f_lo = psi(&mut ev, mu_lo)?;
    let f_hi = psi(&mut ev, mu_max)?;
    if f_lo < 0.0 {
        // interference already slack at vanishing mu; should have been case (a)
        return Err(Error::Infeasible(
            "active-set contradiction: interference slack at mu -> 0 but case (a) failed".into(),
        ));
    }
    let mu = brent_root(
        |mu| psi(&mut ev, mu).unwrap_or(f64::NAN),
        mu_lo,
        mu_max,
        f_lo,
        f_hi,
        0.0,
        1e-6,
        q_ave * RESIDUAL_REL,
        MAX_BISECT,
        "dtpil interference dual",
    )?;
    let lambda = lambda_of_mu(&mut ev, mu)?.max(lambda_floor);
    let (t, f) = ev.functionals(lambda, mu)?;
    debug_assert!(f.avg_power <= p_ave * (1.0 + 2.0 * RESIDUAL_REL));
    Ok(Multipliers {
        lambda,
        mu,
        threshold: t,
        p,
    })
}

/// Calibrate the interference-limited regime: `lambda = 0`, `mu` meets the
/// interference budget with equality. The threshold is the gain-ratio
/// quantile and does not depend on `mu`.
pub fn calibrate_dil(config: &NetworkConfig) -> Result<Multipliers> {
    if config.regime != Regime::Dil {
        return Err(Error::InvalidParameter(format!(
            "calibrate_dil needs the interference-limited regime, got {}",
            config.regime
        )));
    }
    config.validate()?;
    let p = config.transmission_prob()?;
    let np = config.n as f64 * p;
    let mu_max = np / config.q_ave;
    let mut ev = FunctionalEvaluator::new(config, p, true);
    let mu = solve_interference_mu(&mut ev, 0.0, mu_max, config.q_ave)?
        .ok_or_else(|| Error::Infeasible("interference budget unreachable".into()))?;
    let (t, _) = ev.functionals(0.0, mu)?;
    Ok(Multipliers {
        lambda: 0.0,
        mu,
        threshold: t,
        p,
    })
}

/// Calibrate by regime.
pub fn calibrate(config: &NetworkConfig) -> Result<Multipliers> {
    match config.regime {
        Regime::Dtpil => calibrate_dtpil(config),
        Regime::Dil => calibrate_dil(config),
        Regime::Orthogonal => Err(Error::InvalidParameter(
            "orthogonal access calibrates through calibrate_baseline".into(),
        )),
    }
}

/// Single-user water-filling duals for the orthogonal-access baseline under
/// the same long-run budgets: both budgets for total-power regimes,
/// interference only when the parent regime is interference-limited.
pub fn calibrate_baseline(config: &NetworkConfig) -> Result<Multipliers> {
    let mut single = config.clone();
    single.n = 1;
    single.p_rule = PRule::Fixed(1.0);
    match config.regime {
        Regime::Dil => {
            single.regime = Regime::Dil;
            calibrate_dil(&single)
        }
        _ => {
            single.regime = Regime::Dtpil;
            calibrate_dtpil(&single)
        }
    }
}

/// Probability that a user actually radiates: equals `p` whenever the
/// threshold clears the water-filling positivity bound, below it otherwise
/// (sub-threshold-premise regimes at very small `N`).
pub fn effective_transmit_prob(config: &NetworkConfig, m: &Multipliers) -> Result<f64> {
    let mut cache = QuantileSfCache::default();
    match config.regime {
        Regime::Dil => {
            if m.threshold >= m.mu {
                Ok(m.p)
            } else {
                joint_sf_with_cache(
                    &config.direct,
                    &config.interference,
                    0.0,
                    1.0,
                    m.mu,
                    1e-12,
                    &mut cache,
                )
            }
        }
        _ => {
            if m.threshold >= 1.0 {
                Ok(m.p)
            } else {
                joint_sf_with_cache(
                    &config.direct,
                    &config.interference,
                    m.lambda,
                    m.mu,
                    1.0,
                    1e-12,
                    &mut cache,
                )
            }
        }
    }
}

fn solve_power_lambda(
    ev: &mut FunctionalEvaluator,
    mu: f64,
    lambda_max: f64,
    p_ave: f64,
) -> Result<f64> {
    // avg_power is strictly decreasing in lambda and bounded by Np/lambda,
    // so the residual is non-positive at lambda_max.
    let mut lo = lambda_max;
    let (_, f) = ev.functionals(lo, mu)?;
    let mut r_lo = f.avg_power - p_ave;
    let mut hi = lambda_max;
    let r_hi = r_lo;
    for _ in 0..MAX_BISECT {
        if r_lo >= 0.0 {
            break;
        }
        hi = lo;
        lo *= 0.5;
        let (_, f) = ev.functionals(lo, mu)?;
        r_lo = f.avg_power - p_ave;
    }
    if r_lo < 0.0 {
        return Err(Error::Infeasible(format!(
            "power budget {p_ave} not reachable even at lambda = {lo:e}"
        )));
    }
    brent_root(
        |l| {
            ev.functionals(l, mu)
                .map(|(_, f)| f.avg_power - p_ave)
                .unwrap_or(f64::NAN)
        },
        lo,
        hi,
        r_lo,
        if hi == lo { r_lo } else { r_hi },
        0.0,
        1e-7,
        p_ave * RESIDUAL_REL,
        MAX_BISECT,
        "power dual",
    )
}

fn solve_interference_mu(
    ev: &mut FunctionalEvaluator,
    lambda: f64,
    mu_max: f64,
    q_ave: f64,
) -> Result<Option<f64>> {
    let mut lo = mu_max;
    let (_, f) = ev.functionals(lambda, lo)?;
    let mut r_lo = f.avg_interference - q_ave;
    let mut hi = mu_max;
    let r_hi = r_lo;
    for _ in 0..MAX_BISECT {
        if r_lo >= 0.0 {
            break;
        }
        hi = lo;
        lo *= 0.5;
        let (_, f) = ev.functionals(lambda, lo)?;
        r_lo = f.avg_interference - q_ave;
    }
    if r_lo < 0.0 {
        return Ok(None); // interference budget slack for every mu
    }
    let mu = brent_root(
        |m| {
            ev.functionals(lambda, m)
                .map(|(_, f)| f.avg_interference - q_ave)
                .unwrap_or(f64::NAN)
        },
        lo,
        hi,
        r_lo,
        if hi == lo { r_lo } else { r_hi },
        0.0,
        1e-7,
        q_ave * RESIDUAL_REL,
        MAX_BISECT,
        "interference dual",
    )?;
    Ok(Some(mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rr_config(regime: Regime, n: u64, p_rule: PRule, p_ave: f64, q_ave: f64) -> NetworkConfig {
        NetworkConfig {
            regime,
            n,
            p_rule,
            p_ave,
            q_ave,
            direct: FadingModel::rayleigh(),
            interference: FadingModel::rayleigh(),
        }
    }

    // Frozen against an independent reduction: for Rayleigh/Rayleigh the
    // inner integral has the closed form w e^{-a} - E1(a) and the outer
    // g-expectation was evaluated with mpmath (40 dps).
    #[test]
    fn functionals_match_exponential_integral_oracle() {
        struct Case {
            lambda: f64,
            mu: f64,
            p: f64,
            t: f64,
            e_p: f64,
            e_gp: f64,
            e_log: f64,
        }
        let cases = [
            Case {
                lambda: 0.02,
                mu: 0.5,
                p: 0.01,
                t: 59.204_683_009_614_81,
                e_p: 0.313_687_044_495_125_54,
                e_gp: 0.007_209_973_293_355_688_6,
                e_log: 0.044_554_161_188_361_9,
            },
            Case {
                lambda: 0.031_622_776_601_683_8,
                mu: 1.0,
                p: 0.01,
                t: 33.580_030_845_903_007,
                e_p: 0.190_053_522_371_169_2,
                e_gp: 0.003_779_620_105_135_374_6,
                e_log: 0.039_089_804_581_920_894,
            },
            Case {
                lambda: 0.1,
                mu: 0.0,
                p: 0.05,
                t: 29.957_322_735_539_908,
                e_p: 0.486_880_591_125_979_91,
                e_gp: 0.486_880_591_125_979_91,
                e_log: 0.183_108_098_541_969_82,
            },
            // threshold below 1: the positivity clamp takes over
            Case {
                lambda: 1.0,
                mu: 1.0,
                p: 0.3,
                t: 0.683_247_713_981_581_36,
                e_p: 0.046_466_804_924_658_728,
                e_gp: 0.015_570_137_115_832_547,
                e_log: 0.086_458_564_735_430_773,
            },
        ];
        for c in &cases {
            let n = 100u64;
            let config = rr_config(Regime::Dtpil, n, PRule::Fixed(c.p), 1.0, 1.0);
            let mut ev = FunctionalEvaluator::new(&config, c.p, false);
            let (t, f) = ev.functionals(c.lambda, c.mu).unwrap();
            assert_relative_eq!(t, c.t, max_relative = 1e-7);
            assert_relative_eq!(f.avg_power, n as f64 * c.e_p, max_relative = 1e-7);
            assert_relative_eq!(f.avg_interference, n as f64 * c.e_gp, max_relative = 1e-7);
            assert_relative_eq!(f.avg_log_term, c.e_log, max_relative = 1e-7);
        }
    }

    // DIL Rayleigh/Rayleigh closed forms: t = N-1 and
    // N E[gP] = N p / mu - N (ln((1+t)/t) - 1/(1+t)).
    #[test]
    fn dil_interference_matches_closed_form() {
        let config = rr_config(Regime::Dil, 10, PRule::OneOverN, 1.0, 1.0);
        let f = constraint_functionals(&config, 0.0, 1.0).unwrap();
        assert_relative_eq!(
            f.avg_interference,
            0.946_394_843_421_737,
            max_relative = 1e-7
        );
        assert!(f.avg_power.is_infinite(), "E[1/g] diverges for gamma_g = 1");
    }

    #[test]
    fn dil_calibration_examples() {
        // N=10, Q=1: mu* = 0.9491221581029903 (closed-form + quadrature)
        let config = rr_config(Regime::Dil, 10, PRule::OneOverN, 1.0, 1.0);
        let m = calibrate_dil(&config).unwrap();
        assert_eq!(m.lambda, 0.0);
        assert_relative_eq!(m.threshold, 9.0, max_relative = 1e-6);
        assert_relative_eq!(m.mu, 0.949_122_158_102_990_3, max_relative = 2e-3);
        assert!(m.mu <= 1.0 / config.q_ave + 1e-12);

        // N=2, p=1/2: t = 1, mu* = 1/(1 + 2(ln 2 - 1/2))
        let config = rr_config(Regime::Dil, 2, PRule::OneOverN, 1.0, 1.0);
        let m = calibrate_dil(&config).unwrap();
        assert_relative_eq!(m.threshold, 1.0, max_relative = 1e-6);
        assert_relative_eq!(m.mu, 0.721_347_520_444_481_7, max_relative = 2e-3);
    }

    #[test]
    fn generous_interference_budget_shrinks_mu_and_lifts_rate() {
        let tight = rr_config(Regime::Dil, 32, PRule::OneOverN, 1.0, 1.0);
        let loose = rr_config(Regime::Dil, 32, PRule::OneOverN, 1.0, 100.0);
        let m_tight = calibrate_dil(&tight).unwrap();
        let m_loose = calibrate_dil(&loose).unwrap();
        assert!(m_loose.mu < m_tight.mu);
        // the water level scales with 1/mu, so the rate gains ~ ln(mu_t/mu_l)
        let f_tight = constraint_functionals(&tight, 0.0, m_tight.mu).unwrap();
        let f_loose = constraint_functionals(&loose, 0.0, m_loose.mu).unwrap();
        let gain = f_loose.avg_log_term - f_tight.avg_log_term;
        let expected = (m_tight.mu / m_loose.mu).ln() * m_tight.p;
        assert!(gain > 0.0);
        assert_relative_eq!(gain, expected, max_relative = 0.3);
    }

    #[test]
    fn dtpil_slack_interference_gives_mu_zero() {
        let config = rr_config(Regime::Dtpil, 50, PRule::OneOverN, 10.0, 1e9);
        let m = calibrate_dtpil(&config).unwrap();
        assert_eq!(m.mu, 0.0);
        let f = constraint_functionals(&config, m.lambda, m.mu).unwrap();
        assert_relative_eq!(f.avg_power, 10.0, max_relative = 2e-3);
        assert!(m.lambda <= 50.0 * (1.0 / 50.0) / 10.0 + 1e-12);
    }

    // Regression anchor computed twice before freezing: an independent
    // scipy pipeline (E1 closed inner integral, Brent dual solves) gives
    // lambda = 0.0211444, mu = 0.3206435 at N = 100, 15 dB / 0 dB.
    #[test]
    fn dtpil_both_active_anchor() {
        let p_ave = 10f64.powf(1.5);
        let config = rr_config(Regime::Dtpil, 100, PRule::OneOverN, p_ave, 1.0);
        let m = calibrate_dtpil(&config).unwrap();
        assert_relative_eq!(m.lambda, 0.021_144_4, max_relative = 5e-3);
        assert_relative_eq!(m.mu, 0.320_643_5, max_relative = 5e-3);
        assert!(m.lambda <= 1.0 / p_ave + 1e-12);
        assert!(m.mu <= 1.0 / config.q_ave + 1e-12);
        let f = constraint_functionals(&config, m.lambda, m.mu).unwrap();
        assert_relative_eq!(f.avg_power, p_ave, max_relative = 2e-3);
        assert_relative_eq!(f.avg_interference, 1.0, max_relative = 2e-3);
        assert!(m.threshold >= 1.0, "threshold premise holds at N=100");
    }

    #[test]
    fn huge_mu_collapses_power() {
        let config = rr_config(Regime::Dtpil, 10, PRule::OneOverN, 1.0, 1.0);
        let f = constraint_functionals(&config, 1e-3, 1e6).unwrap();
        assert!(f.avg_power < 1e-3, "avg_power = {}", f.avg_power);
    }

    #[test]
    fn p_equal_one_is_unconditional_waterfill() {
        // frozen single-user expectations at lambda=0.05, mu=0.3 (mpmath)
        let config = rr_config(Regime::Dtpil, 1, PRule::Fixed(1.0), 1.0, 1.0);
        let f = constraint_functionals(&config, 0.05, 0.3).unwrap();
        assert_relative_eq!(f.avg_power, 3.458_391_608_365_527, max_relative = 1e-7);
        assert_relative_eq!(
            f.avg_interference,
            1.082_756_650_651_091_7,
            max_relative = 1e-7
        );
        assert_relative_eq!(f.avg_log_term, 1.100_293_081_538_704_8, max_relative = 1e-7);
    }

    #[test]
    fn baseline_calibration_meets_budgets() {
        let p_ave = 10f64.powf(1.5);
        let config = rr_config(Regime::Dtpil, 64, PRule::OneOverN, p_ave, 1.0);
        let m = calibrate_baseline(&config).unwrap();
        assert_eq!(m.p, 1.0);
        assert_eq!(m.threshold, 0.0);
        let single = NetworkConfig {
            n: 1,
            p_rule: PRule::Fixed(1.0),
            ..config.clone()
        };
        let f = constraint_functionals(&single, m.lambda, m.mu).unwrap();
        assert!(f.avg_power <= p_ave * (1.0 + 2e-3));
        assert!(f.avg_interference <= 1.0 * (1.0 + 2e-3));
        let power_gap = (f.avg_power - p_ave).abs() / p_ave;
        let int_gap = (f.avg_interference - 1.0).abs();
        assert!(
            power_gap < 2e-3 || int_gap < 2e-3,
            "at least one budget active"
        );
    }

    #[test]
    fn degenerate_budgets_are_infeasible() {
        let config = rr_config(Regime::Dtpil, 10, PRule::OneOverN, 0.0, 1.0);
        assert!(matches!(
            calibrate_dtpil(&config),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn p_rules_resolve_and_roundtrip() {
        assert_eq!(PRule::OneOverN.probability(8).unwrap(), 0.125);
        assert_eq!(PRule::Scaled(0.25).probability(8).unwrap(), 0.03125);
        assert!(PRule::Optimized.probability(8).is_err());
        assert!(PRule::Fixed(1.5).probability(8).is_err());
        for s in ["1/N", "0.25/N", "p=0.01", "optimized"] {
            let r: PRule = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
    }

    #[test]
    fn effective_probability_below_premise() {
        // tiny N, large p: threshold lands below 1 and the realized
        // transmit probability falls short of p
        let config = rr_config(Regime::Dtpil, 2, PRule::Fixed(0.45), 1.0, 1.0);
        let mut ev = FunctionalEvaluator::new(&config, 0.45, false);
        let (t, _) = ev.functionals(1.0, 1.0).unwrap();
        let m = Multipliers {
            lambda: 1.0,
            mu: 1.0,
            threshold: t,
            p: 0.45,
        };
        assert!(!m.waterfill_premise_holds());
        let pe = effective_transmit_prob(&config, &m).unwrap();
        assert!(pe < 0.45 && pe > 0.0, "effective p = {pe}");
    }

    // ----- Monte Carlo cross-validation of the quadrature route -----

    use crate::joint::JointStateDistribution;
    use crate::policy::{dil_power, dtpil_power};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct McMoments {
        e_p: f64,
        se_p: f64,
        e_gp: f64,
        se_gp: f64,
        e_log: f64,
        se_log: f64,
    }

    fn mc_functionals(
        config: &NetworkConfig,
        m: &Multipliers,
        samples: u64,
        seed: u64,
    ) -> McMoments {
        let dil = config.regime == Regime::Dil;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sp, mut sp2) = (0.0, 0.0);
        let (mut sg, mut sg2) = (0.0, 0.0);
        let (mut sl, mut sl2) = (0.0, 0.0);
        for _ in 0..samples {
            let h = config.direct.sample_one(&mut rng);
            let g = config.interference.sample_one(&mut rng);
            let p = if dil {
                dil_power(h, g, m)
            } else {
                dtpil_power(h, g, m)
            };
            let l = (1.0 + h * p).ln();
            sp += p;
            sp2 += p * p;
            sg += g * p;
            sg2 += g * p * g * p;
            sl += l;
            sl2 += l * l;
        }
        let n = samples as f64;
        let stat = |s: f64, s2: f64| {
            let mean = s / n;
            let var = ((s2 - s * s / n) / (n - 1.0)).max(0.0);
            (mean, (var / n).sqrt())
        };
        let (e_p, se_p) = stat(sp, sp2);
        let (e_gp, se_gp) = stat(sg, sg2);
        let (e_log, se_log) = stat(sl, sl2);
        McMoments {
            e_p,
            se_p,
            e_gp,
            se_gp,
            e_log,
            se_log,
        }
    }

    // The quadrature never touches sampling and the sampler never touches
    // quadrature; agreement within 3 standard errors on randomized
    // multiplier tuples pins both routes.
    #[test]
    fn functionals_agree_with_monte_carlo_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let models: [&str; 4] = ["rayleigh", "rician:K=1", "nakagami:m=1.5", "weibull:c=2.5"];
        let samples: u64 = 10_000_000;
        for trial in 0..20u64 {
            let direct: FadingModel = models[rng.gen_range(0..models.len())].parse().unwrap();
            let interference: FadingModel = models[rng.gen_range(0..models.len())].parse().unwrap();
            let dil = trial % 3 == 0;
            let n = rng.gen_range(4..200u64);
            let p = rng.gen_range(0.002..0.2f64);
            let (lambda, mu) = if dil {
                (0.0, rng.gen_range(0.05..1.5f64))
            } else {
                (rng.gen_range(0.01..0.8f64), rng.gen_range(0.0..1.5f64))
            };
            let config = NetworkConfig {
                regime: if dil { Regime::Dil } else { Regime::Dtpil },
                n,
                p_rule: PRule::Fixed(p),
                p_ave: 1.0,
                q_ave: 1.0,
                direct,
                interference,
            };
            let f = constraint_functionals(&config, lambda, mu).unwrap();

            let joint = if dil {
                JointStateDistribution::new(
                    config.direct.clone(),
                    config.interference.clone(),
                    0.0,
                    1.0,
                )
                .unwrap()
            } else {
                JointStateDistribution::new(
                    config.direct.clone(),
                    config.interference.clone(),
                    lambda,
                    mu,
                )
                .unwrap()
            };
            let t = joint.quantile(1.0 - p).unwrap();
            let m = Multipliers {
                lambda,
                mu,
                threshold: t,
                p,
            };

            let mc = mc_functionals(&config, &m, samples, 7000 + trial);
            let nf = n as f64;
            let d_gp = (f.avg_interference / nf - mc.e_gp).abs();
            let d_log = (f.avg_log_term - mc.e_log).abs();
            assert!(
                d_gp <= 3.0 * mc.se_gp.max(1e-12),
                "trial {trial}: E[gP] quad {} vs MC {} +- {}",
                f.avg_interference / nf,
                mc.e_gp,
                mc.se_gp
            );
            assert!(
                d_log <= 3.0 * mc.se_log.max(1e-12),
                "trial {trial}: E[log] quad {} vs MC {} +- {}",
                f.avg_log_term,
                mc.e_log,
                mc.se_log
            );
            if f.avg_power.is_finite() {
                let d_p = (f.avg_power / nf - mc.e_p).abs();
                assert!(
                    d_p <= 3.0 * mc.se_p.max(1e-12),
                    "trial {trial}: E[P] quad {} vs MC {} +- {}",
                    f.avg_power / nf,
                    mc.e_p,
                    mc.se_p
                );
            }
        }
    }
}
