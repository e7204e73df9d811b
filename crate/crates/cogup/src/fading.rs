//! Channel power-gain distributions.
//!
//! Four fading families, all describing the distribution of the *power* gain
//! (magnitude squared), normalized to unit mean so the budget parameters act
//! as SNR-like quantities:
//!
//! | model       | power-gain law                                        |
//! |-------------|-------------------------------------------------------|
//! | Rayleigh    | Exp(1)                                                |
//! | Rician-K    | scaled noncentral chi-squared, 2 dof, E = 1           |
//! | Nakagami-m  | Gamma(shape m, rate m)                                |
//! | Weibull-c   | Weibull with shape c/2, scale chosen for unit mean    |
//!
//! Every law has continuous, strictly increasing CDF on positive support,
//! a double-exponential upper tail `1-F(x) ~ alpha x^l exp(-beta x^n + H(x))`
//! and regular origin behavior `F(x) ~ eta x^gamma`; [`ClassCParams`] carries
//! those constants. Tail evaluation never forms `1 - F`: survival uses its
//! own cancellation-free route so quantities like `sf(x) = 1e-12` keep full
//! relative accuracy.
//!
//! Models are immutable after construction; sampling takes the caller's RNG.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::quad::brent_root;
use crate::special::{gamma as gamma_fn, gamma_p, gamma_q, ln_gamma};

/// Fading family plus its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FadingKind {
    Rayleigh,
    Rician { k: f64 },
    Nakagami { m: f64 },
    Weibull { c: f64 },
}

/// Slowly varying tail shift `H(x)` appearing in the tail law. Only the two
/// forms the supported models need: identically zero, or the Rician
/// `2 sqrt(K(K+1) x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailShift {
    Zero,
    /// `H(x) = coeff * sqrt(x)` with `coeff = 2 sqrt(K(K+1))`.
    RicianSqrt {
        coeff: f64,
    },
}

impl TailShift {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TailShift::Zero => 0.0,
            TailShift::RicianSqrt { coeff } => coeff * x.sqrt(),
        }
    }
}

/// Tail and origin constants of a class-C law:
/// `1-F(x) ~ alpha x^l exp(-beta x^n + H(x))` as `x -> inf` and
/// `F(x) ~ eta x^gamma` as `x -> 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCParams {
    pub alpha: f64,
    pub l: f64,
    pub beta: f64,
    pub n: f64,
    pub h: TailShift,
    pub eta: f64,
    pub gamma: f64,
}

impl ClassCParams {
    /// The tail law `alpha x^l exp(-beta x^n + H(x))`.
    pub fn tail_law(&self, x: f64) -> f64 {
        self.alpha * x.powf(self.l) * (-self.beta * x.powf(self.n) + self.h.eval(x)).exp()
    }

    /// The origin law `eta x^gamma`.
    pub fn origin_law(&self, x: f64) -> f64 {
        self.eta * x.powf(self.gamma)
    }
}

/// Immutable unit-mean power-gain distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingModel {
    kind: FadingKind,
    // precomputed constants
    wb_beta: f64,  // Weibull: Gamma(1+2/c)^(c/2)
    wb_n: f64,     // Weibull: c/2
    ri_nu: f64,    // Rician: LOS amplitude, nu^2 = K/(K+1)
    ri_sigma: f64, // Rician: diffuse std, sigma^2 = 1/(2(K+1))
    ln_gamma_m: f64,
}

impl FadingModel {
    pub fn new(kind: FadingKind) -> Result<Self> {
        let check = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
            Ok(())
        };
        let mut model = FadingModel {
            kind,
            wb_beta: 0.0,
            wb_n: 0.0,
            ri_nu: 0.0,
            ri_sigma: 0.0,
            ln_gamma_m: 0.0,
        };
        match kind {
            FadingKind::Rayleigh => {}
            FadingKind::Rician { k } => {
                check("K", k)?;
                model.ri_nu = (k / (k + 1.0)).sqrt();
                model.ri_sigma = (0.5 / (k + 1.0)).sqrt();
            }
            FadingKind::Nakagami { m } => {
                check("m", m)?;
                model.ln_gamma_m = ln_gamma(m);
            }
            FadingKind::Weibull { c } => {
                check("c", c)?;
                model.wb_n = 0.5 * c;
                model.wb_beta = gamma_fn(1.0 + 2.0 / c).powf(0.5 * c);
            }
        }
        Ok(model)
    }

    pub fn rayleigh() -> Self {
        Self::new(FadingKind::Rayleigh).expect("no parameters to validate")
    }

    pub fn kind(&self) -> FadingKind {
        self.kind
    }

    /// CDF of the power gain; zero for `x <= 0`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.kind {
            FadingKind::Rayleigh => -(-x).exp_m1(),
            FadingKind::Nakagami { m } => gamma_p(m, m * x),
            FadingKind::Weibull { .. } => -(-self.wb_beta * x.powf(self.wb_n)).exp_m1(),
            FadingKind::Rician { k } => rician_cdf(k, x),
        }
    }

    /// Survival function `1 - F(x)`, evaluated without cancellation so deep
    /// tail values keep relative accuracy.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match self.kind {
            FadingKind::Rayleigh => (-x).exp(),
            FadingKind::Nakagami { m } => gamma_q(m, m * x),
            FadingKind::Weibull { .. } => (-self.wb_beta * x.powf(self.wb_n)).exp(),
            FadingKind::Rician { k } => rician_sf(k, x),
        }
    }

    /// Quantile (functional inverse of the CDF) for `p` in `[0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain {
                what: "p",
                value: p,
                range: "[0, 1)",
            });
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        match self.kind {
            FadingKind::Rayleigh => Ok(-(-p).ln_1p()),
            FadingKind::Weibull { .. } => Ok((-(-p).ln_1p() / self.wb_beta).powf(1.0 / self.wb_n)),
            _ => {
                if p <= 0.5 {
                    self.invert(Target::Cdf(p))
                } else {
                    self.invert(Target::Sf(1.0 - p))
                }
            }
        }
    }

    /// Quantile addressed from the survival side: the `x` with `sf(x) = s`,
    /// for `s` in `(0, 1]`. Preferred deep in the tail where `1 - p` would
    /// lose precision.
    pub fn quantile_sf(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Domain {
                what: "s",
                value: s,
                range: "(0, 1]",
            });
        }
        if s == 1.0 {
            return Ok(0.0);
        }
        match self.kind {
            FadingKind::Rayleigh => Ok(-s.ln()),
            FadingKind::Weibull { .. } => Ok((-s.ln() / self.wb_beta).powf(1.0 / self.wb_n)),
            _ => {
                if s >= 0.5 {
                    self.invert(Target::Cdf(1.0 - s))
                } else {
                    self.invert(Target::Sf(s))
                }
            }
        }
    }

    /// One draw of the power gain.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            FadingKind::Rayleigh => rng.sample(Exp1),
            FadingKind::Nakagami { m } => {
                let g = Gamma::new(m, 1.0 / m).expect("validated at construction");
                g.sample(rng)
            }
            FadingKind::Weibull { .. } => {
                let e: f64 = rng.sample(Exp1);
                (e / self.wb_beta).powf(1.0 / self.wb_n)
            }
            FadingKind::Rician { .. } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let a = self.ri_nu + self.ri_sigma * z1;
                let b = self.ri_sigma * z2;
                a * a + b * b
            }
        }
    }

    /// `count` i.i.d. draws. Deterministic given the stream state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    /// Tail/origin constants for this model.
    pub fn class_c_params(&self) -> ClassCParams {
        match self.kind {
            FadingKind::Rayleigh => ClassCParams {
                alpha: 1.0,
                l: 0.0,
                beta: 1.0,
                n: 1.0,
                h: TailShift::Zero,
                eta: 1.0,
                gamma: 1.0,
            },
            FadingKind::Rician { k } => {
                let root_pi = std::f64::consts::PI.sqrt();
                ClassCParams {
                    alpha: 1.0 / (2.0 * root_pi * k.exp() * (k * (k + 1.0)).powf(0.25)),
                    l: -0.25,
                    beta: k + 1.0,
                    n: 1.0,
                    h: TailShift::RicianSqrt {
                        coeff: 2.0 * (k * (k + 1.0)).sqrt(),
                    },
                    eta: (k + 1.0) * (-k).exp(),
                    gamma: 1.0,
                }
            }
            FadingKind::Nakagami { m } => {
                let a = ((m - 1.0) * m.ln() - self.ln_gamma_m).exp();
                ClassCParams {
                    alpha: a,
                    l: m - 1.0,
                    beta: m,
                    n: 1.0,
                    h: TailShift::Zero,
                    eta: a,
                    gamma: m,
                }
            }
            FadingKind::Weibull { .. } => ClassCParams {
                alpha: 1.0,
                l: 0.0,
                beta: self.wb_beta,
                n: self.wb_n,
                h: TailShift::Zero,
                eta: self.wb_beta,
                gamma: self.wb_n,
            },
        }
    }

    /// An `x` beyond which `sf(x) <= target`, from the tail law plus
    /// geometric growth. Used to truncate tail integrals.
    pub fn tail_cutoff(&self, target: f64) -> f64 {
        let pr = self.class_c_params();
        let guess = (target.recip().ln().max(1.0) / pr.beta).powf(1.0 / pr.n);
        let mut x = guess.max(1e-6);
        for _ in 0..200 {
            if self.sf(x) <= target {
                return x;
            }
            x *= 1.7;
        }
        x
    }

    // Inversion bracket seeded from the class-C laws so extreme targets
    // (origin masses down to 1e-300) start within a few factors of the root;
    // a cold [0, inf) bracket drives Brent into its quadratic worst case.
    fn invert(&self, target: Target) -> Result<f64> {
        let f = |x: f64| match target {
            Target::Cdf(p) => self.cdf(x) - p,
            Target::Sf(s) => s - self.sf(x), // increasing in x
        };
        let pr = self.class_c_params();
        let x0 = match target {
            Target::Cdf(p) => (p / pr.eta).powf(1.0 / pr.gamma),
            Target::Sf(s) => ((1.0 / s).ln().max(1.0) / pr.beta).powf(1.0 / pr.n),
        };
        let x0 = if x0.is_finite() && x0 > 0.0 { x0 } else { 1.0 };
        let mut lo = x0;
        let mut flo = f(lo);
        let mut hi = x0;
        let mut fhi = flo;
        for _ in 0..600 {
            if flo <= 0.0 {
                break;
            }
            hi = lo;
            fhi = flo;
            lo *= 0.25;
            if lo < 1e-300 {
                lo = 0.0;
            }
            flo = f(lo);
        }
        for _ in 0..600 {
            if fhi >= 0.0 {
                break;
            }
            lo = hi;
            flo = fhi;
            hi *= 4.0;
            fhi = f(hi);
        }
        brent_root(
            f,
            lo,
            hi,
            flo,
            fhi,
            1e-300,
            1e-13,
            0.0,
            600,
            "fading quantile",
        )
    }
}

#[derive(Clone, Copy)]
enum Target {
    Cdf(f64),
    Sf(f64),
}

// Rician power gain: with sigma^2 = 1/(2(K+1)) the normalized power is a
// Poisson(K) mixture of Gamma(j+1, 1) laws in y = (K+1) x. Both series below
// have positive terms only.
fn rician_sf(k: f64, x: f64) -> f64 {
    let y = (k + 1.0) * x;
    let mut pois = (-k).exp(); // e^-K K^j / j!
    let mut t = (-y).exp(); // e^-y y^j / j!
    let mut q = t; // Q(j+1, y)
    let mut acc = 0.0;
    let mut pois_cum = 0.0;
    for j in 0..10_000u32 {
        acc += pois * q;
        pois_cum += pois;
        let remaining = (1.0 - pois_cum).max(0.0);
        if remaining <= 1e-17 * acc + 1e-305 {
            break;
        }
        let jf = (j + 1) as f64;
        pois *= k / jf;
        t *= y / jf;
        q += t;
    }
    acc.min(1.0)
}

fn rician_cdf(k: f64, x: f64) -> f64 {
    let y = (k + 1.0) * x;
    let mut pois = (-k).exp();
    let mut pmf = (-y).exp(); // e^-y y^j / j!
    let mut c = -(-y).exp_m1(); // P(Poisson(y) >= j+1)
    let mut acc = 0.0;
    let mut pois_cum = 0.0;
    for j in 0..10_000u32 {
        acc += pois * c;
        pois_cum += pois;
        let remaining = (1.0 - pois_cum).max(0.0);
        if remaining * c <= 1e-17 * acc + 1e-305 {
            break;
        }
        let jf = (j + 1) as f64;
        pois *= k / jf;
        pmf *= y / jf;
        c = (c - pmf).max(0.0);
    }
    acc.min(1.0)
}

impl fmt::Display for FadingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FadingKind::Rayleigh => write!(f, "rayleigh"),
            FadingKind::Rician { k } => write!(f, "rician:K={k}"),
            FadingKind::Nakagami { m } => write!(f, "nakagami:m={m}"),
            FadingKind::Weibull { c } => write!(f, "weibull:c={c}"),
        }
    }
}

impl FromStr for FadingModel {
    type Err = Error;

    /// Parses `"rayleigh"`, `"rician:K=<v>"`, `"nakagami:m=<v>"`,
    /// `"weibull:c=<v>"` (kind and key case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidParameter(msg);
        let lower = s.trim().to_ascii_lowercase();
        if lower == "rayleigh" {
            return FadingModel::new(FadingKind::Rayleigh);
        }
        let (kind, rest) = lower
            .split_once(':')
            .ok_or_else(|| bad(format!("unknown fading model '{s}'")))?;
        let (key, value) = rest
            .split_once('=')
            .ok_or_else(|| bad(format!("expected '<param>=<value>' in '{s}'")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad numeric value '{value}' in '{s}'")))?;
        match (kind.trim(), key.trim()) {
            ("rician", "k") => FadingModel::new(FadingKind::Rician { k: v }),
            ("nakagami", "m") => FadingModel::new(FadingKind::Nakagami { m: v }),
            ("weibull", "c") => FadingModel::new(FadingKind::Weibull { c: v }),
            _ => Err(bad(format!("unknown fading model '{s}'"))),
        }
    }
}
