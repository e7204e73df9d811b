//! Adaptive Gauss-Kronrod quadrature and bracketed root finding.
//!
//! Globally adaptive 7-15 rule: panels live in a max-heap keyed by error
//! estimate and the worst panel is split until the summed estimate meets the
//! absolute tolerance. Callers pass initial panel edges; integrands with
//! boundary layers (deep-tail survival integrals) get edges packed
//! geometrically toward the endpoints so narrow layers cannot be missed by
//! the first coarse pass.

use crate::error::{Error, Result};

// 15-point Kronrod abscissae (positive half) and weights, with the embedded
// 7-point Gauss weights. Values are the standard QUADPACK constants.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Kronrod-15 pass over `[a, b]`: returns (value, error estimate) per
/// component of the `K`-vector integrand.
fn kronrod15<const K: usize>(
    f: &mut dyn FnMut(f64) -> [f64; K],
    a: f64,
    b: f64,
) -> ([f64; K], [f64; K]) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut resk = [0.0; K];
    let mut resg = [0.0; K];
    for k in 0..K {
        resk[k] = WGK[7] * fc[k];
        resg[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(mid - dx);
        let f2 = f(mid + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            resk[k] += WGK[j] * s;
            if j % 2 == 1 {
                resg[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        resk[k] *= half;
        resg[k] *= half;
        err[k] = (resk[k] - resg[k]).abs();
    }
    (resk, err)
}

struct Panel<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    err: [f64; K],
    key: f64,
}

/// Integrate a vector integrand over the panels delimited by `edges`
/// (strictly increasing), refining until every component's summed error
/// estimate is below `max(abs_tol, rel_tol * |value|)` or the panel budget
/// runs out. The relative term keeps large-magnitude integrals from being
/// chased below the f64 noise floor.
pub fn integrate_vec<const K: usize>(
    mut f: impl FnMut(f64) -> [f64; K],
    edges: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
    context: &str,
) -> Result<[f64; K]> {
    assert!(edges.len() >= 2);
    let mut panels: Vec<Panel<K>> = Vec::with_capacity(edges.len() + 64);
    for w in edges.windows(2) {
        let (v, e) = kronrod15(&mut f, w[0], w[1]);
        let key = e.iter().cloned().fold(0.0, f64::max);
        panels.push(Panel {
            a: w[0],
            b: w[1],
            value: v,
            err: e,
            key,
        });
    }
    loop {
        let mut tot_err = [0.0; K];
        let mut tot_val = [0.0; K];
        for p in &panels {
            for k in 0..K {
                tot_err[k] += p.err[k];
                tot_val[k] += p.value[k];
            }
        }
        let done = (0..K).all(|k| tot_err[k] <= abs_tol.max(rel_tol * tot_val[k].abs()));
        if done {
            return Ok(tot_val);
        }
        // split the panel with the largest single-component error
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.key.total_cmp(&y.1.key))
            .expect("non-empty panel set");
        let Panel { a, b, .. } = panels[idx];
        let m = 0.5 * (a + b);
        if !(a < m && m < b) || panels.len() >= max_panels {
            let worst = &panels[idx];
            return Err(Error::NumericFailure {
                context: context.to_string(),
                panel_lo: worst.a,
                panel_hi: worst.b,
                panel_err: worst.key,
                tol: abs_tol,
            });
        }
        let (v1, e1) = kronrod15(&mut f, a, m);
        let (v2, e2) = kronrod15(&mut f, m, b);
        let k1 = e1.iter().cloned().fold(0.0, f64::max);
        let k2 = e2.iter().cloned().fold(0.0, f64::max);
        panels[idx] = Panel {
            a,
            b: m,
            value: v1,
            err: e1,
            key: k1,
        };
        panels.push(Panel {
            a: m,
            b,
            value: v2,
            err: e2,
            key: k2,
        });
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    edges: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
    context: &str,
) -> Result<f64> {
    integrate_vec(
        move |x| [f(x)],
        edges,
        abs_tol,
        rel_tol,
        max_panels,
        context,
    )
    .map(|v| v[0])
}

/// Panel edges for unit-interval integrands whose action may concentrate in a
/// layer at either endpoint: geometric packing down to width `1e-14` on both
/// sides plus a coarse interior grid.
pub fn unit_interval_edges() -> Vec<f64> {
    let mut edges = vec![0.0];
    let mut w = 1e-14;
    while w < 0.1 {
        edges.push(w);
        w *= 100.0;
    }
    edges.extend_from_slice(&[0.2, 0.4, 0.6, 0.8]);
    let mut w = 0.1;
    while w > 1e-14 {
        edges.push(1.0 - w);
        w /= 100.0;
    }
    edges.push(1.0);
    edges
}

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite
/// sign. Converges to `xtol + rtol*|x|` in x, or stops early once `|f| <=
/// ftol` when a positive `ftol` is given.
#[allow(clippy::too_many_arguments)]
pub fn brent_root(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa0: f64,
    fb0: f64,
    xtol: f64,
    rtol: f64,
    ftol: f64,
    max_iter: usize,
    context: &str,
) -> Result<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa0, fb0);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootFailure {
            context: context.to_string(),
            detail: format!("no sign change on [{a}, {b}]: f = ({fa:e}, {fb:e})"),
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = b - a;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * (xtol + rtol * b.abs());
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 || (ftol > 0.0 && fb.abs() <= ftol) {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic / secant step
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::RootFailure {
        context: context.to_string(),
        detail: format!("no convergence after {max_iter} iterations (f(b) = {fb:e})"),
    })
}
