//! The nonlinear term `f = g^beta`: built-in families, the limit nonlinearity,
//! and the limits `q` and `L` that drive the asymptotics.
//!
//! Everything is evaluated through `ln g` so that families with an essential
//! zero at the origin stay representable down to `u ~ 1e-3` and below.

use crate::error::{invalid, Error, Result};
use crate::numerics;
use serde::{Deserialize, Serialize};

/// A nonlinearity `g = f^{1/beta}` on its domain `(lower, u_bar)`.
///
/// Only `ln g` and the logarithmic derivatives are required. The primitive
/// `G(u) = int_lower^u g` and its inverse default to quadrature and root
/// finding; families with closed forms override them.
pub trait NonlinearTerm: Send + Sync {
    fn beta(&self) -> f64;
    /// `(lower, u_bar)`. `lower` is `0` except for the exponential limit nonlinearity.
    fn domain(&self) -> (f64, f64);
    fn ln_g(&self, u: f64) -> f64;
    /// `g'/g`.
    fn dlng(&self, u: f64) -> f64;
    /// `g''/g`.
    fn d2g_over_g(&self, u: f64) -> f64;

    /// Closed-form value of `q`, when known.
    fn q_limit(&self) -> Option<f64> {
        None
    }

    /// `ln g(u + delta) - ln g(u)`. Families override this with a form that
    /// keeps full relative accuracy when `delta` is tiny.
    fn ln_g_shift(&self, u: f64, delta: f64) -> f64 {
        self.ln_g(u + delta) - self.ln_g(u)
    }

    /// `G(u)/g(u)`.
    fn primitive_ratio(&self, u: f64) -> Result<f64> {
        quadrature_ratio(self, u)
    }

    /// `ln G(u + delta) - ln G(u)`, accurate for tiny `delta`.
    fn ln_big_g_shift(&self, u: f64, delta: f64) -> Result<f64> {
        quadrature_shift(self, u, delta)
    }

    /// `G^{-1}(e^{ln_w})`; the log form reaches values of `G` below the
    /// smallest positive double.
    fn big_g_inverse_ln(&self, ln_w: f64) -> Result<f64> {
        default_inverse(self, ln_w)
    }

    /// `G^{-1}(w)` for `w > 0`.
    fn big_g_inverse(&self, w: f64) -> Result<f64> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("G^-1 needs a finite w > 0, got {w}")));
        }
        self.big_g_inverse_ln(w.ln())
    }

    fn g(&self, u: f64) -> f64 {
        self.ln_g(u).exp()
    }
    fn f(&self, u: f64) -> f64 {
        (self.beta() * self.ln_g(u)).exp()
    }
    fn dg(&self, u: f64) -> f64 {
        self.g(u) * self.dlng(u)
    }
    fn d2g(&self, u: f64) -> f64 {
        self.g(u) * self.d2g_over_g(u)
    }
    fn ln_big_g(&self, u: f64) -> Result<f64> {
        Ok(self.ln_g(u) + self.primitive_ratio(u)?.ln())
    }
    fn big_g(&self, u: f64) -> Result<f64> {
        Ok(self.ln_big_g(u)?.exp())
    }
    /// `g'^2/(g g'')`.
    fn q_ratio(&self, u: f64) -> f64 {
        let d = self.dlng(u);
        d * d / self.d2g_over_g(u)
    }
    /// `g' G/g^2`.
    fn l_ratio(&self, u: f64) -> Result<f64> {
        Ok(self.dlng(u) * self.primitive_ratio(u)?)
    }
}

fn quadrature_ratio<N: NonlinearTerm + ?Sized>(nl: &N, u: f64) -> Result<f64> {
    let (lower, upper) = nl.domain();
    if !(u > lower && u <= upper) || !lower.is_finite() {
        return Err(Error::Domain(format!("G(u) needs u in ({lower}, {upper}], got {u}")));
    }
    // Integrand g(s)/g(u) = exp(ln_g_shift). It is increasing, so everything
    // left of the point where it drops below 1e-300 is negligible.
    // Work in the offset x = s - u in (lower - u, 0].
    let h = |x: f64| nl.ln_g_shift(u, x);
    const CUT: f64 = -690.0;
    let mut start = lower - u;
    if !(h(start * (1.0 - 1e-15)) > CUT) {
        let (mut lo, mut hi) = (start, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = h(mid);
            if v.is_nan() || v < CUT {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        start = lo;
    }
    numerics::integrate(|x| h(x).exp(), start, 0.0, 1e-13, 0.0)
}

fn quadrature_shift<N: NonlinearTerm + ?Sized>(nl: &N, u: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Ok(0.0);
    }
    if nl.ln_g_shift(u, delta).abs() > 1.0 {
        // No cancellation to protect against.
        return Ok(nl.ln_big_g(u + delta)? - nl.ln_big_g(u)?);
    }
    let rho = nl.primitive_ratio(u)?;
    // Integrate over the offset so that tiny shifts keep full relative accuracy.
    let part = numerics::integrate(|x| nl.ln_g_shift(u, x).exp(), 0.0, delta, 1e-14, 0.0)?;
    Ok((part / rho).ln_1p())
}

fn default_inverse<N: NonlinearTerm + ?Sized>(nl: &N, target: f64) -> Result<f64> {
    if target.is_nan() || target == f64::INFINITY {
        return Err(Error::Domain(format!("G^-1 needs a finite ln w, got {target}")));
    }
    let w = target;
    let (lower, upper) = nl.domain();
    let lg = |u: f64| nl.ln_big_g(u);
    let mut hi = if upper.is_finite() { 0.5 * (lower.max(0.0) + upper) } else { 1.0 };
    let mut lo = hi;
    let mut guard = 0;
    while lg(lo)? > target {
        lo = if lower.is_finite() { lower + 0.5 * (lo - lower) } else { lo - 2.0 * lo.abs().max(1.0) };
        guard += 1;
        if guard > 3000 {
            return Err(Error::Root(format!("cannot bracket G^-1(e^{w}) from below")));
        }
    }
    while lg(hi)? < target {
        if upper.is_finite() {
            let next = upper - 0.5 * (upper - hi);
            if next >= upper || guard > 3000 {
                return Err(Error::Domain(format!("G^-1(e^{w}) lies beyond u_bar = {upper}")));
            }
            hi = next;
        } else {
            hi *= 2.0;
        }
        guard += 1;
        if guard > 6000 {
            return Err(Error::Root(format!("cannot bracket G^-1(e^{w}) from above")));
        }
    }
    if lo == hi {
        return Ok(lo);
    }
    numerics::safeguarded_newton(
        |u| match nl.primitive_ratio(u) {
            Ok(rho) => (nl.ln_g(u) + rho.ln() - target, 1.0 / rho),
            Err(_) => (f64::NAN, f64::NAN),
        },
        lo,
        hi,
        0.5 * (lo + hi),
        1e-15,
    )
}

/// The built-in families. `m`, `d`, `c` are the parameters of `f`, not of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `f(u) = u^m`, `m > beta`.
    Power { m: f64 },
    /// `f(u) = u^m |ln u - C|^d`, `m > beta`, `d >= 0`, used for `u < e^C`.
    PowerLog {
        m: f64,
        d: f64,
        #[serde(rename = "C")]
        c: f64,
    },
    /// `f(u) = exp(-u^{-m})`, `m > 0`.
    ExpInv { m: f64 },
    /// `f(u) = exp(-e^{1/u})`.
    DoubleExp,
}

/// A built-in family together with the operator's `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub family: Family,
    pub beta: f64,
    /// End of the interval on which `g' > 0` and `g'' > 0` hold.
    pub u_bar: f64,
    pub q_closed: f64,
}

impl Nonlinearity {
    pub fn new(family: Family, beta: f64) -> Result<Self> {
        if !(beta >= 1.0) || !beta.is_finite() {
            return Err(invalid(format!("require beta >= 1 (got {beta})")));
        }
        let (u_bar, q_closed) = match family {
            Family::Power { m } => {
                if !(m > beta) || !m.is_finite() {
                    return Err(invalid(format!("power family needs m > beta (got m = {m}, beta = {beta})")));
                }
                (f64::INFINITY, m / (m - beta))
            }
            Family::PowerLog { m, d, c } => {
                if !(m > beta) || !m.is_finite() {
                    return Err(invalid(format!("power_log family needs m > beta (got m = {m}, beta = {beta})")));
                }
                if !(d >= 0.0) || !d.is_finite() || !c.is_finite() {
                    return Err(invalid(format!("power_log family needs d >= 0 and finite C (got d = {d}, C = {c})")));
                }
                (power_log_u_bar(m / beta, d / beta, c), m / (m - beta))
            }
            Family::ExpInv { m } => {
                if !(m > 0.0) || !m.is_finite() {
                    return Err(invalid(format!("exp_inv family needs m > 0 (got {m})")));
                }
                ((m / (beta * (m + 1.0))).powf(1.0 / m), 1.0)
            }
            Family::DoubleExp => (double_exp_u_bar(beta)?, 1.0),
        };
        Ok(Nonlinearity { family, beta, u_bar, q_closed })
    }

    pub fn power(m: f64, beta: f64) -> Result<Self> {
        Self::new(Family::Power { m }, beta)
    }
}

/// Largest `y = C - ln u` at which `g'` or `g''` can vanish, with `P = m/beta`, `k = d/beta`.
fn power_log_u_bar(p: f64, k: f64, c: f64) -> f64 {
    if k == 0.0 {
        return f64::INFINITY;
    }
    // g''/g * u^2 y^2 = P(P-1) y^2 - k(2P-1) y + k(k-1)
    let qa = p * (p - 1.0);
    let qb = -k * (2.0 * p - 1.0);
    let qc = k * (k - 1.0);
    let mut y_crit = k / p;
    if qa > 0.0 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            y_crit = y_crit.max((-qb + disc.sqrt()) / (2.0 * qa));
        }
    } else if qa == 0.0 && qb != 0.0 {
        y_crit = y_crit.max(-qc / qb);
    }
    (c - y_crit).exp()
}

/// Root of `e^{1/u}/beta = 1 + 2u`: below it `g'' > 0`.
fn double_exp_u_bar(beta: f64) -> Result<f64> {
    let h = |u: f64| (1.0 / u).exp() / beta - 1.0 - 2.0 * u;
    let mut hi = 1.0;
    while h(hi) > 0.0 {
        hi *= 2.0;
    }
    numerics::brent(h, 1e-3, hi, 1e-15)
}

impl NonlinearTerm for Nonlinearity {
    fn beta(&self) -> f64 {
        self.beta
    }
    fn domain(&self) -> (f64, f64) {
        (0.0, self.u_bar)
    }
    fn q_limit(&self) -> Option<f64> {
        Some(self.q_closed)
    }

    fn ln_g(&self, u: f64) -> f64 {
        let c = 1.0 / self.beta;
        match self.family {
            Family::Power { m } => c * m * u.ln(),
            Family::PowerLog { m, d, c: cc } => {
                let k = d * c;
                let base = c * m * u.ln();
                if k == 0.0 { base } else { base + k * (cc - u.ln()).ln() }
            }
            Family::ExpInv { m } => -c * u.powf(-m),
            Family::DoubleExp => -c * (1.0 / u).exp(),
        }
    }

    fn dlng(&self, u: f64) -> f64 {
        let c = 1.0 / self.beta;
        match self.family {
            Family::Power { m } => c * m / u,
            Family::PowerLog { m, d, c: cc } => {
                let (p, k) = (c * m, c * d);
                let y = cc - u.ln();
                (p * y - k) / (u * y)
            }
            Family::ExpInv { m } => c * m * u.powf(-m - 1.0),
            Family::DoubleExp => c * (1.0 / u).exp() / (u * u),
        }
    }

    fn d2g_over_g(&self, u: f64) -> f64 {
        let c = 1.0 / self.beta;
        match self.family {
            Family::Power { m } => {
                let p = c * m;
                p * (p - 1.0) / (u * u)
            }
            Family::PowerLog { m, d, c: cc } => {
                let (p, k) = (c * m, c * d);
                let y = cc - u.ln();
                (p * (p - 1.0) * y * y - k * (2.0 * p - 1.0) * y + k * (k - 1.0)) / (u * u * y * y)
            }
            Family::ExpInv { m } => {
                let d1 = self.dlng(u);
                d1 * d1 - c * m * (m + 1.0) * u.powf(-m - 2.0)
            }
            Family::DoubleExp => {
                let e = (1.0 / u).exp();
                c * e * (c * e - 1.0 - 2.0 * u) / u.powi(4)
            }
        }
    }

    fn ln_g_shift(&self, u: f64, delta: f64) -> f64 {
        let c = 1.0 / self.beta;
        let x = (delta / u).ln_1p();
        match self.family {
            Family::Power { m } => c * m * x,
            Family::PowerLog { m, d, c: cc } => {
                let k = c * d;
                let base = c * m * x;
                if k == 0.0 { base } else { base + k * (-x / (cc - u.ln())).ln_1p() }
            }
            Family::ExpInv { m } => -c * u.powf(-m) * (-m * x).exp_m1(),
            Family::DoubleExp => -c * (1.0 / u).exp() * (-delta / (u * (u + delta))).exp_m1(),
        }
    }

    fn primitive_ratio(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= self.u_bar) {
            return Err(Error::Domain(format!("G(u) needs u in (0, {}], got {u}", self.u_bar)));
        }
        let c = 1.0 / self.beta;
        match self.family {
            Family::Power { m } => Ok(u / (c * m + 1.0)),
            Family::PowerLog { m, d, c: cc } => {
                let (p, k) = (c * m, c * d);
                if k == 0.0 {
                    return Ok(u / (p + 1.0));
                }
                // G = u^{P+1} y^{k+1} S(k+1, (P+1)y) with S the scaled upper incomplete gamma.
                let y = cc - u.ln();
                Ok(u * y * numerics::upper_gamma_scaled(k + 1.0, (p + 1.0) * y)?)
            }
            Family::ExpInv { m } => {
                // Substituting x = c s^{-m}: G = (c^{1/m}/m) Gamma(-1/m, c u^{-m}).
                let x = c * u.powf(-m);
                Ok(u / m * numerics::upper_gamma_scaled(-1.0 / m, x)?)
            }
            Family::DoubleExp => {
                // With x = ln g(u) - ln g(s) the inverse is explicit,
                // 1/s = 1/u + ln(1 + x/(cE)), and G/g = int_0^inf e^{-x} s^2/(cE + x) dx.
                let ce = c * (1.0 / u).exp();
                if !ce.is_finite() {
                    return Err(Error::Domain(format!("double_exp is not representable at u = {u}")));
                }
                numerics::integrate(
                    |x| {
                        let s = 1.0 / (1.0 / u + (x / ce).ln_1p());
                        (-x).exp() * s * s / (ce + x)
                    },
                    0.0,
                    50.0,
                    1e-14,
                    0.0,
                )
            }
        }
    }

    fn ln_big_g_shift(&self, u: f64, delta: f64) -> Result<f64> {
        match self.family {
            Family::Power { m } => Ok((m / self.beta + 1.0) * (delta / u).ln_1p()),
            _ => quadrature_shift(self, u, delta),
        }
    }

    fn big_g_inverse_ln(&self, ln_w: f64) -> Result<f64> {
        match self.family {
            Family::Power { m } => {
                if !ln_w.is_finite() {
                    return Err(Error::Domain(format!("G^-1 needs a finite ln w, got {ln_w}")));
                }
                let p1 = m / self.beta + 1.0;
                Ok(((p1.ln() + ln_w) / p1).exp())
            }
            _ => default_inverse(self, ln_w),
        }
    }
}

/// The nonlinearity of the limit problem: `u^p` with `p = q/(q-1)` for `q > 1`,
/// and `e^u` (on the whole line) for `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitNonlinearity {
    pub q: f64,
    pub beta: f64,
}

impl LimitNonlinearity {
    pub fn new(q: f64, beta: f64) -> Result<Self> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(invalid(format!("limit nonlinearity needs finite q >= 1 (got {q})")));
        }
        if !(beta >= 1.0) {
            return Err(invalid(format!("require beta >= 1 (got {beta})")));
        }
        Ok(LimitNonlinearity { q, beta })
    }

    pub fn is_exponential(&self) -> bool {
        self.q == 1.0
    }

    /// `p = q/(q-1)`; infinite for the exponential case.
    pub fn p(&self) -> f64 {
        if self.is_exponential() { f64::INFINITY } else { self.q / (self.q - 1.0) }
    }
}

impl NonlinearTerm for LimitNonlinearity {
    fn beta(&self) -> f64 {
        self.beta
    }
    fn domain(&self) -> (f64, f64) {
        if self.is_exponential() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (0.0, f64::INFINITY)
        }
    }
    fn q_limit(&self) -> Option<f64> {
        Some(self.q)
    }
    fn ln_g(&self, u: f64) -> f64 {
        if self.is_exponential() { u } else { self.p() * u.ln() }
    }
    fn dlng(&self, u: f64) -> f64 {
        if self.is_exponential() { 1.0 } else { self.p() / u }
    }
    fn d2g_over_g(&self, u: f64) -> f64 {
        if self.is_exponential() {
            1.0
        } else {
            let p = self.p();
            p * (p - 1.0) / (u * u)
        }
    }
    fn ln_g_shift(&self, u: f64, delta: f64) -> f64 {
        if self.is_exponential() { delta } else { self.p() * (delta / u).ln_1p() }
    }
    fn primitive_ratio(&self, u: f64) -> Result<f64> {
        if self.is_exponential() {
            Ok(1.0)
        } else if u > 0.0 {
            Ok(u / (self.p() + 1.0))
        } else {
            Err(Error::Domain(format!("G_q(u) needs u > 0, got {u}")))
        }
    }
    fn ln_big_g_shift(&self, u: f64, delta: f64) -> Result<f64> {
        if self.is_exponential() {
            Ok(delta)
        } else {
            Ok((self.p() + 1.0) * (delta / u).ln_1p())
        }
    }
    fn big_g_inverse_ln(&self, ln_w: f64) -> Result<f64> {
        if !ln_w.is_finite() {
            return Err(Error::Domain(format!("G_q^-1 needs a finite ln w, got {ln_w}")));
        }
        if self.is_exponential() {
            Ok(ln_w)
        } else {
            let p1 = self.p() + 1.0;
            Ok(((p1.ln() + ln_w) / p1).exp())
        }
    }
}

/// Extrapolated limits of the `q` and `L` ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QlEstimate {
    pub q_hat: f64,
    pub l_hat: f64,
    /// When `q_hat` is 1: whether the q-ratio stayed `>= 1 - 1e-9` along the sequence.
    /// Always `true` otherwise.
    pub g3_flag: bool,
    /// `|l_hat - q_hat/(2 q_hat - 1)|`. Small for power-rate convergence;
    /// logarithmic corrections (power_log) leave it near 1e-4.
    pub l_gap: f64,
}

/// Estimates `q` and `L` from the ratios along a decreasing sequence of `u`.
pub fn estimate_q_l<N: NonlinearTerm + ?Sized>(nl: &N, u_seq: &[f64]) -> Result<QlEstimate> {
    if u_seq.len() < 4 {
        return Err(Error::InsufficientData("need at least 4 points".into()));
    }
    let (lo, hi) = nl.domain();
    for w in u_seq.windows(2) {
        if !(w[1] < w[0]) {
            return Err(invalid("u_seq must be strictly decreasing"));
        }
    }
    if !(u_seq[u_seq.len() - 1] > lo.max(0.0) && u_seq[0] < hi) {
        return Err(Error::Domain(format!("u_seq must lie in ({}, {hi})", lo.max(0.0))));
    }
    if u_seq[0] / u_seq[u_seq.len() - 1] < 1e3 * (1.0 - 1e-12) {
        return Err(Error::InsufficientData("u_seq must span at least 3 decades".into()));
    }
    let qs: Vec<f64> = u_seq.iter().map(|&u| nl.q_ratio(u)).collect();
    let ls = u_seq.iter().map(|&u| nl.l_ratio(u)).collect::<Result<Vec<f64>>>()?;
    let q_hat = extrapolate(&qs, "q")?;
    let l_hat = extrapolate(&ls, "L")?;
    let g3_flag = if (q_hat - 1.0).abs() < 1e-6 {
        qs.iter().all(|&q| q >= 1.0 - 1e-9)
    } else {
        true
    };
    let l_expect = q_hat / (2.0 * q_hat - 1.0);
    let l_gap = (l_hat - l_expect).abs();
    if l_gap > 1e-3 * (1.0 + l_expect) {
        return Err(Error::Consistency(format!(
            "L_hat = {l_hat} but q_hat/(2 q_hat - 1) = {l_expect}"
        )));
    }
    Ok(QlEstimate { q_hat, l_hat, g3_flag, l_gap })
}

fn extrapolate(xs: &[f64], what: &str) -> Result<f64> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::LimitNotDetected(format!("{what}-ratio not finite along the sequence")));
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let noise = 1e-12 * scale.max(1.0);
    let diffs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > noise).collect();
    if diffs.windows(2).any(|w| w[0].signum() != w[1].signum()) {
        return Err(Error::LimitNotDetected(format!("{what}-ratio is not monotone")));
    }
    let n = xs.len();
    Ok(numerics::aitken(xs[n - 3], xs[n - 2], xs[n - 1], noise))
}

/// `q` of a nonlinearity: the closed value when known, otherwise extrapolated
/// from the ratio on `u = 1e-2 .. 1e-10` times the top of the domain.
pub fn resolve_q<N: NonlinearTerm + ?Sized>(nl: &N) -> Result<f64> {
    if let Some(q) = nl.q_limit() {
        return Ok(q);
    }
    let top = nl.domain().1.min(1.0);
    Ok(estimate_q_l(nl, &log_space(1e-2 * top, 1e-10 * top, 9))?.q_hat)
}

/// Value of `lim_{s -> 0} s^theta / G(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum OriginLimit {
    Zero,
    Finite(f64),
    Infinite,
}

impl OriginLimit {
    /// `u'(0)` of the singular solution, when it is `C^1` at the origin.
    pub fn origin_slope(&self, a_amp: f64, theta: f64) -> Option<f64> {
        match *self {
            OriginLimit::Zero => Some(0.0),
            OriginLimit::Finite(v) => Some((v / a_amp).powf(1.0 / theta)),
            OriginLimit::Infinite => None,
        }
    }
}

/// Closed-form evaluation for the built-in families.
pub fn c1_origin_limit(nl: &Nonlinearity, theta: f64) -> Result<OriginLimit> {
    if !(theta > 1.0) {
        return Err(invalid(format!("require theta > 1 (got {theta})")));
    }
    let c = 1.0 / nl.beta;
    Ok(match nl.family {
        Family::Power { m } | Family::PowerLog { m, .. } => {
            let d = match nl.family {
                Family::PowerLog { d, .. } => d,
                _ => 0.0,
            };
            // G(s) ~ s^{P+1} |ln s|^{d/beta} / (P+1)
            let p1 = c * m + 1.0;
            if (theta - p1).abs() <= 1e-12 * p1 {
                if d > 0.0 { OriginLimit::Zero } else { OriginLimit::Finite(p1) }
            } else if theta > p1 {
                OriginLimit::Zero
            } else {
                OriginLimit::Infinite
            }
        }
        Family::ExpInv { .. } | Family::DoubleExp => OriginLimit::Infinite,
    })
}

/// Extrapolation of `s^theta/G(s)` along a decreasing sequence, for any nonlinearity.
pub fn c1_origin_limit_numeric<N: NonlinearTerm + ?Sized>(
    nl: &N,
    theta: f64,
    s_seq: &[f64],
) -> Result<OriginLimit> {
    if !(theta > 1.0) {
        return Err(invalid(format!("require theta > 1 (got {theta})")));
    }
    if s_seq.len() < 4 {
        return Err(Error::InsufficientData("need at least 4 points".into()));
    }
    if s_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("s_seq must be strictly decreasing"));
    }
    let vals = s_seq
        .iter()
        .map(|&s| Ok(theta * s.ln() - nl.ln_big_g(s)?))
        .collect::<Result<Vec<f64>>>()?;
    // Slope of ln(s^theta/G) against ln(1/s): tends to theta - (P+1) for power-like G,
    // grows without bound for G vanishing faster than any power.
    let slopes: Vec<f64> = vals
        .windows(2)
        .zip(s_seq.windows(2))
        .map(|(v, s)| (v[1] - v[0]) / (s[0] / s[1]).ln())
        .collect();
    let n = slopes.len();
    let last = slopes[n - 1];
    let d1 = slopes[n - 2] - slopes[n - 3];
    let d2 = last - slopes[n - 2];
    let limit = if d2.abs() < d1.abs() {
        numerics::aitken(slopes[n - 3], slopes[n - 2], last, 1e-12)
    } else if d2 == 0.0 {
        last
    } else {
        // Not contracting: only a steady drift in the direction of `last` is conclusive.
        if (d2 > 0.0) == (last > 0.0) { last } else { f64::NAN }
    };
    if limit > 1e-6 && last > 0.0 {
        Ok(OriginLimit::Infinite)
    } else if limit < -1e-6 && last < 0.0 {
        Ok(OriginLimit::Zero)
    } else if limit.abs() <= 1e-6 && last.abs() <= 1e-3 {
        let m = vals.len();
        let v = numerics::aitken(vals[m - 3], vals[m - 2], vals[m - 1], 1e-12);
        Ok(OriginLimit::Finite(v.exp()))
    } else {
        Err(Error::Undetermined(format!(
            "trend of s^theta/G(s) inconclusive (last log-slope {last})"
        )))
    }
}

/// Sampled check of `g' > 0` and `g'' > 0` at `n` log-spaced points in `(lo, hi)`.
pub fn check_g1<N: NonlinearTerm + ?Sized>(nl: &N, lo: f64, hi: f64, n: usize) -> Result<()> {
    for u in log_space(lo, hi, n) {
        let (d1, d2) = (nl.dlng(u), nl.d2g_over_g(u));
        if !(d1 > 0.0 && d2 > 0.0) {
            return Err(Error::Consistency(format!("(G1) fails at u = {u}: g'/g = {d1}, g''/g = {d2}")));
        }
    }
    Ok(())
}

/// `n` points geometrically spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_families(beta: f64) -> Vec<Nonlinearity> {
        vec![
            Nonlinearity::new(Family::Power { m: 2.0 * beta }, beta).unwrap(),
            Nonlinearity::new(Family::PowerLog { m: 1.5 * beta + 0.5, d: 1.0, c: 0.0 }, beta).unwrap(),
            Nonlinearity::new(Family::ExpInv { m: 1.0 }, beta).unwrap(),
            Nonlinearity::new(Family::ExpInv { m: 2.5 }, beta).unwrap(),
            Nonlinearity::new(Family::DoubleExp, beta).unwrap(),
        ]
    }

    fn check_top(nl: &Nonlinearity) -> f64 {
        nl.u_bar.min(1.0) * (1.0 - 1e-9)
    }

    /// Smallest `u` at which `g` is comfortably representable, floored at 1e-3.
    fn floor(nl: &Nonlinearity) -> f64 {
        let c = 1.0 / nl.beta;
        let u = match nl.family {
            Family::ExpInv { m } => (c / 500.0).powf(1.0 / m),
            Family::DoubleExp => 1.0 / (500.0 / c).ln(),
            _ => 0.0,
        };
        u.max(1e-3)
    }

    #[test]
    fn q_estimates() {
        let seq = log_space(1e-2, 1e-6, 9);
        let e = estimate_q_l(&Nonlinearity::power(2.0, 1.0).unwrap(), &seq).unwrap();
        assert!((e.q_hat - 2.0).abs() < 1e-10);
        let e = estimate_q_l(&Nonlinearity::power(3.0, 1.0).unwrap(), &seq).unwrap();
        assert!((e.q_hat - 1.5).abs() < 1e-10 && (e.l_hat - 0.75).abs() < 1e-9);
        assert!(e.l_gap < 1e-9);
        for m in [0.5, 1.0, 3.0] {
            let nl = Nonlinearity::new(Family::ExpInv { m }, 1.0).unwrap();
            let e = estimate_q_l(&nl, &log_space(1e-2, 1e-12, 11)).unwrap();
            assert!((e.q_hat - 1.0).abs() < 1e-6, "m = {m}: {e:?}");
            assert!(e.g3_flag);
        }
        // double_exp cannot span three decades inside its representable range;
        // the ratios themselves are already at 1 there.
        let nl = Nonlinearity::new(Family::DoubleExp, 1.0).unwrap();
        for u in [0.05, 0.02, 0.01] {
            assert!((nl.q_ratio(u) - 1.0).abs() < 1e-6);
            assert!((nl.l_ratio(u).unwrap() - 1.0).abs() < 1e-6);
        }
        let nl = Nonlinearity::new(Family::PowerLog { m: 2.0, d: 1.0, c: 0.0 }, 1.0).unwrap();
        let e = estimate_q_l(&nl, &log_space(1e-3, 1e-12, 10));
        // Log corrections decay only like 1/|ln u|; the extrapolation must still land near 2.
        let e = e.unwrap();
        assert!((e.q_hat - 2.0).abs() < 5e-2, "{e:?}");
    }

    #[test]
    fn q_estimate_rejects_short_sequences() {
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        assert!(estimate_q_l(&nl, &[1e-2, 1e-3, 1e-4]).is_err());
        assert!(estimate_q_l(&nl, &[1e-2, 5e-3, 2e-3, 1e-3]).is_err());
    }

    #[test]
    fn origin_limits() {
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        assert_eq!(c1_origin_limit(&nl, 2.0).unwrap(), OriginLimit::Infinite);
        assert_eq!(c1_origin_limit(&nl, 6.0).unwrap(), OriginLimit::Zero);
        assert_eq!(c1_origin_limit(&nl, 6.0).unwrap().origin_slope(1.0, 6.0), Some(0.0));
        assert_eq!(c1_origin_limit(&nl, 3.0).unwrap(), OriginLimit::Finite(3.0));
        let seq = log_space(1e-2, 1e-8, 7);
        assert_eq!(c1_origin_limit_numeric(&nl, 2.0, &seq).unwrap(), OriginLimit::Infinite);
        assert_eq!(c1_origin_limit_numeric(&nl, 6.0, &seq).unwrap(), OriginLimit::Zero);
        match c1_origin_limit_numeric(&nl, 3.0, &seq).unwrap() {
            OriginLimit::Finite(v) => assert!((v - 3.0).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
        for nl in [
            Nonlinearity::new(Family::ExpInv { m: 1.0 }, 1.0).unwrap(),
            Nonlinearity::new(Family::DoubleExp, 1.0).unwrap(),
        ] {
            assert_eq!(c1_origin_limit(&nl, 50.0).unwrap(), OriginLimit::Infinite);
            let seq = log_space(0.2, 1e-2, 6);
            assert_eq!(c1_origin_limit_numeric(&nl, 50.0, &seq).unwrap(), OriginLimit::Infinite);
        }
    }

    #[test]
    fn spec_examples() {
        let nl = Nonlinearity::power(2.0, 1.0).unwrap();
        assert!((nl.big_g(0.5).unwrap() - 0.125 / 3.0).abs() < 1e-16);
        assert!((nl.big_g_inverse(1.0 / 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((nl.big_g_inverse(nl.big_g(0.37).unwrap()).unwrap() - 0.37).abs() < 1e-12);
        assert!((nl.l_ratio(0.123).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let nl = Nonlinearity::new(Family::ExpInv { m: 1.0 }, 1.0).unwrap();
        assert!((nl.q_ratio(0.01) - 1.0 / 0.98).abs() < 1e-13);
        assert!((nl.big_g_inverse(nl.big_g(0.2).unwrap()).unwrap() - 0.2).abs() < 1e-10);
    }

    #[test]
    fn double_exp_ratio_against_plain_quadrature() {
        // Away from the boundary layer the generic route is still accurate.
        let nl = Nonlinearity::new(Family::DoubleExp, 1.0).unwrap();
        for u in [0.3, 0.5, 0.8] {
            let a = nl.primitive_ratio(u).unwrap();
            let b = quadrature_ratio(&nl, u).unwrap();
            assert!((a - b).abs() < 1e-11 * b, "{u}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_ratios_match_quadrature() {
        for beta in [1.0, 2.0] {
            for nl in all_families(beta) {
                for u in log_space(floor(&nl), check_top(&nl), 12) {
                    let closed = nl.primitive_ratio(u).unwrap();
                    let quad = quadrature_ratio(&nl, u).unwrap();
                    assert!((closed - quad).abs() < 1e-11 * quad, "{:?} u={u}: {closed} vs {quad}", nl.family);
                }
            }
        }
    }

    #[test]
    fn u_bar_values() {
        let nl = Nonlinearity::new(Family::ExpInv { m: 1.0 }, 1.0).unwrap();
        assert!((nl.u_bar - 0.5).abs() < 1e-15);
        let nl = Nonlinearity::new(Family::PowerLog { m: 2.0, d: 1.0, c: 0.0 }, 1.0).unwrap();
        assert!((nl.u_bar - (-1.5f64).exp()).abs() < 1e-15);
        let nl = Nonlinearity::new(Family::DoubleExp, 1.0).unwrap();
        assert!(((1.0 / nl.u_bar).exp() - 1.0 - 2.0 * nl.u_bar).abs() < 1e-12);
        // g'' changes sign at u_bar for the families with a finite one.
        for beta in [1.0, 3.0] {
            for nl in all_families(beta) {
                if nl.u_bar.is_finite() {
                    assert!(nl.d2g_over_g(nl.u_bar * (1.0 - 1e-6)) > 0.0);
                    assert!(nl.d2g_over_g(nl.u_bar * (1.0 + 1e-6)) <= 0.0 || nl.dlng(nl.u_bar * (1.0 + 1e-6)) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn g1_sampled() {
        for beta in [1.0, 1.5, 4.0] {
            for nl in all_families(beta) {
                check_g1(&nl, 1e-8, check_top(&nl), 1000).unwrap();
            }
        }
    }

    #[test]
    fn l_ratio_bounded_where_q_ratio_at_least_one() {
        for nl in all_families(1.0) {
            let grid = log_space(1e-3, check_top(&nl), 200);
            if grid.iter().all(|&u| nl.q_ratio(u) >= 1.0) {
                for &u in &grid {
                    assert!(nl.l_ratio(u).unwrap() <= 1.0 + 1e-9, "{:?} at {u}", nl.family);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for nl in all_families(1.0).into_iter().chain(all_families(2.0)) {
            let top = check_top(&nl);
            for _ in 0..100 {
                let u = rng.gen_range(0.05 * top..0.95 * top);
                let h = 1e-4 / nl.dlng(u).max(1.0 / u);
                let d1 = (nl.g(u + h) - nl.g(u - h)) / (2.0 * h);
                let h = 10.0 * h;
                let d2 = (nl.g(u + h) - 2.0 * nl.g(u) + nl.g(u - h)) / (h * h);
                assert!((nl.dg(u) - d1).abs() <= 1e-6 * nl.dg(u).abs(), "{:?} g' at {u}", nl.family);
                let scale = nl.g(u) * nl.dlng(u).powi(2);
                assert!((nl.d2g(u) - d2).abs() <= 1e-5 * nl.d2g(u).abs() + 1e-6 * scale, "{:?} g'' at {u}", nl.family);
            }
        }
    }

    #[test]
    fn stable_shifts_agree_with_direct_differences() {
        for nl in all_families(1.0) {
            let u = 0.5 * check_top(&nl);
            for delta in [1e-3 * u, -1e-3 * u, 1e-1 * u] {
                let direct = nl.ln_g(u + delta) - nl.ln_g(u);
                assert!((nl.ln_g_shift(u, delta) - direct).abs() < 1e-9 * direct.abs());
                let gdirect = nl.ln_big_g(u + delta).unwrap() - nl.ln_big_g(u).unwrap();
                let gs = nl.ln_big_g_shift(u, delta).unwrap();
                assert!((gs - gdirect).abs() < 1e-9 * gdirect.abs(), "{:?}: {gs} vs {gdirect}", nl.family);
            }
            // Tiny shift: first-order behaviour exact to high relative accuracy.
            let d = 1e-14 * u;
            let expect = d * nl.dlng(u);
            assert!((nl.ln_g_shift(u, d) - expect).abs() < 1e-9 * expect);
            let expect_g = d / nl.primitive_ratio(u).unwrap();
            let got = nl.ln_big_g_shift(u, d).unwrap();
            assert!((got - expect_g).abs() < 1e-9 * expect_g, "{:?}: {got} vs {expect_g}", nl.family);
        }
    }

    #[test]
    fn limit_nonlinearity() {
        let l = LimitNonlinearity::new(2.0, 1.0).unwrap();
        assert_eq!(l.p(), 2.0);
        assert!((l.big_g(3.0).unwrap() - 9.0).abs() < 1e-13);
        let e = LimitNonlinearity::new(1.0, 2.0).unwrap();
        assert!((e.big_g(-1.5).unwrap() - (-1.5f64).exp()).abs() < 1e-15);
        assert!((e.big_g_inverse(0.25).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        assert!(LimitNonlinearity::new(0.5, 1.0).is_err());
    }

    #[test]
    fn family_json() {
        let f: Family = serde_json::from_str(r#"{"family":"power","m":2.0}"#).unwrap();
        assert_eq!(f, Family::Power { m: 2.0 });
        let f: Family = serde_json::from_str(r#"{"family":"power_log","m":2.0,"d":1.0,"C":0.5}"#).unwrap();
        assert_eq!(f, Family::PowerLog { m: 2.0, d: 1.0, c: 0.5 });
        assert!(serde_json::from_str::<Family>(r#"{"family":"power","m":2.0,"x":1}"#).is_err());
        assert!(serde_json::from_str::<Family>(r#"{"family":"double_exp"}"#).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn g_inverse_round_trip(which in 0usize..5, beta in 1.0f64..3.0, frac in 0.0f64..1.0) {
            let nl = all_families(beta).swap_remove(which);
            let (lo, top) = (floor(&nl), check_top(&nl));
            let u = (lo.ln() + frac * (top / lo).ln()).exp();
            let w = nl.big_g(u).unwrap();
            let back = nl.big_g_inverse(w).unwrap();
            prop_assert!((back - u).abs() <= 1e-10 * u, "{:?}: {} vs {}", nl.family, back, u);
        }

        #[test]
        fn power_q_is_constant(m_over in 1.01f64..6.0, beta in 1.0f64..4.0, u in 1e-6f64..10.0) {
            let nl = Nonlinearity::power(m_over * beta, beta).unwrap();
            prop_assert!((nl.q_ratio(u) - nl.q_closed).abs() < 1e-10 * nl.q_closed);
        }
    }
}
