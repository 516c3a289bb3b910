//! Radial profiles: regular solutions `u(r, a)`, the singular solution `u*`,
//! solutions `v(s, b)` of the limit problem, and the deviation `u(., a) - u*`.
//!
//! The state is `(u, w)` with the flux `w = r^alpha u'^beta`, so that
//! `u' = (w r^{-alpha})^{1/beta}` and `w' = r^{gamma-1}/f(u)`.

use crate::error::{invalid, Error, Result};
use crate::nonlinearity::{resolve_q, NonlinearTerm};
use crate::numerics;
use crate::ode::{self, Event, Options, Segment, Stop, Trajectory};
use crate::params::{l_from_q, OperatorParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Seed {
    Regular { a: f64 },
    Singular { eps: f64 },
    Limit { b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// Reached the requested end radius.
    RMax,
    /// Stopped where `u` reached the requested level.
    Level { r: f64, level: f64 },
    /// Stopped where `u` reached `u_bar`.
    UBar { r: f64 },
}

/// Integration settings beyond the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialOptions {
    pub rel_tol: f64,
    /// Stop at the first radius where `u` reaches this value.
    pub stop_at_level: Option<f64>,
    /// Treat reaching `u_bar` as a normal stop instead of an error.
    pub stop_at_u_bar: bool,
}

impl RadialOptions {
    pub fn new(rel_tol: f64) -> Self {
        RadialOptions { rel_tol, stop_at_level: None, stop_at_u_bar: false }
    }
}

/// A monotone solution curve with its dense output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    pub params: OperatorParams,
    pub seed: Seed,
    pub rel_tol: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub w: Vec<f64>,
    pub termination: Termination,
    /// Singular seeds only: sup relative change of the profile when `eps` is halved.
    pub seed_sensitivity: Option<f64>,
    #[serde(skip)]
    segments: Vec<Segment<2>>,
}

impl RadialProfile {
    pub fn r_first(&self) -> f64 {
        self.r[0]
    }
    pub fn r_last(&self) -> f64 {
        *self.r.last().unwrap()
    }
    pub fn len(&self) -> usize {
        self.r.len()
    }
    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
    /// False for profiles read back from JSON or CSV.
    pub fn has_dense_output(&self) -> bool {
        !self.segments.is_empty()
    }

    fn state_at(&self, r: f64) -> Option<[f64; 2]> {
        if !(r >= self.r_first() && r <= self.r_last()) {
            return None;
        }
        if r == self.r_last() {
            return Some([*self.u.last().unwrap(), *self.w.last().unwrap()]);
        }
        if self.segments.is_empty() {
            return None;
        }
        let i = self.segments.partition_point(|s| s.x0 <= r);
        Some(self.segments[i.saturating_sub(1)].eval(r))
    }

    pub fn u_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| s[0])
    }
    pub fn w_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| s[1])
    }
    pub fn du_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| slope(&self.params, r, s[1]))
    }
    /// `dw/dr` from differentiating the dense output.
    pub fn dw_dense(&self, r: f64) -> Option<f64> {
        if !(r >= self.r_first() && r < self.r_last()) || self.segments.is_empty() {
            return None;
        }
        let i = self.segments.partition_point(|s| s.x0 <= r);
        Some(self.segments[i.saturating_sub(1)].deriv(r)[1])
    }
    pub(crate) fn segments(&self) -> &[Segment<2>] {
        &self.segments
    }
}

fn slope(p: &OperatorParams, r: f64, w: f64) -> f64 {
    ((w.ln() - p.alpha * r.ln()) / p.beta).exp()
}

fn rhs<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, r: f64, y: &[f64; 2]) -> [f64; 2] {
    let lr = r.ln();
    let du = if y[1] > 0.0 { ((y[1].ln() - p.alpha * lr) / p.beta).exp() } else { f64::NAN };
    let dw = ((p.gamma - 1.0) * lr - p.beta * nl.ln_g(y[0])).exp();
    [du, dw]
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if !(1e-13..=1e-6).contains(&rel_tol) {
        return Err(invalid(format!("rel_tol must lie in [1e-13, 1e-6], got {rel_tol}")));
    }
    Ok(())
}

/// Frozen-coefficient seed of a regular solution: `(u, w)` at radius `r`.
pub fn regular_seed<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, a: f64, r: f64) -> [f64; 2] {
    let th = p.theta();
    let ln_gf = p.gamma.ln() + p.beta * nl.ln_g(a);
    let u = a + (th * r.ln() - th.ln() - ln_gf / p.beta).exp();
    let w = (p.gamma * r.ln() - ln_gf).exp();
    [u, w]
}

/// Seed radius of a regular solution: the radius at which the frozen-coefficient
/// increment equals `1e-8 |a|`. Small enough for the seed error to sit below
/// rounding, large enough for `u` to move by more than an ulp per step.
pub fn regular_seed_radius<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, a: f64) -> f64 {
    let th = p.theta();
    let scale = if nl.domain().0.is_finite() { a.abs() } else { a.abs().max(1.0) };
    let ln_gf = p.gamma.ln() + p.beta * nl.ln_g(a);
    (((1e-8 * scale).ln() + th.ln() + ln_gf / p.beta) / th).exp()
}

/// Leading-order singular seed `(u, w)` at radius `eps`.
pub fn singular_seed<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, eps: f64, a_amp: f64) -> Result<[f64; 2]> {
    let th = p.theta();
    let u = nl.big_g_inverse_ln(th * eps.ln() - a_amp.ln())?;
    let ln_du = th.ln() + (th - 1.0) * eps.ln() - a_amp.ln() - nl.ln_g(u);
    Ok([u, (p.alpha * eps.ln() + p.beta * ln_du).exp()])
}

/// `A` for a nonlinearity, using its closed `q` when available.
pub fn amplitude_for<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N) -> Result<f64> {
    Ok(p.amplitude(l_from_q(resolve_q(nl)?)))
}

fn integrate_from<N: NonlinearTerm + ?Sized>(
    p: &OperatorParams,
    nl: &N,
    r0: f64,
    y0: [f64; 2],
    r_max: f64,
    seed: Seed,
    opts: &RadialOptions,
) -> Result<RadialProfile> {
    p.validate()?;
    if !(r_max > r0) {
        return Err(invalid(format!("r_max = {r_max} must exceed the seed radius {r0}")));
    }
    let (lower, u_bar) = nl.domain();
    let unbounded_below = !lower.is_finite();
    let rtol = opts.rel_tol;
    let norm = move |e: &[f64; 2], y0: &[f64; 2], y1: &[f64; 2]| {
        let mut su = y0[0].abs().max(y1[0].abs());
        if unbounded_below {
            su = su.max(1.0);
        }
        let sw = y0[1].abs().max(y1[1].abs());
        (e[0].abs() / (rtol * su)).max(e[1].abs() / (rtol * sw))
    };
    let mut o = Options::new(rtol);
    o.step_cap_rel = Some(0.25);
    o.h0 = Some(0.01 * r0);
    o.norm = Some(&norm);
    let mut events: Vec<Event<2>> = Vec::new();
    if u_bar.is_finite() {
        events.push(Event::terminal(move |_, y: &[f64; 2]| y[0] - u_bar));
    }
    let level = opts.stop_at_level;
    if let Some(l) = level {
        events.push(Event::terminal(move |_, y: &[f64; 2]| y[0] - l));
    }
    let traj: Trajectory<2> = ode::solve(|r, y| rhs(p, nl, r, y), r0, y0, r_max, &o, &events)?;
    let termination = match traj.stop {
        Stop::End => Termination::RMax,
        Stop::Event { index, x } => {
            let is_ubar = u_bar.is_finite() && index == 0;
            if is_ubar {
                if !opts.stop_at_u_bar {
                    return Err(Error::ReachedUpperBound { u_bar, r: x });
                }
                Termination::UBar { r: x }
            } else {
                Termination::Level { r: x, level: level.unwrap() }
            }
        }
    };
    let u: Vec<f64> = traj.y.iter().map(|y| y[0]).collect();
    let w: Vec<f64> = traj.y.iter().map(|y| y[1]).collect();
    let du = traj.x.iter().zip(&w).map(|(&r, &w)| slope(p, r, w)).collect();
    Ok(RadialProfile {
        params: *p,
        seed,
        rel_tol: rtol,
        r: traj.x,
        u,
        du,
        w,
        termination,
        seed_sensitivity: None,
        segments: traj.segments,
    })
}

/// Regular solution with `u(0) = a`.
pub fn integrate_regular<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    a: f64,
    r_max: f64,
    rel_tol: f64,
) -> Result<RadialProfile> {
    integrate_regular_with(params, nl, a, r_max, &RadialOptions::new(rel_tol))
}

pub fn integrate_regular_with<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    a: f64,
    r_max: f64,
    opts: &RadialOptions,
) -> Result<RadialProfile> {
    check_tol(opts.rel_tol)?;
    let (lower, u_bar) = nl.domain();
    if !(a > lower && a < u_bar) {
        return Err(invalid(format!("center value a = {a} must lie in ({lower}, {u_bar})")));
    }
    let r0 = regular_seed_radius(params, nl, a);
    let y0 = regular_seed(params, nl, a, r0);
    integrate_from(params, nl, r0, y0, r_max, Seed::Regular { a }, opts)
}

/// Singular solution seeded at `r = eps` by its leading-order asymptotics.
pub fn integrate_singular<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    eps: f64,
    r_max: f64,
    rel_tol: f64,
) -> Result<RadialProfile> {
    integrate_singular_with(params, nl, eps, r_max, &RadialOptions::new(rel_tol))
}

pub fn integrate_singular_with<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    eps: f64,
    r_max: f64,
    opts: &RadialOptions,
) -> Result<RadialProfile> {
    check_tol(opts.rel_tol)?;
    if !(eps > 0.0 && eps <= 1e-4 * r_max) {
        return Err(invalid(format!("need 0 < eps <= 1e-4 r_max (eps = {eps}, r_max = {r_max})")));
    }
    let a_amp = amplitude_for(params, nl)?;
    let run = |e: f64| {
        let y0 = singular_seed(params, nl, e, a_amp)?;
        integrate_from(params, nl, e, y0, r_max, Seed::Singular { eps }, opts)
    };
    let mut prof = run(eps)?;
    let half = run(0.5 * eps)?;
    let mut worst = 0.0f64;
    for (&r, &u) in prof.r.iter().zip(&prof.u) {
        if r < 10.0 * eps {
            continue;
        }
        if let Some(v) = half.u_at(r) {
            worst = worst.max((v / u - 1.0).abs());
        }
    }
    prof.seed_sensitivity = Some(worst);
    Ok(prof)
}

/// Solution `v(s, b)` of the limit problem with `v(0) = b`.
pub fn integrate_limit<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    limit_nl: &N,
    b: f64,
    s_max: f64,
    rel_tol: f64,
) -> Result<RadialProfile> {
    check_tol(rel_tol)?;
    let (lower, _) = limit_nl.domain();
    if !(b > lower) || !b.is_finite() {
        return Err(invalid(format!("limit center value b = {b} must exceed {lower}")));
    }
    let r0 = regular_seed_radius(params, limit_nl, b);
    let y0 = regular_seed(params, limit_nl, b, r0);
    integrate_from(params, limit_nl, r0, y0, s_max, Seed::Limit { b }, &RadialOptions::new(rel_tol))
}

/// `(delta_0, r_delta)`: regular solutions with `a < delta_0` stay below `delta` on `(0, r_delta)`.
pub fn safe_radius<N: NonlinearTerm + ?Sized>(params: &OperatorParams, nl: &N, delta: f64) -> Result<(f64, f64)> {
    params.validate()?;
    let (_, u_bar) = nl.domain();
    if !(delta > 0.0 && delta < u_bar.min(f64::MAX)) {
        return Err(invalid(format!("delta = {delta} must lie in (0, {u_bar})")));
    }
    let p = params;
    let d0 = 0.5 * delta / (1.0 + p.beta * p.kappa_grad() / (p.alpha - p.beta));
    let inner = 0.5 * delta * p.theta() * (p.gamma * nl.f(d0)).powf(1.0 / p.beta);
    Ok((d0, inner.powf(1.0 / p.theta())))
}

/// Largest relative defect of the flux identity
/// `w(r) = int_0^r s^{gamma-1}/f(u(s)) ds`, integrated independently on the dense output.
/// The integral starts from the seeded flux at the first node.
pub fn flux_defect<N: NonlinearTerm + ?Sized>(profile: &RadialProfile, nl: &N) -> Result<f64> {
    let p = profile.params;
    let mut acc = profile.w[0];
    let mut worst = 0.0f64;
    for (i, seg) in profile.segments().iter().enumerate() {
        let end = profile.r[i + 1];
        let part = numerics::integrate(
            |s| ((p.gamma - 1.0) * s.ln() - p.beta * nl.ln_g(seg.eval(s)[0])).exp(),
            seg.x0,
            end,
            1e-14,
            0.0,
        )?;
        acc += part;
        let w = profile.w[i + 1];
        worst = worst.max((w - acc).abs() / w);
    }
    Ok(worst)
}

/// Scaled residual `|r^{1-gamma} w'(r) f(u(r)) - 1|` at the midpoint of every
/// step, with `w'` from differentiating the dense output.
pub fn ode_residual<N: NonlinearTerm + ?Sized>(profile: &RadialProfile, nl: &N) -> f64 {
    let p = profile.params;
    let mut worst = 0.0f64;
    for seg in profile.segments() {
        let r = seg.x0 + 0.5 * seg.h;
        let y = seg.eval(r);
        let dw = seg.deriv(r)[1];
        let lhs = (dw.ln() + (1.0 - p.gamma) * r.ln() + p.beta * nl.ln_g(y[0])).exp();
        worst = worst.max((lhs - 1.0).abs());
    }
    worst
}

/// `min over nodes` of `G(u) - G(u(0)) - r^theta/(theta gamma^{1/beta})`
/// (with `G(u(0)) = 0` for singular seeds). Nonnegative when the lower bound holds.
pub fn lower_bound_margin<N: NonlinearTerm + ?Sized>(profile: &RadialProfile, nl: &N) -> Result<f64> {
    let p = profile.params;
    let th = p.theta();
    let g0 = match profile.seed {
        Seed::Regular { a } | Seed::Limit { b: a } => nl.big_g(a)?,
        Seed::Singular { .. } => 0.0,
    };
    let mut worst = f64::INFINITY;
    for (&r, &u) in profile.r.iter().zip(&profile.u) {
        let bound = r.powf(th) / (th * p.gamma.powf(1.0 / p.beta));
        let gu = nl.big_g(u)?;
        worst = worst.min((gu - g0 - bound) / gu.max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// `max over nodes` of `r u'/(kappa u)`; at most 1 by the gradient bound.
pub fn gradient_ratio(profile: &RadialProfile) -> f64 {
    let kappa = profile.params.kappa_grad();
    profile
        .r
        .iter()
        .zip(&profile.u)
        .zip(&profile.du)
        .map(|((&r, &u), &du)| r * du / (kappa * u))
        .fold(0.0, f64::max)
}

/// Joint integration of the singular solution and of the deviation
/// `delta = u(., a) - u*`, `dw = w(., a) - w*`.
///
/// The deviation obeys its own equations, written with `expm1`/`ln_1p` so that
/// it keeps full relative accuracy long after `u(., a)` and `u*` agree to
/// every printed digit.
#[derive(Debug, Clone)]
pub struct DeviationProfile {
    pub params: OperatorParams,
    pub a: f64,
    pub rel_tol: f64,
    pub r: Vec<f64>,
    pub u_star: Vec<f64>,
    pub w_star: Vec<f64>,
    pub delta: Vec<f64>,
    pub dw: Vec<f64>,
    pub termination: Termination,
    segments: Vec<Segment<4>>,
}

impl DeviationProfile {
    pub fn r_first(&self) -> f64 {
        self.r[0]
    }
    pub fn r_last(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// `(u*, w*, delta, dw)` at `r`.
    pub fn state_at(&self, r: f64) -> Option<[f64; 4]> {
        if !(r >= self.r_first() && r <= self.r_last()) {
            return None;
        }
        if r == self.r_last() {
            let n = self.r.len() - 1;
            return Some([self.u_star[n], self.w_star[n], self.delta[n], self.dw[n]]);
        }
        let i = self.segments.partition_point(|s| s.x0 <= r);
        Some(self.segments[i.saturating_sub(1)].eval(r))
    }

    pub fn delta_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| s[2])
    }

    /// `u'(r, a) - u*'(r)`, accurate in the relative sense.
    pub fn d_slope_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| {
            let du = slope(&self.params, r, s[1]);
            du * ((s[3] / s[1]).ln_1p() / self.params.beta).exp_m1()
        })
    }

    /// `u*'(r)`.
    pub fn du_star_at(&self, r: f64) -> Option<f64> {
        self.state_at(r).map(|s| slope(&self.params, r, s[1]))
    }
}

/// Integrates `u*` and `u(., a) - u*` together from a common tiny radius.
pub fn integrate_deviation<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    a: f64,
    r_max: f64,
    opts: &RadialOptions,
) -> Result<DeviationProfile> {
    check_tol(opts.rel_tol)?;
    params.validate()?;
    let (lower, u_bar) = nl.domain();
    if !(a > lower.max(0.0) && a < u_bar) {
        return Err(invalid(format!("center value a = {a} must lie in (0, {u_bar})")));
    }
    let p = *params;
    let a_amp = amplitude_for(params, nl)?;
    // The singular seed is only leading order, so start no later than 1e-8.
    let r0 = regular_seed_radius(params, nl, a).min(1e-8);
    if !(r_max > r0) {
        return Err(invalid(format!("r_max = {r_max} must exceed the seed radius {r0}")));
    }
    let s = singular_seed(params, nl, r0, a_amp)?;
    let reg = regular_seed(params, nl, a, r0);
    let y0 = [s[0], s[1], reg[0] - s[0], reg[1] - s[1]];
    let ib = 1.0 / p.beta;
    let f = |r: f64, y: &[f64; 4]| -> [f64; 4] {
        let [us, ws, d, dw] = *y;
        let lr = r.ln();
        let dus = if ws > 0.0 { ((ws.ln() - p.alpha * lr) * ib).exp() } else { f64::NAN };
        let dws = ((p.gamma - 1.0) * lr - p.beta * nl.ln_g(us)).exp();
        let dd = dus * ((dw / ws).ln_1p() * ib).exp_m1();
        let ddw = dws * (-p.beta * nl.ln_g_shift(us, d)).exp_m1();
        [dus, dws, dd, ddw]
    };
    let rtol = opts.rel_tol;
    let norm = move |e: &[f64; 4], y0: &[f64; 4], y1: &[f64; 4]| {
        let su = y0[0].abs().max(y1[0].abs());
        let sw = y0[1].abs().max(y1[1].abs());
        let amp = (y0[2].abs() / y0[0].abs())
            .max(y1[2].abs() / y1[0].abs())
            .max(y0[3].abs() / y0[1].abs())
            .max(y1[3].abs() / y1[1].abs());
        let e_base = (e[0].abs() / su).max(e[1].abs() / sw);
        let e_dev = (e[2].abs() / su).max(e[3].abs() / sw) / amp;
        e_base.max(e_dev) / rtol
    };
    let mut o = Options::new(rtol);
    o.step_cap_rel = Some(0.25);
    o.h0 = Some(0.01 * r0);
    o.norm = Some(&norm);
    let mut events: Vec<Event<4>> = Vec::new();
    if u_bar.is_finite() {
        events.push(Event::terminal(move |_, y: &[f64; 4]| y[0].max(y[0] + y[2]) - u_bar));
    }
    let level = opts.stop_at_level;
    if let Some(l) = level {
        events.push(Event::terminal(move |_, y: &[f64; 4]| y[0].min(y[0] + y[2]) - l));
    }
    let traj = ode::solve(f, r0, y0, r_max, &o, &events)?;
    let termination = match traj.stop {
        Stop::End => Termination::RMax,
        Stop::Event { index, x } => {
            if u_bar.is_finite() && index == 0 {
                if !opts.stop_at_u_bar {
                    return Err(Error::ReachedUpperBound { u_bar, r: x });
                }
                Termination::UBar { r: x }
            } else {
                Termination::Level { r: x, level: level.unwrap() }
            }
        }
    };
    let col = |k: usize| traj.y.iter().map(|y| y[k]).collect::<Vec<f64>>();
    Ok(DeviationProfile {
        params: p,
        a,
        rel_tol: rtol,
        u_star: col(0),
        w_star: col(1),
        delta: col(2),
        dw: col(3),
        r: traj.x,
        termination,
        segments: traj.segments,
    })
}
