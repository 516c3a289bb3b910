//! Emden variables `e^z = A G(u) / r^theta`, `t = -ln r`, and the autonomous
//! limit system in the `(z, w = z_t)` plane.

use crate::error::{invalid, Error, Result};
use crate::integrator::{DeviationProfile, RadialProfile, Seed};
use crate::nonlinearity::NonlinearTerm;
use crate::ode::{self, Event, Options, Segment, Stop};
use crate::params::{l_from_q, OperatorParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    Profile { seed: Seed },
    Deviation { a: f64 },
    LimitPhase { q: f64, z0: f64, w0: f64 },
}

/// Samples of `(z, z_t, z_tt)` on an increasing `t` grid.
///
/// `ell` holds `g'G/g^2` at each node; it is the constant `L` on limit-phase traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdenTrace {
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub zt: Vec<f64>,
    pub ztt: Vec<f64>,
    pub ell: Vec<f64>,
    pub source: TraceSource,
    /// Nodes skipped because `G(u)` could not be evaluated.
    pub dropped: usize,
}

impl EmdenTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `(sup |z|, sup |z_t|)` over nodes with `t` in `[t_lo, t_hi]`.
    pub fn window_sup(&self, t_lo: f64, t_hi: f64) -> (f64, f64) {
        let mut out = (0.0f64, 0.0f64);
        for i in 0..self.t.len() {
            if self.t[i] >= t_lo && self.t[i] <= t_hi {
                out.0 = out.0.max(self.z[i].abs());
                out.1 = out.1.max(self.zt[i].abs());
            }
        }
        out
    }

    fn from_rows(mut rows: Vec<[f64; 5]>, source: TraceSource, dropped: usize) -> Self {
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
        EmdenTrace { t: col(0), z: col(1), zt: col(2), ztt: col(3), ell: col(4), source, dropped }
    }
}

/// Bounds of `z_t` along singular solutions: `(theta - kappa, theta)`.
pub fn zt_band(params: &OperatorParams) -> (f64, f64) {
    let th = params.theta();
    (th - params.kappa_grad(), th)
}

struct Node {
    z: f64,
    zt: f64,
    ztt: f64,
    ell: f64,
}

/// Transformed quantities at one radius. `r^2 u''` comes from the ODE itself.
fn node<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, ln_a: f64, r: f64, u: f64, du: f64) -> Option<Node> {
    let rho = nl.primitive_ratio(u).ok()?;
    if !(rho > 0.0 && rho.is_finite()) {
        return None;
    }
    let lr = r.ln();
    let ln_g = nl.ln_g(u);
    let z = ln_a + ln_g + rho.ln() - p.theta() * lr;
    let q = r * du / rho;
    let ell = nl.dlng(u) * rho;
    let ln_drive = (p.gamma + 1.0 - p.alpha) * lr - p.beta * ln_g - (p.beta - 1.0) * du.ln();
    let r2u2 = (ln_drive.exp() - p.alpha * r * du) / p.beta;
    let ztt = q + r2u2 / rho + q * q * (ell - 1.0);
    let out = Node { z, zt: p.theta() - q, ztt, ell };
    [out.z, out.zt, out.ztt, out.ell].iter().all(|v| v.is_finite()).then_some(out)
}

/// Nodewise Emden transform of a radial profile with amplitude `A(L)`.
pub fn to_emden<N: NonlinearTerm + ?Sized>(profile: &RadialProfile, nl: &N, l: f64) -> Result<EmdenTrace> {
    let p = &profile.params;
    p.validate()?;
    let ln_a = p.amplitude(l).ln();
    if !ln_a.is_finite() {
        return Err(invalid(format!("amplitude A(L) is not positive for L = {l}")));
    }
    let mut rows = Vec::with_capacity(profile.len());
    let mut dropped = 0;
    for i in 0..profile.len() {
        let (r, u, du) = (profile.r[i], profile.u[i], profile.du[i]);
        match node(p, nl, ln_a, r, u, du) {
            Some(n) if r > 0.0 => rows.push([-r.ln(), n.z, n.zt, n.ztt, n.ell]),
            _ => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::Domain("no node of the profile could be transformed".into()));
    }
    Ok(EmdenTrace::from_rows(rows, TraceSource::Profile { seed: profile.seed }, dropped))
}

/// Offset of the Emden variables of `u(., a)` from those of `u*`, taken from a
/// deviation run: `z - z*`, `z_t - z_t*`, `z_tt - z_tt*`. Since `z* = 0` for the
/// exact singular solution, this is the Emden trace of `u(., a)` with the
/// integration error of `u*` removed. It stays accurate long after `u(., a)`
/// and `u*` agree to every printed digit.
pub fn emden_offset<N: NonlinearTerm + ?Sized>(dev: &DeviationProfile, nl: &N, l: f64) -> Result<EmdenTrace> {
    let p = &dev.params;
    let ln_a = p.amplitude(l).ln();
    let ib = 1.0 / p.beta;
    let mut rows = Vec::with_capacity(dev.r.len());
    let mut dropped = 0;
    for i in 0..dev.r.len() {
        let (r, us, ws, d, dw) = (dev.r[i], dev.u_star[i], dev.w_star[i], dev.delta[i], dev.dw[i]);
        let dus = ((ws.ln() - p.alpha * r.ln()) * ib).exp();
        let rel_slope = ((dw / ws).ln_1p() * ib).exp_m1();
        let du = dus * (1.0 + rel_slope);
        let (Some(star), Some(full)) = (node(p, nl, ln_a, r, us, dus), node(p, nl, ln_a, r, us + d, du)) else {
            dropped += 1;
            continue;
        };
        let (Ok(zeta), Ok(rho_s)) = (nl.ln_big_g_shift(us, d), nl.primitive_ratio(us)) else {
            dropped += 1;
            continue;
        };
        // Q/Q* = (u'/u*') (rho*/rho), rho = G/g.
        let ln_rho_ratio = zeta - nl.ln_g_shift(us, d);
        let q_star = r * dus / rho_s;
        let dq = q_star * (rel_slope.ln_1p() - ln_rho_ratio).exp_m1();
        rows.push([-r.ln(), zeta, -dq, full.ztt - star.ztt, full.ell]);
    }
    if rows.is_empty() {
        return Err(Error::Domain("no node of the deviation run could be transformed".into()));
    }
    Ok(EmdenTrace::from_rows(rows, TraceSource::Deviation { a: dev.a }, dropped))
}

/// The remainder `T` at one node.
fn remainder(p: &OperatorParams, l: f64, b: f64, z: f64, zt: f64, ell: f64) -> f64 {
    let th = p.theta();
    (l - ell) * (zt - th).powi(2) + bracket(p, b, z, zt)
}

/// `b [1 - (1 - z_t/theta)^{1-beta}] e^{-beta z}`, evaluated without overflow
/// when both factors are extreme.
fn bracket(p: &OperatorParams, b: f64, z: f64, zt: f64) -> f64 {
    if p.beta == 1.0 {
        return 0.0;
    }
    let th = p.theta();
    let lx = (-zt / th).ln_1p();
    let ez = -p.beta * z;
    b * (ez.exp() - ((1.0 - p.beta) * lx + ez).exp())
}

/// Sup over the trace of the transformed equation's left side, each node
/// divided by `1 +` the largest magnitude among its terms.
pub fn emden_residual(trace: &EmdenTrace, params: &OperatorParams, l: f64) -> Result<f64> {
    if trace.len() < 5 {
        return Err(Error::InsufficientData(format!("residual needs >= 5 nodes, got {}", trace.len())));
    }
    let (a, b) = params.emden_coefficients(l);
    let mut worst = 0.0f64;
    for i in 0..trace.len() {
        let (z, zt, ztt) = (trace.z[i], trace.zt[i], trace.ztt[i]);
        let terms = [ztt, -a * zt, -b * (-params.beta * z).exp_m1(), (1.0 - l) * zt * zt, remainder(params, l, b, z, zt, trace.ell[i])];
        let scale = 1.0 + terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res: f64 = terms.iter().sum();
        worst = worst.max(res.abs() / scale);
    }
    Ok(worst)
}

/// Compact box for escape detection: `|z| <= z_max`, `|w| <= w_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBox {
    pub z_max: f64,
    pub w_max: f64,
}

impl PhaseBox {
    /// `|z| <= 20`, `|w| <= 2 theta`.
    pub fn default_for(params: &OperatorParams) -> Self {
        PhaseBox { z_max: 20.0, w_max: 2.0 * params.theta() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseOutcome {
    ConvergedToOrigin { t: f64 },
    Escaped { t: f64, z: f64, w: f64 },
    EndOfSpan,
    /// `1 - w/theta` reached zero (only possible for `beta > 1`).
    Singular { t: f64 },
}

/// A run of the limit system, with dense output.
#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub trace: EmdenTrace,
    pub outcome: PhaseOutcome,
    /// Times at which `z` changes sign, in the order they were crossed.
    pub z_crossings: Vec<f64>,
    /// +1 for forward runs, -1 when `t` decreases.
    dir: f64,
    segments: Vec<Segment<2>>,
    span: (f64, f64),
}

impl PhaseRun {
    /// `(z, w)` at `t` inside the integrated range.
    pub fn state_at(&self, t: f64) -> Option<[f64; 2]> {
        let s = self.dir * t;
        if self.segments.is_empty() || !(s >= self.span.0 && s <= self.span.1) {
            return None;
        }
        let i = self.segments.partition_point(|g| g.x0 <= s);
        Some(self.segments[i.saturating_sub(1)].eval(s))
    }

    /// `(t_start, t_stop)` in the direction of integration.
    pub fn t_range(&self) -> (f64, f64) {
        (self.dir * self.span.0, self.dir * self.span.1)
    }
}

/// Right side of the limit system.
pub fn limit_rhs(params: &OperatorParams, l: f64, z: f64, w: f64) -> [f64; 2] {
    let (a, b) = params.emden_coefficients(l);
    let wt = a * w + b * (-params.beta * z).exp_m1() - (1.0 - l) * w * w - bracket(params, b, z, w);
    [w, wt]
}

/// Integrates the limit system from `(z0, w0)` at `t_span.0` towards `t_span.1`
/// (either direction) inside the default box.
pub fn integrate_limit_phase(
    params: &OperatorParams,
    q: f64,
    z0: f64,
    w0: f64,
    t_span: (f64, f64),
    rel_tol: f64,
) -> Result<PhaseRun> {
    integrate_limit_phase_in(params, q, z0, w0, t_span, rel_tol, PhaseBox::default_for(params))
}

pub fn integrate_limit_phase_in(
    params: &OperatorParams,
    q: f64,
    z0: f64,
    w0: f64,
    t_span: (f64, f64),
    rel_tol: f64,
    bx: PhaseBox,
) -> Result<PhaseRun> {
    params.validate()?;
    if !(q >= 1.0) || !q.is_finite() {
        return Err(invalid(format!("q must be finite and >= 1, got {q}")));
    }
    if !(1e-14..=1e-3).contains(&rel_tol) {
        return Err(invalid(format!("rel_tol must lie in [1e-14, 1e-3], got {rel_tol}")));
    }
    if !(z0.is_finite() && w0.is_finite()) || t_span.0 == t_span.1 || !(t_span.0.is_finite() && t_span.1.is_finite()) {
        return Err(invalid("initial state and t_span must be finite with t_span.0 != t_span.1"));
    }
    let th = params.theta();
    let singular_guard = 1e-8;
    if params.beta > 1.0 && !(1.0 - w0 / th > singular_guard) {
        return Err(Error::Domain(format!("need 1 - w0/theta > 0 when beta > 1 (w0 = {w0}, theta = {th})")));
    }
    if !(z0.abs() < bx.z_max && w0.abs() < bx.w_max) {
        return Err(invalid("initial state lies outside the escape box"));
    }
    let l = l_from_q(q);
    let dir = if t_span.1 > t_span.0 { 1.0 } else { -1.0 };
    let f = |s: f64, y: &[f64; 2]| {
        let _ = s;
        let d = limit_rhs(params, l, y[0], y[1]);
        [dir * d[0], dir * d[1]]
    };
    let norm = move |e: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        let sc = a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs());
        let m = e[0].abs().max(e[1].abs());
        if sc > 0.0 {
            m / (rel_tol * sc)
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let mut o = Options::new(rel_tol);
    o.norm = Some(&norm);
    o.h0 = Some(1e-3);
    let beta = params.beta;
    let mut events: Vec<Event<2>> = vec![
        Event::terminal(move |_, y: &[f64; 2]| bx.z_max - y[0].abs()),
        Event::terminal(move |_, y: &[f64; 2]| bx.w_max - y[1].abs()),
        Event { g: Box::new(|_, y: &[f64; 2]| y[0]), terminal: false },
    ];
    if beta > 1.0 {
        events.push(Event::terminal(move |_, y: &[f64; 2]| 1.0 - y[1] / th - singular_guard));
    }
    let (s0, s1) = (dir * t_span.0, dir * t_span.1);
    let traj = ode::solve(f, s0, [z0, w0], s1, &o, &events)?;
    let last = *traj.y.last().unwrap();
    let t_stop = dir * traj.x_last();
    let start_norm = z0.abs().max(w0.abs());
    let outcome = match traj.stop {
        Stop::Event { index: 0 | 1, .. } => PhaseOutcome::Escaped { t: t_stop, z: last[0], w: last[1] },
        Stop::Event { .. } => PhaseOutcome::Singular { t: t_stop },
        Stop::End if start_norm > 0.0 && last[0].abs().max(last[1].abs()) <= 1e-8 * start_norm => {
            PhaseOutcome::ConvergedToOrigin { t: t_stop }
        }
        Stop::End => PhaseOutcome::EndOfSpan,
    };
    let z_crossings: Vec<f64> = traj.crossings.iter().filter(|c| c.0 == 2).map(|c| dir * c.1).collect();
    let rows: Vec<[f64; 5]> = traj
        .x
        .iter()
        .zip(&traj.y)
        .map(|(&s, y)| {
            let d = limit_rhs(params, l, y[0], y[1]);
            [dir * s, y[0], y[1], d[1], l]
        })
        .collect();
    let trace = EmdenTrace::from_rows(rows, TraceSource::LimitPhase { q, z0, w0 }, 0);
    Ok(PhaseRun { trace, outcome, z_crossings, dir, span: (s0, traj.x_last()), segments: traj.segments })
}

/// Angle of `(z, w)` in the frame where the linearized flow is a uniform
/// rotation: `(z, (re z - w)/im)`.
fn adapted_angle(z: f64, w: f64, re: f64, im: f64) -> f64 {
    ((re * z - w) / im).atan2(z)
}

/// Rotation rate over the first quarter turn, measured in the frame adapted
/// to the linearization with eigenvalues `re ± i im`.
pub fn rotation_rate(run: &PhaseRun, re: f64, im: f64) -> Result<f64> {
    if !(im > 0.0) {
        return Err(invalid("rotation rate needs complex eigenvalues (im > 0)"));
    }
    let (ta, tb) = run.t_range();
    let n = 20_000;
    let dt = (tb - ta) / n as f64;
    let y0 = run.state_at(ta).unwrap();
    let mut prev = adapted_angle(y0[0], y0[1], re, im);
    let mut turned = 0.0f64;
    for k in 1..=n {
        let t = ta + k as f64 * dt;
        let Some(y) = run.state_at(t) else { break };
        let ang = adapted_angle(y[0], y[1], re, im);
        let mut d = ang - prev;
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        let before = turned;
        turned += d;
        prev = ang;
        let quarter = std::f64::consts::FRAC_PI_2;
        if turned.abs() >= quarter {
            // Linear interpolation inside the last sample interval.
            let frac = (quarter - before.abs()) / (turned.abs() - before.abs());
            let elapsed = ((k as f64 - 1.0 + frac) * dt).abs();
            return Ok(quarter / elapsed);
        }
    }
    Err(Error::InsufficientData("the run does not complete a quarter turn".into()))
}

/// Rate implied by consecutive sign changes of `z`: `pi / spacing` for the first pair.
pub fn half_turn_rate(run: &PhaseRun) -> Result<f64> {
    match run.z_crossings.as_slice() {
        [a, b, ..] => Ok(std::f64::consts::PI / (b - a).abs()),
        _ => Err(Error::InsufficientData("fewer than two sign changes of z".into())),
    }
}

/// Growth rate of the linear envelope `sqrt(z^2 + ((re z - w)/im)^2)` between
/// `t_a` and `t_b`, i.e. `d ln(envelope)/dt`.
pub fn envelope_rate(run: &PhaseRun, re: f64, im: f64, t_a: f64, t_b: f64) -> Result<f64> {
    if !(im > 0.0) {
        return Err(invalid("envelope rate needs complex eigenvalues (im > 0)"));
    }
    let env = |t: f64| -> Result<f64> {
        let y = run.state_at(t).ok_or_else(|| invalid(format!("t = {t} lies outside the run")))?;
        Ok(y[0].hypot((re * y[0] - y[1]) / im).ln())
    };
    Ok((env(t_b)? - env(t_a)?) / (t_b - t_a))
}

/// Worst (most negative) value of `dPsi/dt` at nodes with `z_t <= 0`, with
/// `Psi = z_t^2/2 + theta (alpha/beta - 1) z + (b/beta) e^{-beta z}`; divided by
/// `1 + |z_t z_tt|` for scale.
pub fn psi_monitor(trace: &EmdenTrace, params: &OperatorParams, l: f64) -> Option<f64> {
    let (_, b) = params.emden_coefficients(l);
    let c = params.theta() * (params.alpha / params.beta - 1.0);
    let mut worst: Option<f64> = None;
    for i in 0..trace.len() {
        let (z, zt, ztt) = (trace.z[i], trace.zt[i], trace.ztt[i]);
        if zt > 0.0 {
            continue;
        }
        let d = zt * ztt + c * zt - b * (-params.beta * z).exp() * zt;
        let v = d / (1.0 + (zt * ztt).abs());
        worst = Some(worst.map_or(v, |w: f64| w.min(v)));
    }
    worst
}

/// Energy of the limit system that never decreases along trajectories:
/// `Phi(zeta, zeta_t)` for `q > 1` (with `e^z = zeta^{p+1}/(p+1)`), and
/// `z_t^2/2 + b (z + e^{-beta z}/beta)` for `q = 1`.
pub fn limit_energy(params: &OperatorParams, q: f64, z: f64, zt: f64) -> f64 {
    let l = l_from_q(q);
    let (_, b) = params.emden_coefficients(l);
    let beta = params.beta;
    if q == 1.0 {
        return 0.5 * zt * zt + b * (z + (-beta * z).exp() / beta);
    }
    let p = q / (q - 1.0);
    let p1 = p + 1.0;
    let zeta = ((p1.ln() + z) / p1).exp();
    let zeta_t = zeta * zt / p1;
    let e = beta * p1 - 2.0;
    0.5 * zeta_t * zeta_t + b / p1 * (0.5 * zeta * zeta + p1.powf(beta) / e * zeta.powf(-e))
}

/// Largest relative decrease of the limit energy between consecutive nodes
/// of a forward trace (`0` when it never decreases).
pub fn phi_monitor(trace: &EmdenTrace, params: &OperatorParams, q: f64) -> f64 {
    let e: Vec<f64> = (0..trace.len()).map(|i| limit_energy(params, q, trace.z[i], trace.zt[i])).collect();
    let mut worst = 0.0f64;
    for k in 1..e.len() {
        let drop = (e[k - 1] - e[k]) / e[k - 1].abs().max(e[k].abs()).max(1.0);
        worst = worst.max(drop);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate_deviation, integrate_regular, integrate_singular, RadialOptions};
    use crate::nonlinearity::{Family, Nonlinearity};
    use crate::params::derive;
    use proptest::prelude::*;

    fn lap7() -> OperatorParams {
        OperatorParams::laplace(7, 0.0).unwrap()
    }
    fn pw2() -> Nonlinearity {
        Nonlinearity::power(2.0, 1.0).unwrap()
    }
    const L2: f64 = 2.0 / 3.0;

    /// Exact singular profile `u = (r^theta / A)^{1/(m+1)}`, power(m=2), N = 7.
    fn exact_singular() -> RadialProfile {
        let p = lap7();
        let nl = pw2();
        let mut prof = integrate_singular(&p, &nl, 1e-6, 1.0, 1e-10).unwrap();
        let a = p.amplitude(L2);
        for i in 0..prof.r.len() {
            let r = prof.r[i];
            prof.u[i] = (3.0 * r * r / a).powf(1.0 / 3.0);
            prof.du[i] = 2.0 / 3.0 * prof.u[i] / r;
        }
        prof
    }

    #[test]
    fn exact_singular_is_the_fixed_point() {
        let p = lap7();
        let tr = to_emden(&exact_singular(), &pw2(), L2).unwrap();
        assert_eq!(tr.dropped, 0);
        for i in 0..tr.len() {
            assert!(tr.z[i].abs() < 1e-8 && tr.zt[i].abs() < 1e-8, "node {i}: {} {}", tr.z[i], tr.zt[i]);
        }
        assert!(emden_residual(&tr, &p, L2).unwrap() < 1e-8);
        assert!(tr.t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn injected_fault_is_detected() {
        let p = lap7();
        let mut tr = to_emden(&exact_singular(), &pw2(), L2).unwrap();
        for z in &mut tr.z {
            *z += 1e-3;
        }
        assert!(emden_residual(&tr, &p, L2).unwrap() > 1e-4);

        let prof = integrate_regular(&p, &pw2(), 0.05, 1.0, 1e-9).unwrap();
        let mut tr = to_emden(&prof, &pw2(), L2).unwrap();
        let k = tr.len() / 2;
        tr.z[k] += 1e-3;
        assert!(emden_residual(&tr, &p, L2).unwrap() > 1e-4);
    }

    #[test]
    fn regular_profile_residual_is_at_tolerance_level() {
        let p = lap7();
        for tol in [1e-6, 1e-9] {
            let prof = integrate_regular(&p, &pw2(), 0.05, 1.0, tol).unwrap();
            let tr = to_emden(&prof, &pw2(), L2).unwrap();
            let res = emden_residual(&tr, &p, L2).unwrap();
            assert!(res <= 100.0 * tol, "tol {tol}: residual {res}");
        }
    }

    #[test]
    fn regular_trace_is_close_to_zero_for_small_a() {
        let p = lap7();
        let prof = integrate_regular(&p, &pw2(), 1e-6, 0.2, 1e-10).unwrap();
        let tr = to_emden(&prof, &pw2(), L2).unwrap();
        let (sz, _) = tr.window_sup(-(1e-1f64).ln(), -(1e-2f64).ln());
        assert!(sz < 0.05, "sup|z| = {sz}");
    }

    #[test]
    fn window_sup_shrinks_with_a() {
        let p = lap7();
        let win = (-(1e-1f64).ln(), -(1e-2f64).ln());
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for a in [1e-3, 1e-4, 1e-5, 1e-6] {
            let dev = integrate_deviation(&p, &pw2(), a, 0.2, &RadialOptions::new(1e-10)).unwrap();
            let s = emden_offset(&dev, &pw2(), L2).unwrap().window_sup(win.0, win.1);
            assert!(s.0 < prev.0 && s.1 < prev.1, "a = {a}: {s:?} after {prev:?}");
            prev = s;
        }
    }

    #[test]
    fn offset_matches_direct_trace() {
        let p = lap7();
        let nl = pw2();
        let a = 1e-2;
        let dev = integrate_deviation(&p, &nl, a, 0.2, &RadialOptions::new(1e-11)).unwrap();
        let off = emden_offset(&dev, &nl, L2).unwrap();
        let prof = integrate_regular(&p, &nl, a, 0.2, 1e-11).unwrap();
        let ln_a = p.amplitude(L2).ln();
        for &r in &[3e-2, 1e-1, 0.2] {
            let i = off.t.partition_point(|&t| t < -(r as f64).ln()).min(off.len() - 1);
            let rr = (-off.t[i]).exp();
            let n = node(&p, &nl, ln_a, rr, prof.u_at(rr).unwrap(), prof.du_at(rr).unwrap()).unwrap();
            assert!((n.z - off.z[i]).abs() < 1e-6 * n.z.abs() + 1e-10, "z at r = {rr}: {} vs {}", n.z, off.z[i]);
            assert!((n.zt - off.zt[i]).abs() < 1e-6 * n.zt.abs() + 1e-10, "zt at r = {rr}: {} vs {}", n.zt, off.zt[i]);
        }
    }

    #[test]
    fn singular_trace_respects_zt_band() {
        let p = OperatorParams::p_laplace(5, 3.0, 0.0).unwrap();
        let nl = Nonlinearity::new(Family::ExpInv { m: 1.0 }, p.beta).unwrap();
        let prof = integrate_singular(&p, &nl, 1e-7, 0.05, 1e-9).unwrap();
        let tr = to_emden(&prof, &nl, 1.0).unwrap();
        let (lo, hi) = zt_band(&p);
        for (t, zt) in tr.t.iter().zip(&tr.zt) {
            assert!(*zt >= lo - 1e-9 && *zt <= hi + 1e-9, "t = {t}: zt = {zt}");
        }
    }

    #[test]
    fn equilibrium_is_stationary() {
        let p = lap7();
        let run = integrate_limit_phase(&p, 2.0, 0.0, 0.0, (0.0, 50.0), 1e-10).unwrap();
        assert_eq!(run.outcome, PhaseOutcome::EndOfSpan);
        assert!(run.trace.z.iter().chain(&run.trace.zt).all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn spiral_out_from_near_origin() {
        let p = lap7();
        let c = derive(&p, 2.0).unwrap();
        let run = integrate_limit_phase(&p, 2.0, 1e-6, 0.0, (0.0, 100.0), 1e-10).unwrap();
        assert!(matches!(run.outcome, PhaseOutcome::Escaped { .. }), "{:?}", run.outcome);
        assert!(!run.z_crossings.is_empty());
        let rate = rotation_rate(&run, c.eig_re, c.eig_im).unwrap();
        assert!((rate / c.eig_im - 1.0).abs() < 0.05, "rate {rate} vs {}", c.eig_im);
        let half = half_turn_rate(&run).unwrap();
        assert!((half / c.eig_im - 1.0).abs() < 0.05, "half-turn rate {half}");
        assert!(phi_monitor(&run.trace, &p, 2.0) < 1e-8);
        assert!(psi_monitor(&run.trace, &p, c.l).unwrap() > -1e-8);
    }

    #[test]
    fn backward_decay_matches_linearization() {
        let p = lap7();
        let c = derive(&p, 2.0).unwrap();
        let run = integrate_limit_phase(&p, 2.0, 1e-4, 0.0, (0.0, -20.0), 1e-11).unwrap();
        assert!(matches!(run.outcome, PhaseOutcome::ConvergedToOrigin { .. }), "{:?}", run.outcome);
        let efold = 1.0 / c.eig_re;
        let rate = envelope_rate(&run, c.eig_re, c.eig_im, -1.0, -1.0 - efold).unwrap();
        assert!((rate / c.eig_re - 1.0).abs() < 0.1, "rate {rate} vs {}", c.eig_re);
    }

    #[test]
    fn singular_event_for_beta_above_one() {
        let p = OperatorParams::p_laplace(5, 3.0, 0.0).unwrap();
        let th = p.theta();
        assert!(integrate_limit_phase(&p, 2.0, 0.0, th, (0.0, 1.0), 1e-9).is_err());
        let run = integrate_limit_phase(&p, 1.0, -3.0, 0.9 * th, (0.0, 50.0), 1e-9).unwrap();
        assert!(!matches!(run.outcome, PhaseOutcome::EndOfSpan | PhaseOutcome::ConvergedToOrigin { .. }));
    }

    #[test]
    fn exponential_limit_energy_grows() {
        let p = OperatorParams::laplace(3, 0.0).unwrap();
        let run = integrate_limit_phase(&p, 1.0, 0.5, -0.3, (0.0, 30.0), 1e-10).unwrap();
        assert!(phi_monitor(&run.trace, &p, 1.0) < 1e-8);
        assert!(psi_monitor(&run.trace, &p, 1.0).map_or(true, |v| v > -1e-8));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn limit_energy_never_decreases(n in 3u32..12, q in 1.0f64..6.0, z0 in -1.0f64..1.0, w0 in -1.0f64..1.0) {
            let p = OperatorParams::laplace(n, 0.0).unwrap();
            let run = integrate_limit_phase(&p, q, z0, w0, (0.0, 20.0), 1e-10).unwrap();
            prop_assert!(phi_monitor(&run.trace, &p, q) < 1e-7);
        }

        #[test]
        fn origin_is_never_approached_forward(n in 3u32..12, q in 1.0f64..6.0, z0 in -0.5f64..0.5, w0 in -0.5f64..0.5) {
            prop_assume!(z0.abs() + w0.abs() > 1e-3);
            let p = OperatorParams::laplace(n, 0.0).unwrap();
            let run = integrate_limit_phase(&p, q, z0, w0, (0.0, 40.0), 1e-9).unwrap();
            let converged = matches!(run.outcome, PhaseOutcome::ConvergedToOrigin { .. });
            prop_assert!(!converged);
        }
    }
}
