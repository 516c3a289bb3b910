//! Scaling transform, intersection numbers, convergence toward `u*`, and the
//! near-origin laws of the singular solution.

use crate::emden::{integrate_limit_phase_in, PhaseBox};
use crate::error::{invalid, Error, Result};
use crate::integrator::{integrate_deviation, DeviationProfile, RadialOptions, RadialProfile, Seed};
use crate::nonlinearity::{Family, LimitNonlinearity, NonlinearTerm, Nonlinearity};
use crate::numerics::brent;
use crate::params::OperatorParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `u~(s) = G_q^{-1}[lambda^{-theta} G(u(lambda s, a))]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledProfile {
    pub a: f64,
    pub lambda_scale: f64,
    pub s: Vec<f64>,
    pub u_tilde: Vec<f64>,
}

fn ln_lambda<N: NonlinearTerm + ?Sized>(nl: &N, limit: &LimitNonlinearity, a: f64, theta: f64) -> Result<f64> {
    Ok((nl.ln_big_g(a)? - limit.ln_big_g(1.0)?) / theta)
}

fn rescale_value<N: NonlinearTerm + ?Sized>(nl: &N, limit: &LimitNonlinearity, ln_lam: f64, theta: f64, u: f64) -> Result<f64> {
    limit.big_g_inverse_ln(nl.ln_big_g(u)? - theta * ln_lam)
}

fn regular_center(profile: &RadialProfile) -> Result<f64> {
    match profile.seed {
        Seed::Regular { a } => Ok(a),
        _ => Err(invalid("rescaling needs a regular profile")),
    }
}

/// Rescales a regular profile onto the scale of the limit problem.
pub fn rescale<N: NonlinearTerm + ?Sized>(profile: &RadialProfile, nl: &N, limit: &LimitNonlinearity) -> Result<RescaledProfile> {
    let a = regular_center(profile)?;
    let th = profile.params.theta();
    let ln_lam = ln_lambda(nl, limit, a, th)?;
    let lam = ln_lam.exp();
    let mut s = Vec::with_capacity(profile.len());
    let mut ut = Vec::with_capacity(profile.len());
    for (&r, &u) in profile.r.iter().zip(&profile.u) {
        s.push(r / lam);
        ut.push(rescale_value(nl, limit, ln_lam, th, u)?);
    }
    Ok(RescaledProfile { a, lambda_scale: lam, s, u_tilde: ut })
}

/// Inverse of [`rescale`]: `(r, u)` recovered from a rescaled profile.
pub fn unscale<N: NonlinearTerm + ?Sized>(
    resc: &RescaledProfile,
    nl: &N,
    limit: &LimitNonlinearity,
    theta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ln_lam = resc.lambda_scale.ln();
    let mut r = Vec::with_capacity(resc.s.len());
    let mut u = Vec::with_capacity(resc.s.len());
    for (&s, &v) in resc.s.iter().zip(&resc.u_tilde) {
        r.push(s * resc.lambda_scale);
        u.push(nl.big_g_inverse_ln(limit.ln_big_g(v)? + theta * ln_lam)?);
    }
    Ok((r, u))
}

/// `sup |u~_a(s) - v(s)|` over the nodes of `reference` with `s <= s_max`,
/// where `u~_a` is read from the dense output of `profile`.
pub fn rescaled_gap<N: NonlinearTerm + ?Sized>(
    profile: &RadialProfile,
    nl: &N,
    limit: &LimitNonlinearity,
    reference: &RadialProfile,
    s_max: f64,
) -> Result<f64> {
    let a = regular_center(profile)?;
    let th = profile.params.theta();
    let ln_lam = ln_lambda(nl, limit, a, th)?;
    let lam = ln_lam.exp();
    let mut worst = 0.0f64;
    for (&s, &v) in reference.r.iter().zip(&reference.u) {
        if s > s_max {
            break;
        }
        let Some(u) = profile.u_at(s * lam) else { continue };
        worst = worst.max((rescale_value(nl, limit, ln_lam, th, u)? - v).abs());
    }
    Ok(worst)
}

/// Zeros of a difference on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub interval: (f64, f64),
    pub count: usize,
    pub zeros: Vec<f64>,
    /// `zeros[i+1] / zeros[i]`.
    pub spacing_ratios: Vec<f64>,
    /// Local minima of `|difference|` below the noise floor without a sign change.
    pub near_zeros: Vec<f64>,
}

impl IntersectionReport {
    fn new(interval: (f64, f64), mut zeros: Vec<f64>, near_zeros: Vec<f64>) -> Self {
        zeros.sort_by(f64::total_cmp);
        zeros.dedup();
        let spacing_ratios = zeros.windows(2).map(|w| w[1] / w[0]).collect();
        IntersectionReport { interval, count: zeros.len(), zeros, spacing_ratios, near_zeros }
    }
}

/// Sign changes of `f` along sorted `nodes`; values with `|f| <= floor` carry
/// no sign. Returns `(zeros, near_zeros)`.
fn scan(nodes: &[f64], f: &dyn Fn(f64) -> f64, floor: &dyn Fn(f64, f64) -> f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    let mut zeros = Vec::new();
    let mut near = Vec::new();
    let mut last: Option<usize> = None;
    let mut quiet: Option<usize> = None;
    for i in 0..nodes.len() {
        let v = vals[i];
        if !v.is_finite() {
            return Err(Error::Integration { at: nodes[i], reason: "non-finite difference".into() });
        }
        if v.abs() <= floor(nodes[i], v) {
            if quiet.map_or(true, |k| v.abs() < vals[k].abs()) {
                quiet = Some(i);
            }
            continue;
        }
        if let Some(j) = last {
            if vals[j].signum() != v.signum() {
                let (a, b) = (nodes[j], nodes[i]);
                zeros.push(brent(|x| f(x), a, b, 1e-10 * a.abs().max(b.abs()))?);
            } else if let Some(k) = quiet {
                near.push(nodes[k]);
            }
        }
        quiet = None;
        last = Some(i);
    }
    // A quiet stretch at the end may hide a crossing; report it.
    if let Some(k) = quiet {
        near.push(nodes[k]);
    }
    Ok((zeros, near))
}

fn merged_nodes(a: &[f64], b: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut n: Vec<f64> = a.iter().chain(b).copied().filter(|&x| x >= lo && x <= hi).collect();
    n.push(lo);
    n.push(hi);
    n.sort_by(f64::total_cmp);
    n.dedup();
    n
}

/// Zeros of `pA - pB` on `interval`, on the union of both grids refined by
/// dense output. A lower end below both profiles' first radius is clipped to
/// the later of the two.
pub fn count_zeros(pa: &RadialProfile, pb: &RadialProfile, interval: (f64, f64)) -> Result<IntersectionReport> {
    let lo = interval.0.max(pa.r_first()).max(pb.r_first());
    let hi = interval.1;
    if !(hi > lo) || hi > pa.r_last() || hi > pb.r_last() {
        return Err(invalid(format!(
            "profiles do not cover ({}, {}) (they end at {} and {})",
            interval.0,
            interval.1,
            pa.r_last(),
            pb.r_last()
        )));
    }
    if !pa.has_dense_output() || !pb.has_dense_output() {
        return Err(invalid("intersection counting needs profiles with dense output"));
    }
    let nodes = merged_nodes(&pa.r, &pb.r, lo, hi);
    let diff = |r: f64| pa.u_at(r).unwrap() - pb.u_at(r).unwrap();
    let tol = pa.rel_tol.max(pb.rel_tol);
    let floor = |r: f64, _: f64| 1e3 * tol * pa.u_at(r).unwrap().abs().max(pb.u_at(r).unwrap().abs());
    let (zeros, near) = scan(&nodes, &diff, &floor)?;
    Ok(IntersectionReport::new(interval, zeros, near))
}

/// Zeros of `u(., a) - u*` from a deviation run. The deviation carries its own
/// relative accuracy, so the only near-zeros reported are nodes where it dips
/// a factor `1e-3/rel_tol` below both neighbours without changing sign.
pub fn count_zeros_deviation(dev: &DeviationProfile, interval: (f64, f64)) -> Result<IntersectionReport> {
    let lo = interval.0.max(dev.r_first());
    let hi = interval.1;
    if !(hi > lo) || hi > dev.r_last() {
        return Err(invalid(format!("deviation run ends at {} before {}", dev.r_last(), hi)));
    }
    let nodes = merged_nodes(&dev.r, &[], lo, hi);
    let d = |r: f64| dev.delta_at(r).unwrap();
    let (zeros, _) = scan(&nodes, &d, &|_, _| 0.0)?;
    let mut near = Vec::new();
    let thresh = 1e3 * dev.rel_tol;
    for w in nodes.windows(3) {
        let (a, b, c) = (d(w[0]).abs(), d(w[1]).abs(), d(w[2]).abs());
        if b < thresh * a.min(c) && d(w[0]).signum() == d(w[2]).signum() {
            near.push(w[1]);
        }
    }
    Ok(IntersectionReport::new(interval, zeros, near))
}

/// Options of [`limit_intersections`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitIntersectionOptions {
    /// End of the direct count; the Emden system takes over beyond it.
    pub s_switch: f64,
    pub s_max: f64,
    pub rel_tol: f64,
}

impl Default for LimitIntersectionOptions {
    fn default() -> Self {
        LimitIntersectionOptions { s_switch: 1e3, s_max: 1e8, rel_tol: 1e-12 }
    }
}

/// Zeros of `v(., b) - v*` for the limit problem on `(0, s_max)`: counted
/// directly up to `s_switch`, then as sign changes of `z` in Emden variables.
pub fn limit_intersections(
    params: &OperatorParams,
    limit: &LimitNonlinearity,
    b: f64,
    opts: &LimitIntersectionOptions,
) -> Result<IntersectionReport> {
    if !(opts.s_max > opts.s_switch && opts.s_switch > 0.0) {
        return Err(invalid("need 0 < s_switch < s_max"));
    }
    let th = params.theta();
    let a_amp = params.amplitude(crate::params::l_from_q(limit.q));
    let prof = crate::integrator::integrate_limit(params, limit, b, opts.s_switch, opts.rel_tol)?;
    let vstar = |s: f64| limit.big_g_inverse_ln(th * s.ln() - a_amp.ln());
    let diff = |s: f64| prof.u_at(s).unwrap() - vstar(s).unwrap_or(f64::NAN);
    let floor = |s: f64, _: f64| 1e3 * opts.rel_tol * prof.u_at(s).unwrap().abs().max(1.0);
    let nodes = merged_nodes(&prof.r, &[], prof.r_first(), opts.s_switch);
    let (mut zeros, near) = scan(&nodes, &diff, &floor)?;

    // Emden variables of v at s_switch; t = -ln s runs backwards.
    let s0 = opts.s_switch;
    let v = prof.u_at(s0).unwrap();
    let dv = prof.du_at(s0).unwrap();
    let rho = limit.primitive_ratio(v)?;
    let z0 = a_amp.ln() + limit.ln_big_g(v)? - th * s0.ln();
    let w0 = th - s0 * dv / rho;
    let bx = PhaseBox { z_max: f64::INFINITY, w_max: f64::INFINITY };
    let run = integrate_limit_phase_in(params, limit.q, z0, w0, (-s0.ln(), -opts.s_max.ln()), opts.rel_tol, bx)?;
    zeros.extend(run.z_crossings.iter().map(|t| (-t).exp()));
    Ok(IntersectionReport::new((0.0, opts.s_max), zeros, near))
}

/// One row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub a: f64,
    /// `sup |u(., a) - u*|` on the window.
    pub gap_u: f64,
    /// `sup |u'(., a) - u*'|` on the window.
    pub gap_du: f64,
}

/// Sup-norm distances between `u(., a)` and `u*` on `window`, from deviation
/// runs evaluated in parallel.
pub fn convergence_study<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    a_list: &[f64],
    window: (f64, f64),
    rel_tol: f64,
) -> Result<Vec<ConvergenceRow>> {
    if !(window.1 > window.0 && window.0 > 0.0) {
        return Err(invalid(format!("window ({}, {}) must satisfy 0 < r1 < r2", window.0, window.1)));
    }
    if a_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("a_list must be strictly decreasing"));
    }
    a_list
        .par_iter()
        .map(|&a| {
            let dev = integrate_deviation(params, nl, a, window.1, &RadialOptions::new(rel_tol))?;
            let mut row = ConvergenceRow { a, gap_u: 0.0, gap_du: 0.0 };
            let mut grid: Vec<f64> = dev.r.iter().copied().filter(|&r| r >= window.0 && r <= window.1).collect();
            grid.extend([window.0, window.1]);
            for r in grid {
                row.gap_u = row.gap_u.max(dev.delta_at(r).unwrap().abs());
                row.gap_du = row.gap_du.max(dev.d_slope_at(r).unwrap().abs());
            }
            Ok(row)
        })
        .collect()
}

/// Ratio of `u*` to a closed-form near-origin law, sampled toward the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub law: String,
    /// Decreasing radii.
    pub r: Vec<f64>,
    pub ratio: Vec<f64>,
    /// `|ratio - 1|` decreases as `r` decreases.
    pub trending_to_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub theta_hat: f64,
    pub a_hat: f64,
    pub theta: f64,
    pub a_amp: f64,
    pub fit_window: (f64, f64),
    pub law: Option<LawReport>,
}

/// The closed near-origin law of the built-in family, as a function of `r`.
pub fn family_law(params: &OperatorParams, nl: &Nonlinearity) -> Option<(String, Box<dyn Fn(f64) -> f64>)> {
    let (al, be, ga) = (params.alpha, params.beta, params.gamma);
    let e = ga - al + be;
    match nl.family {
        Family::Power { m } => {
            let k = exact_power_coefficient(params, m);
            Some(("u* = kappa r^(e/(m+beta))".into(), Box::new(move |r: f64| k * r.powf(e / (m + be)))))
        }
        Family::PowerLog { m, d, .. } => {
            let k = ((m + be) / (be * ga + m * (al - be)) * ((m + be) / e).powf(d + be)).powf(1.0 / (m + be));
            Some((
                "u* = kappa (r^e / |ln r|^d)^(1/(m+beta))".into(),
                Box::new(move |r: f64| k * (e * r.ln() - d * r.ln().abs().ln()).mul_add(1.0 / (m + be), 0.0).exp()),
            ))
        }
        Family::ExpInv { m } => Some(("u* = |e ln r|^(-1/m)".into(), Box::new(move |r: f64| (e * r.ln()).abs().powf(-1.0 / m)))),
        Family::DoubleExp => Some(("u* = 1/ln|ln r|".into(), Box::new(|r: f64| 1.0 / r.ln().abs().ln()))),
    }
}

/// Least-squares fit of `ln G(u*) = theta ln r - ln A` over the decade
/// `[10 eps, 100 eps]`, plus the ratio to the family's closed law.
pub fn asymptotic_fit(profile: &RadialProfile, nl: &Nonlinearity) -> Result<AsymptoticFit> {
    let eps = match profile.seed {
        Seed::Singular { eps } => eps,
        _ => return Err(invalid("asymptotic fit needs a singular profile")),
    };
    let p = &profile.params;
    if profile.r_last() < 1e4 * eps {
        return Err(Error::InsufficientData(format!(
            "profile spans [{eps}, {}], need at least three decades above 10 eps",
            profile.r_last()
        )));
    }
    let (lo, hi) = (10.0 * eps, 100.0 * eps);
    let mut pts = Vec::new();
    for (&r, &u) in profile.r.iter().zip(&profile.u) {
        if r >= lo && r <= hi {
            pts.push((r.ln(), nl.ln_big_g(u)?));
        }
    }
    if pts.len() < 4 {
        for k in 0..=8 {
            let r = lo * 10f64.powf(k as f64 / 8.0);
            pts.push((r.ln(), nl.ln_big_g(profile.u_at(r).unwrap())?));
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let theta_hat = sxy / sxx;
    let a_hat = (theta_hat * mx - my).exp();
    let l = crate::params::l_from_q(crate::nonlinearity::resolve_q(nl)?);
    let law = family_law(p, nl).map(|(name, law)| {
        let r: Vec<f64> = (0..=8).map(|k| profile.r_last().min(100.0 * lo) * 10f64.powf(-(k as f64) / 4.0)).filter(|&r| r >= lo).collect();
        let ratio: Vec<f64> = r.iter().map(|&x| profile.u_at(x).unwrap() / law(x)).collect();
        let gaps: Vec<f64> = ratio.iter().map(|v| (v - 1.0).abs()).collect();
        let trending_to_one = gaps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
        LawReport { law: name, r, ratio, trending_to_one }
    });
    Ok(AsymptoticFit {
        theta_hat,
        a_hat,
        theta: p.theta(),
        a_amp: p.amplitude(l),
        fit_window: (lo, hi),
        law,
    })
}

/// `kappa` of the exact singular solution `kappa r^{(gamma-alpha+beta)/(m+beta)}` for `f = u^m`.
pub fn exact_power_coefficient(params: &OperatorParams, m: f64) -> f64 {
    let (al, be, ga) = (params.alpha, params.beta, params.gamma);
    ((m + be) / (be * ga + m * (al - be)) * ((m + be) / (ga - al + be)).powf(be)).powf(1.0 / (m + be))
}

/// The exact singular solution of the p-Laplace example in its own notation:
/// `1 - v*(r)` for `-Delta_p v = |x|^sigma / (1-v)^m` in `R^n`.
pub fn p_laplace_singular(n: f64, p: f64, sigma: f64, m: f64) -> impl Fn(f64) -> f64 {
    let k = ((m + p - 1.0) / ((n + sigma) * (p - 1.0) + (n - p) * m) * ((m + p - 1.0) / (p + sigma)).powf(p - 1.0))
        .powf(1.0 / (m + p - 1.0));
    let e = (p + sigma) / (m + p - 1.0);
    move |r: f64| k * r.powf(e)
}

/// The exact singular solution of the k-Hessian example.
pub fn k_hessian_singular(n: f64, k: f64, m: f64) -> impl Fn(f64) -> f64 {
    let c = ((m + k) / (n * k + m * (n - 2.0 * k)) * ((m + k) / (2.0 * k)).powf(k)).powf(1.0 / (m + k));
    let e = 2.0 * k / (m + k);
    move |r: f64| c * r.powf(e)
}

/// Relative ODE residual `|r^{1-gamma} (r^alpha u'^beta)' f(u) - 1|` of a
/// candidate `u` with derivative `du`, at each radius of `grid`. The outer
/// derivative is taken numerically (Richardson-extrapolated central
/// differences in `ln r`), so the check does not reuse the algebra that
/// produced the candidate.
pub fn closed_form_residual<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    u: &dyn Fn(f64) -> f64,
    du: &dyn Fn(f64) -> f64,
    grid: &[f64],
) -> Vec<f64> {
    let w = |x: f64| {
        let r = x.exp();
        (params.alpha * x + params.beta * du(r).ln()).exp()
    };
    grid.iter()
        .map(|&r| {
            let x = r.ln();
            let d = |h: f64| (w(x + h) - w(x - h)) / (2.0 * h);
            let h = 1e-2;
            let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
            let e1 = (4.0 * d2 - d1) / 3.0;
            let e2 = (4.0 * d3 - d2) / 3.0;
            let dw_dx = (16.0 * e2 - e1) / 15.0;
            let dw_dr = dw_dx / r;
            let lhs = (dw_dr.ln() - (params.gamma - 1.0) * x + params.beta * nl.ln_g(u(r))).exp_m1();
            lhs.abs()
        })
        .collect()
}
