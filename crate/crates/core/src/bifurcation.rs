//! The bifurcation curve `lambda(tau)` of the Dirichlet problem, its
//! degenerate point, and the turning points accumulating there.
//!
//! A sample at `tau` integrates `u(., 1 - tau)` and finds the first radius
//! `r0` with `u(r0) = 1`; then `lambda = r0^{gamma - alpha + beta}`. Near
//! `tau = 1` the curve differs from `lambda_bar` by far less than the
//! integration error of either profile, so samples are computed as offsets
//! from the degenerate point using the deviation `u(., a) - u*`.

use crate::error::{invalid, Error, Result};
use crate::integrator::{integrate_deviation, integrate_singular_with, DeviationProfile, RadialOptions, Termination};
use crate::nonlinearity::NonlinearTerm;
use crate::numerics::brent;
use crate::params::OperatorParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneratePoint {
    pub lambda_bar: f64,
    /// `u*(r0_star) = 1`.
    pub r0_star: f64,
    /// `gamma - alpha + beta`.
    pub exponent: f64,
}

fn exponent(p: &OperatorParams) -> f64 {
    p.gamma - p.alpha + p.beta
}

fn require_unbounded<N: NonlinearTerm + ?Sized>(nl: &N) -> Result<()> {
    let u_bar = nl.domain().1;
    if u_bar.is_finite() {
        return Err(invalid(format!(
            "bifurcation runs need g' > 0 on (0, inf); this nonlinearity stops at u_bar = {u_bar}"
        )));
    }
    Ok(())
}

/// Locates `u*(r0_star) = 1` on the singular profile.
pub fn degenerate_point<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    r_max: f64,
    rel_tol: f64,
) -> Result<DegeneratePoint> {
    require_unbounded(nl)?;
    let mut o = RadialOptions::new(rel_tol);
    o.stop_at_level = Some(1.0);
    let eps = 1e-8f64.min(1e-4 * r_max);
    let prof = integrate_singular_with(params, nl, eps, r_max, &o)?;
    match prof.termination {
        Termination::Level { r, .. } => {
            let e = exponent(params);
            Ok(DegeneratePoint { lambda_bar: r.powf(e), r0_star: r, exponent: e })
        }
        _ => Err(Error::ExtendRange(format!("u* stays below 1 up to r_max = {r_max}"))),
    }
}

/// One point of the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationSample {
    /// `v(0)`.
    pub tau_center: f64,
    /// `1 - tau_center`, kept separately because it is tiny near the degenerate point.
    pub a: f64,
    pub r0: f64,
    pub lambda: f64,
    /// `lambda - lambda_bar`, accurate in the relative sense.
    pub lambda_offset: f64,
    /// `|u(r0) - 1|`, i.e. `|v(1)|` after the back-substitution.
    pub dirichlet_defect: f64,
    /// False when `u(., a)` never reached 1; the other fields are then NaN.
    pub complete: bool,
}

impl BifurcationSample {
    fn incomplete(a: f64) -> Self {
        BifurcationSample {
            tau_center: 1.0 - a,
            a,
            r0: f64::NAN,
            lambda: f64::NAN,
            lambda_offset: f64::NAN,
            dirichlet_defect: f64::NAN,
            complete: false,
        }
    }
}

/// `u*''` from the equation, `u'' = u' (w'/w - alpha/r) / beta`.
fn second_derivative<N: NonlinearTerm + ?Sized>(p: &OperatorParams, nl: &N, dev: &DeviationProfile, r: f64) -> f64 {
    let s = dev.state_at(r).unwrap();
    let du = dev.du_star_at(r).unwrap();
    let dw = ((p.gamma - 1.0) * r.ln() - p.beta * nl.ln_g(s[0])).exp();
    du * (dw / s[1] - p.alpha / r) / p.beta
}

/// Sample at center value `a` (so `tau = 1 - a`).
pub fn sample_at<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    dp: &DegeneratePoint,
    a: f64,
    rel_tol: f64,
) -> Result<BifurcationSample> {
    if !(a > 0.0 && a < 1.0) {
        return Err(invalid(format!("tau must lie in (0, 1), got {}", 1.0 - a)));
    }
    let r_max = 1.25 * dp.r0_star;
    let dev = integrate_deviation(params, nl, a, r_max, &RadialOptions::new(rel_tol))?;
    let full = |r: f64| {
        let s = dev.state_at(r).unwrap();
        s[0] + s[2] - 1.0
    };
    let Some(k) = dev.r.iter().position(|&r| full(r) >= 0.0) else {
        return Ok(BifurcationSample::incomplete(a));
    };
    if k == 0 {
        return Err(Error::Consistency(format!("u(., {a}) starts at or above 1")));
    }
    let r_cross = brent(full, dev.r[k - 1], dev.r[k], 1e-14 * dev.r[k])?;
    // u* = 1 on this run's own singular profile.
    let star = |r: f64| dev.state_at(r).unwrap()[0] - 1.0;
    let (lo, hi) = (0.8 * dp.r0_star, dp.r0_star * 1.2);
    if !(star(lo) < 0.0 && star(hi) > 0.0) {
        return Err(Error::Consistency("u* = 1 crossing moved away from r0_star".into()));
    }
    let r0s = brent(star, lo, hi, 1e-15 * dp.r0_star)?;
    let mut rho = r_cross - r0s;
    let mut defect = 0.0;
    if rho.abs() < 1e-3 * r0s {
        // Newton on u*(r0s + rho) - 1 + delta(r0s + rho) = 0 with the u* part
        // expanded about r0s, which keeps the residual accurate when rho is
        // far below the profile's own error.
        let d1 = dev.du_star_at(r0s).unwrap();
        let d2 = second_derivative(params, nl, &dev, r0s);
        for _ in 0..8 {
            let r = r0s + rho;
            let star_part = if rho.abs() < 1e-6 * r0s { d1 * rho + 0.5 * d2 * rho * rho } else { star(r) };
            let f = star_part + dev.delta_at(r).unwrap();
            let fp = d1 + d2 * rho + dev.d_slope_at(r).unwrap();
            let step = f / fp;
            rho -= step;
            defect = f.abs();
            if step.abs() <= 1e-15 * rho.abs() {
                break;
            }
        }
    } else {
        defect = full(r_cross).abs();
    }
    let lambda_offset = dp.lambda_bar * (dp.exponent * (rho / r0s).ln_1p()).exp_m1();
    Ok(BifurcationSample {
        tau_center: 1.0 - a,
        a,
        r0: dp.r0_star * (1.0 + rho / r0s),
        lambda: dp.lambda_bar + lambda_offset,
        lambda_offset,
        dirichlet_defect: defect,
        complete: true,
    })
}

/// Samples of the curve at each `tau` of an increasing grid in `(0, 1)`,
/// evaluated in parallel and returned in grid order.
pub fn trace_curve<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    dp: &DegeneratePoint,
    tau_grid: &[f64],
    rel_tol: f64,
) -> Result<Vec<BifurcationSample>> {
    if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("tau grid must be strictly increasing"));
    }
    let a_grid: Vec<f64> = tau_grid.iter().map(|t| 1.0 - t).collect();
    trace_curve_a(params, nl, dp, &a_grid, rel_tol)
}

/// As [`trace_curve`], parametrized by the center value `a = 1 - tau`
/// (strictly decreasing), which keeps full precision next to `tau = 1`.
pub fn trace_curve_a<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    dp: &DegeneratePoint,
    a_grid: &[f64],
    rel_tol: f64,
) -> Result<Vec<BifurcationSample>> {
    require_unbounded(nl)?;
    if a_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("center values must be strictly decreasing"));
    }
    a_grid.par_iter().map(|&a| sample_at(params, nl, dp, a, rel_tol)).collect()
}

/// Geometric grid `a = 10^{-k/per_decade}` from `10^{-j_min}` to `10^{-j_max}`.
pub fn geometric_a_grid(j_min: u32, j_max: u32, per_decade: u32) -> Vec<f64> {
    let n = (j_max - j_min) * per_decade;
    (0..=n).map(|k| 10f64.powf(-(j_min as f64) - k as f64 / per_decade as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// Center value of the sample (or refined point) at the turn.
    pub a: f64,
    pub lambda: f64,
    pub lambda_offset: f64,
}

/// Sign changes of successive differences of `lambda` along the complete
/// samples (ordered by `tau`). Differences are taken on the offsets.
pub fn turning_points(samples: &[BifurcationSample]) -> Result<Vec<TurningPoint>> {
    let s: Vec<&BifurcationSample> = samples.iter().filter(|s| s.complete).collect();
    if s.len() < 3 {
        return Err(Error::InsufficientData(format!("need >= 3 complete samples, got {}", s.len())));
    }
    let mut out = Vec::new();
    for i in 1..s.len() - 1 {
        let d0 = s[i].lambda_offset - s[i - 1].lambda_offset;
        let d1 = s[i + 1].lambda_offset - s[i].lambda_offset;
        if d0 != 0.0 && d1 != 0.0 && d0.signum() != d1.signum() {
            out.push(TurningPoint {
                tau_lo: s[i - 1].tau_center,
                tau_hi: s[i + 1].tau_center,
                a: s[i].a,
                lambda: s[i].lambda,
                lambda_offset: s[i].lambda_offset,
            });
        }
    }
    Ok(out)
}

/// Options of [`trace_with_refinement`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Brackets narrower than this in `tau` are left alone.
    pub tau_resolution: f64,
    pub rounds: u32,
    pub rel_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { tau_resolution: 1e-12, rounds: 3, rel_tol: 1e-10 }
    }
}

/// Sweeps `a_grid`, then repeatedly trisects (in `ln a`) both halves of every
/// turning-point bracket. Returns all samples ordered by `tau`.
pub fn trace_with_refinement<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    dp: &DegeneratePoint,
    a_grid: &[f64],
    opts: &RefineOptions,
) -> Result<Vec<BifurcationSample>> {
    let mut samples = trace_curve_a(params, nl, dp, a_grid, opts.rel_tol)?;
    for _ in 0..opts.rounds {
        let tps = turning_points(&samples)?;
        let mut extra = Vec::new();
        for tp in &tps {
            let (a_hi, a_mid, a_lo) = (1.0 - tp.tau_lo, tp.a, 1.0 - tp.tau_hi);
            for (x, y) in [(a_hi, a_mid), (a_mid, a_lo)] {
                if (x - y).abs() < opts.tau_resolution {
                    continue;
                }
                let (lx, ly) = (x.ln(), y.ln());
                extra.push((lx + (ly - lx) / 3.0).exp());
                extra.push((lx + 2.0 * (ly - lx) / 3.0).exp());
            }
        }
        if extra.is_empty() {
            break;
        }
        extra.sort_by(|a, b| b.total_cmp(a));
        extra.dedup();
        let new = trace_curve_a(params, nl, dp, &extra, opts.rel_tol)?;
        samples.extend(new);
        samples.sort_by(|x, y| y.a.total_cmp(&x.a));
        samples.dedup_by(|x, y| x.a == y.a);
    }
    Ok(samples)
}

/// Golden-section refinement of a turning point's extremum in `ln a` inside
/// its bracket, to relative width `x_tol` in `a`.
pub fn refine_turning_point<N: NonlinearTerm + ?Sized>(
    params: &OperatorParams,
    nl: &N,
    dp: &DegeneratePoint,
    tp: &TurningPoint,
    x_tol: f64,
    rel_tol: f64,
) -> Result<TurningPoint> {
    let sign = if tp.lambda_offset > 0.0 { -1.0 } else { 1.0 };
    let f = |x: f64| -> Result<f64> { Ok(sign * sample_at(params, nl, dp, x.exp(), rel_tol)?.lambda_offset) };
    let (mut lo, mut hi) = ((1.0 - tp.tau_hi).ln(), (1.0 - tp.tau_lo).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > x_tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let best = sample_at(params, nl, dp, (0.5 * (lo + hi)).exp(), rel_tol)?;
    Ok(TurningPoint { a: best.a, lambda: best.lambda, lambda_offset: best.lambda_offset, ..*tp })
}

/// Indices of samples whose step in `lambda` exceeds ten times both
/// neighbouring steps (a sign of a misplaced crossing).
pub fn continuity_violations(samples: &[BifurcationSample]) -> Vec<usize> {
    let s: Vec<&BifurcationSample> = samples.iter().filter(|s| s.complete).collect();
    let d: Vec<f64> = s.windows(2).map(|w| (w[1].lambda_offset - w[0].lambda_offset).abs()).collect();
    let mut out = Vec::new();
    for i in 1..d.len().saturating_sub(1) {
        if d[i] > 10.0 * d[i - 1].max(d[i + 1]) {
            out.push(i);
        }
    }
    out
}
