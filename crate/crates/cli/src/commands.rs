//! One function per subcommand. Each writes its artifacts into `out` and
//! returns a JSON summary; `main` adds `run.json` and handles sweeps.

use crate::config::{EmdenSource, RunConfig};
use crate::error::CliError;
use crate::io::{svg_plot, write_csv, write_json, Column, Series};
use clap::ValueEnum;
use rayon::prelude::*;
use rupture::analysis::{
    asymptotic_fit, closed_form_residual, convergence_study, count_zeros_deviation, exact_power_coefficient,
    k_hessian_singular, limit_intersections, p_laplace_singular, LimitIntersectionOptions,
};
use rupture::bifurcation::{
    degenerate_point, geometric_a_grid, trace_curve, trace_with_refinement, turning_points, BifurcationSample,
    RefineOptions, TurningPoint,
};
use rupture::emden::{emden_residual, half_turn_rate, integrate_limit_phase, rotation_rate, to_emden, EmdenTrace};
use rupture::integrator::{
    flux_defect, gradient_ratio, integrate_deviation, integrate_limit, integrate_regular_with,
    integrate_singular_with, lower_bound_margin, ode_residual, RadialOptions, RadialProfile,
};
use rupture::nonlinearity::{c1_origin_limit, log_space, resolve_q, Family, LimitNonlinearity, NonlinearTerm, Nonlinearity};
use rupture::params::{derive, l_from_q, qc_consistency, DerivedConstants, OperatorParams};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Constants,
    Regular,
    Singular,
    Limit,
    Emden,
    Intersections,
    Converge,
    Bifurcation,
    Verify,
}

/// Result of one command run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Value,
    /// Set when a check of `verify` failed; the run still wrote its artifacts.
    pub failed_checks: Vec<String>,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Outcome { summary, failed_checks: Vec::new() }
    }
}

/// Validated inputs shared by all commands.
pub struct Setup {
    pub params: OperatorParams,
    pub nl: Nonlinearity,
    pub q: f64,
    pub constants: DerivedConstants,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let (params, nl) = cfg.build()?;
        let q = resolve_q(&nl)?;
        let constants = derive(&params, q)?;
        Ok(Setup { params, nl, q, constants })
    }

    fn l(&self) -> f64 {
        l_from_q(self.q)
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let setup = Setup::new(cfg)?;
    std::fs::create_dir_all(out)?;
    match cmd {
        Command::Constants => constants(cfg, &setup, out),
        Command::Regular => regular(cfg, &setup, out),
        Command::Singular => singular(cfg, &setup, out),
        Command::Limit => limit(cfg, &setup, out),
        Command::Emden => emden(cfg, &setup, out),
        Command::Intersections => intersections(cfg, &setup, out),
        Command::Converge => converge(cfg, &setup, out),
        Command::Bifurcation => bifurcation(cfg, &setup, out),
        Command::Verify => verify(cfg, &setup, out),
    }
}

fn radial_opts(cfg: &RunConfig) -> RadialOptions {
    let mut o = RadialOptions::new(cfg.solver.rel_tol);
    o.stop_at_u_bar = true;
    o
}

fn constants(_cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let origin = c1_origin_limit(&s.nl, s.params.theta())?;
    let laplace = qc_consistency(&s.params).ok();
    let summary = json!({
        "params": s.params,
        "nonlinearity": s.nl.family,
        "u_bar": finite_or_str(s.nl.u_bar),
        "constants": s.constants,
        "origin_limit": origin,
        "u_star_origin_slope": origin.origin_slope(s.constants.a_amp, s.constants.theta),
        "qc_laplace_check": laplace,
    });
    write_json(&out.join("constants.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn finite_or_str(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    }
}

fn write_profile(out: &Path, prof: &RadialProfile, title: &str, log_x: bool) -> Result<(), CliError> {
    write_csv(
        &out.join("profile.csv"),
        &["r", "u", "du", "w"],
        &[Column::F(&prof.r), Column::F(&prof.u), Column::F(&prof.du), Column::F(&prof.w)],
    )?;
    let pts = prof.r.iter().copied().zip(prof.u.iter().copied()).collect();
    let svg = svg_plot(title, "r", "u", &[Series { label: "u", points: pts }], log_x);
    std::fs::write(out.join("profile.svg"), svg)?;
    Ok(())
}

fn profile_checks<N: NonlinearTerm + ?Sized>(prof: &RadialProfile, nl: &N) -> Result<Value, CliError> {
    Ok(json!({
        "nodes": prof.len(),
        "r_first": prof.r_first(),
        "r_last": prof.r_last(),
        "termination": prof.termination,
        "flux_defect": flux_defect(prof, nl)?,
        "ode_residual": ode_residual(prof, nl),
        "lower_bound_margin": lower_bound_margin(prof, nl)?,
        "gradient_ratio": gradient_ratio(prof),
    }))
}

fn regular(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let prof = integrate_regular_with(&s.params, &s.nl, cfg.regular.a, cfg.solver.r_max, &radial_opts(cfg))?;
    write_profile(out, &prof, &format!("regular profile, a = {:e}", cfg.regular.a), false)?;
    let mut summary = json!({ "a": cfg.regular.a });
    merge(&mut summary, profile_checks(&prof, &s.nl)?);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn singular(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let prof = integrate_singular_with(&s.params, &s.nl, cfg.solver.eps_seed, cfg.solver.r_max, &radial_opts(cfg))?;
    write_profile(out, &prof, "singular profile", true)?;
    let mut summary = json!({
        "eps_seed": cfg.solver.eps_seed,
        "seed_sensitivity": prof.seed_sensitivity,
    });
    merge(&mut summary, profile_checks(&prof, &s.nl)?);
    summary["asymptotic_fit"] = match asymptotic_fit(&prof, &s.nl) {
        Ok(fit) => serde_json::to_value(fit)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn limit_nl(cfg: &RunConfig, s: &Setup) -> Result<LimitNonlinearity, CliError> {
    Ok(LimitNonlinearity::new(cfg.limit.q.unwrap_or(s.q), s.params.beta)?)
}

fn limit(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let lim = limit_nl(cfg, s)?;
    let prof = integrate_limit(&s.params, &lim, cfg.limit.b, cfg.solver.s_max, cfg.solver.rel_tol)?;
    write_profile(out, &prof, &format!("limit problem, q = {}, b = {}", lim.q, cfg.limit.b), true)?;
    let mut summary = json!({ "q": lim.q, "b": cfg.limit.b });
    merge(&mut summary, profile_checks(&prof, &lim)?);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn emden(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let e = &cfg.emden;
    let l = match (e.source, cfg.limit.q) {
        (EmdenSource::Phase, Some(q)) => l_from_q(q),
        _ => s.l(),
    };
    let (trace, mut summary): (EmdenTrace, Value) = match e.source {
        EmdenSource::Regular => {
            let prof = integrate_regular_with(&s.params, &s.nl, cfg.regular.a, cfg.solver.r_max, &radial_opts(cfg))?;
            (to_emden(&prof, &s.nl, l)?, json!({ "source": "regular", "a": cfg.regular.a }))
        }
        EmdenSource::Singular => {
            let prof =
                integrate_singular_with(&s.params, &s.nl, cfg.solver.eps_seed, cfg.solver.r_max, &radial_opts(cfg))?;
            (to_emden(&prof, &s.nl, l)?, json!({ "source": "singular", "eps_seed": cfg.solver.eps_seed }))
        }
        EmdenSource::Phase => {
            let q = cfg.limit.q.unwrap_or(s.q);
            let c = derive(&s.params, q)?;
            let run = integrate_limit_phase(&s.params, q, e.z0, e.w0, e.t_span, cfg.solver.rel_tol)?;
            let mut sm = json!({
                "source": "phase",
                "q": q,
                "z0": e.z0,
                "w0": e.w0,
                "outcome": run.outcome,
                "sign_changes": run.z_crossings.len(),
                "z_crossings": run.z_crossings,
                "eig_re": c.eig_re,
                "eig_im": c.eig_im,
            });
            if c.oscillatory {
                sm["rotation_rate"] = rate(rotation_rate(&run, c.eig_re, c.eig_im));
                sm["half_turn_rate"] = rate(half_turn_rate(&run));
            }
            let tr = &run.trace;
            let pts = tr.z.iter().copied().zip(tr.zt.iter().copied()).collect();
            let svg = svg_plot("limit phase plane", "z", "z_t", &[Series { label: "orbit", points: pts }], false);
            std::fs::write(out.join("phase.svg"), svg)?;
            (run.trace, sm)
        }
    };
    summary["nodes"] = json!(trace.len());
    summary["dropped"] = json!(trace.dropped);
    summary["sup_z"] = json!(trace.z.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    summary["residual"] = match emden_residual(&trace, &s.params, l) {
        Ok(r) => json!(r),
        Err(e) => json!({ "error": e.to_string() }),
    };
    write_csv(
        &out.join("trace.csv"),
        &["t", "z", "zt", "ztt"],
        &[Column::F(&trace.t), Column::F(&trace.z), Column::F(&trace.zt), Column::F(&trace.ztt)],
    )?;
    let pts = trace.t.iter().copied().zip(trace.z.iter().copied()).collect();
    std::fs::write(
        out.join("trace.svg"),
        svg_plot("Emden variable", "t", "z", &[Series { label: "z", points: pts }], false),
    )?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn rate(r: rupture::Result<f64>) -> Value {
    match r {
        Ok(v) => json!(v),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn write_zeros(path: &Path, zeros: &[f64]) -> Result<(), CliError> {
    let idx: Vec<usize> = (0..zeros.len()).collect();
    write_csv(path, &["index", "r"], &[Column::I(&idx), Column::F(zeros)])
}

fn intersections(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let ic = &cfg.intersections;
    if !(ic.rho > 0.0) {
        return Err(CliError::Validation(format!("rho must be positive, got {}", ic.rho)));
    }
    let opts = RadialOptions::new(cfg.solver.rel_tol);
    let reports = ic
        .a_list
        .par_iter()
        .map(|&a| {
            let dev = integrate_deviation(&s.params, &s.nl, a, ic.rho, &opts)?;
            count_zeros_deviation(&dev, (0.0, ic.rho))
        })
        .collect::<rupture::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (k, (a, rep)) in ic.a_list.iter().zip(&reports).enumerate() {
        write_zeros(&out.join(format!("zeros_{k}.csv")), &rep.zeros)?;
        rows.push(json!({ "a": a, "count": rep.count, "zeros": rep.zeros, "near_zeros": rep.near_zeros,
                          "spacing_ratios": rep.spacing_ratios }));
    }
    let counts: Vec<usize> = reports.iter().map(|r| r.count).collect();
    let mut summary = json!({
        "rho": ic.rho,
        "regular_vs_singular": rows,
        "nondecreasing": counts.windows(2).all(|w| w[1] >= w[0]),
        "strictly_increasing": counts.windows(2).all(|w| w[1] > w[0]),
    });
    if ic.limit {
        let lim = limit_nl(cfg, s)?;
        let o = LimitIntersectionOptions { s_switch: ic.s_switch, s_max: ic.s_max, rel_tol: ic.limit_rel_tol };
        let rep = limit_intersections(&s.params, &lim, ic.b, &o)?;
        write_zeros(&out.join("limit_zeros.csv"), &rep.zeros)?;
        let c = derive(&s.params, lim.q)?;
        let predicted = if c.oscillatory { Some((std::f64::consts::PI / c.eig_im).exp()) } else { None };
        summary["limit"] = json!({ "q": lim.q, "b": ic.b, "report": rep, "predicted_ratio": predicted });
    }
    write_json(&out.join("intersections.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn converge(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let cc = &cfg.converge;
    let rows = convergence_study(&s.params, &s.nl, &cc.a_list, cc.window, cfg.solver.rel_tol)?;
    let a: Vec<f64> = rows.iter().map(|r| r.a).collect();
    let gu: Vec<f64> = rows.iter().map(|r| r.gap_u).collect();
    let gd: Vec<f64> = rows.iter().map(|r| r.gap_du).collect();
    write_csv(&out.join("converge.csv"), &["a", "gap_u", "gap_du"], &[Column::F(&a), Column::F(&gu), Column::F(&gd)])?;
    let summary = json!({
        "window": cc.window,
        "rows": rows,
        "strictly_decreasing": gu.windows(2).all(|w| w[1] < w[0]),
    });
    write_json(&out.join("converge.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

fn bifurcation(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let bc = &cfg.bifurcation;
    let tol = cfg.solver.rel_tol;
    let dp = degenerate_point(&s.params, &s.nl, bc.r_max, tol)?;
    let samples: Vec<BifurcationSample> = match &bc.tau_grid {
        Some(grid) => trace_curve(&s.params, &s.nl, &dp, grid, tol)?,
        None => {
            if !(bc.per_decade > 0 && bc.j_max > bc.j_min) {
                return Err(CliError::Validation("bifurcation grid needs per_decade > 0 and j_max > j_min".into()));
            }
            let grid = geometric_a_grid(bc.j_min, bc.j_max, bc.per_decade);
            let opts = RefineOptions { tau_resolution: bc.tau_resolution, rounds: bc.refine_rounds, rel_tol: tol };
            trace_with_refinement(&s.params, &s.nl, &dp, &grid, &opts)?
        }
    };
    let tps: Vec<TurningPoint> = match turning_points(&samples) {
        Ok(t) => t,
        Err(rupture::Error::InsufficientData(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let col = |f: fn(&BifurcationSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let (tau, a, r0, lam, off) = (
        col(|x| x.tau_center),
        col(|x| x.a),
        col(|x| x.r0),
        col(|x| x.lambda),
        col(|x| x.lambda_offset),
    );
    write_csv(
        &out.join("curve.csv"),
        &["tau", "a", "r0", "lambda", "lambda_offset"],
        &[Column::F(&tau), Column::F(&a), Column::F(&r0), Column::F(&lam), Column::F(&off)],
    )?;
    let tcol = |f: fn(&TurningPoint) -> f64| tps.iter().map(f).collect::<Vec<f64>>();
    write_csv(
        &out.join("turning_points.csv"),
        &["tau_lo", "tau_hi", "a", "lambda", "lambda_offset"],
        &[
            Column::F(&tcol(|t| t.tau_lo)),
            Column::F(&tcol(|t| t.tau_hi)),
            Column::F(&tcol(|t| t.a)),
            Column::F(&tcol(|t| t.lambda)),
            Column::F(&tcol(|t| t.lambda_offset)),
        ],
    )?;
    let curve = samples.iter().filter(|x| x.complete).map(|x| (x.lambda, x.tau_center)).collect();
    std::fs::write(
        out.join("curve.svg"),
        svg_plot("bifurcation curve", "lambda", "tau = v(0)", &[Series { label: "tau(lambda)", points: curve }], false),
    )?;
    // The offsets shrink by orders of magnitude per turn; asinh keeps every turn visible.
    let scale = 1e-18;
    let zoom = samples
        .iter()
        .filter(|x| x.complete)
        .map(|x| (x.a, (x.lambda_offset / scale).asinh()))
        .collect();
    std::fs::write(
        out.join("diagram.svg"),
        svg_plot(
            "oscillation about the degenerate point",
            "(1 - tau)",
            "asinh((lambda - lambda_bar) / 1e-18)",
            &[Series { label: "offset", points: zoom }],
            true,
        ),
    )?;
    let summary = json!({
        "degenerate_point": dp,
        "samples": samples.len(),
        "incomplete": samples.iter().filter(|x| !x.complete).count(),
        "turning_points": tps,
        "max_dirichlet_defect": samples.iter().filter(|x| x.complete).fold(0.0f64, |m, x| m.max(x.dirichlet_defect)),
    });
    write_json(&out.join("bifurcation.json"), &summary)?;
    Ok(Outcome::ok(summary))
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn check(name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), value, tolerance, pass: value < tolerance }
}

const VERIFY_TOL: f64 = 1e-8;

fn verify(cfg: &RunConfig, s: &Setup, out: &Path) -> Result<Outcome, CliError> {
    let m = match s.nl.family {
        Family::Power { m } => m,
        _ => return Err(CliError::Validation("verify needs a power nonlinearity (closed forms exist only there)".into())),
    };
    let vc = &cfg.verify;
    if !(vc.r_lo > 0.0 && vc.r_hi > vc.r_lo && vc.points >= 2) {
        return Err(CliError::Validation("verify grid needs 0 < r_lo < r_hi and at least 2 points".into()));
    }
    let p = &s.params;
    let kappa = exact_power_coefficient(p, m);
    let e = (p.gamma - p.alpha + p.beta) / (m + p.beta);
    let u = move |r: f64| kappa * r.powf(e);
    let du = move |r: f64| kappa * e * r.powf(e - 1.0);
    let grid = log_space(vc.r_lo, vc.r_hi, vc.points);
    let res = closed_form_residual(p, &s.nl, &u, &du, &grid);
    let worst_res = res.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut checks = vec![check("closed-form ODE residual", worst_res, VERIFY_TOL)];

    let mut opts = RadialOptions::new(cfg.solver.rel_tol);
    opts.stop_at_u_bar = true;
    let eps = cfg.solver.eps_seed.min(1e-4 * vc.r_hi);
    let prof = integrate_singular_with(p, &s.nl, eps, vc.r_hi, &opts)?;
    let rel: Vec<f64> = grid.iter().map(|&r| prof.u_at(r).map_or(f64::INFINITY, |v| (v / u(r) - 1.0).abs())).collect();
    checks.push(check("integrated u* against closed form (relative)", rel.iter().fold(0.0f64, |a, &b| a.max(b)), VERIFY_TOL));

    let example: Option<(&str, Box<dyn Fn(f64) -> f64>)> = match cfg.operator {
        crate::config::OperatorSpec::PLaplace { n, p: pp, sigma } => {
            Some(("p-Laplace example formula", Box::new(p_laplace_singular(n as f64, pp, sigma, m))))
        }
        crate::config::OperatorSpec::KHessian { n, k } => {
            Some(("k-Hessian example formula", Box::new(k_hessian_singular(n as f64, k as f64, m))))
        }
        _ => None,
    };
    if let Some((name, f)) = example {
        let worst = grid.iter().map(|&r| (f(r) / u(r) - 1.0).abs()).fold(0.0f64, f64::max);
        checks.push(check(name, worst, 1e-12));
    }

    write_csv(
        &out.join("verify.csv"),
        &["r", "residual", "rel_error"],
        &[Column::F(&grid), Column::F(&res), Column::F(&rel)],
    )?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let summary = json!({ "m": m, "kappa": kappa, "exponent": e, "checks": checks });
    write_json(&out.join("verify.json"), &summary)?;
    Ok(Outcome { summary, failed_checks: failed })
}

/// Fixed-width pass/fail table for `verify`.
pub fn format_checks(summary: &Value) -> String {
    let mut s = String::new();
    if let Some(rows) = summary["checks"].as_array() {
        for r in rows {
            let pass = r["pass"].as_bool().unwrap_or(false);
            s.push_str(&format!(
                "{:4}  {:<46} {:>12.3e}  (< {:.0e})\n",
                if pass { "PASS" } else { "FAIL" },
                r["name"].as_str().unwrap_or(""),
                r["value"].as_f64().unwrap_or(f64::NAN),
                r["tolerance"].as_f64().unwrap_or(f64::NAN),
            ));
        }
    }
    s
}

fn merge(into: &mut Value, from: Value) {
    if let (Some(a), Value::Object(b)) = (into.as_object_mut(), from) {
        a.extend(b);
    }
}
