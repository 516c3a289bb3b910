//! Dormand-Prince 5(4) with dense output and event location.
//!
//! The integrator only moves forward (`x_end > x0`). Callers that need the
//! other direction substitute `x -> -x` themselves.

use crate::error::{Error, Result};
use crate::numerics;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension of one accepted step (Hairer's quartic interpolant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<const N: usize> {
    pub x0: f64,
    pub h: f64,
    rc: [[f64; N]; 5],
}

impl<const N: usize> Segment<N> {
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }

    pub fn eval(&self, x: f64) -> [f64; N] {
        let th = (x - self.x0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let r = &self.rc;
            out[i] = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }

    pub fn deriv(&self, x: f64) -> [f64; N] {
        let th = (x - self.x0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let r = &self.rc;
            let c = r[3][i] + th1 * r[4][i];
            let dc = -r[4][i];
            let b = r[2][i] + th * c;
            let db = c + th * dc;
            let a = r[1][i] + th1 * b;
            let da = -b + th1 * db;
            out[i] = (a + th * da) / self.h;
        }
        out
    }
}

/// Error norm: receives the local error estimate and the states at both ends
/// of the step; must return a value that is `<= 1` for acceptable steps.
pub type Norm<'a, const N: usize> = &'a (dyn Fn(&[f64; N], &[f64; N], &[f64; N]) -> f64 + Sync);

pub struct Options<'a, const N: usize> {
    pub rtol: f64,
    pub atol: f64,
    pub h0: Option<f64>,
    /// Bound `h <= cap * |x|` (used near a singular origin).
    pub step_cap_rel: Option<f64>,
    pub max_steps: usize,
    /// Replaces the default componentwise mixed norm.
    pub norm: Option<Norm<'a, N>>,
}

impl<const N: usize> Options<'_, N> {
    pub fn new(rtol: f64) -> Self {
        Options { rtol, atol: 0.0, h0: None, step_cap_rel: None, max_steps: 2_000_000, norm: None }
    }
}

/// A scalar event `g(x, y) = 0`, detected by a sign change across a step.
pub struct Event<'a, const N: usize> {
    pub g: Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>,
    pub terminal: bool,
}

impl<'a, const N: usize> Event<'a, N> {
    pub fn terminal(g: impl Fn(f64, &[f64; N]) -> f64 + 'a) -> Self {
        Event { g: Box::new(g), terminal: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    End,
    Event { index: usize, x: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    pub x: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub segments: Vec<Segment<N>>,
    pub stop: Stop,
    /// Located roots of non-terminal events, `(event index, x)`.
    pub crossings: Vec<(usize, f64)>,
}

impl<const N: usize> Trajectory<N> {
    pub fn x_first(&self) -> f64 {
        self.x[0]
    }
    pub fn x_last(&self) -> f64 {
        *self.x.last().unwrap()
    }

    fn segment_for(&self, x: f64) -> Option<&Segment<N>> {
        if self.segments.is_empty() || x < self.x_first() || x > self.x_last() {
            return None;
        }
        let i = self.segments.partition_point(|s| s.x0 <= x);
        Some(&self.segments[i.saturating_sub(1)])
    }

    /// Dense-output state at `x` inside the integrated range.
    pub fn eval(&self, x: f64) -> Option<[f64; N]> {
        if x == self.x_last() {
            return self.y.last().copied();
        }
        self.segment_for(x).map(|s| s.eval(x))
    }

    pub fn deriv(&self, x: f64) -> Option<[f64; N]> {
        self.segment_for(x).map(|s| s.deriv(x))
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

fn mixed_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], rtol: f64, atol: f64) -> f64 {
    let mut m = 0.0f64;
    for i in 0..N {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        let v = if sc > 0.0 { err[i].abs() / sc } else if err[i] == 0.0 { 0.0 } else { f64::INFINITY };
        m = m.max(v);
    }
    m
}

/// Integrates `y' = rhs(x, y)` from `x0` to `x_end`, stopping early at the
/// first terminal event.
pub fn solve<const N: usize, F>(
    rhs: F,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &Options<'_, N>,
    events: &[Event<'_, N>],
) -> Result<Trajectory<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if !(x_end > x0) {
        return Err(Error::Integration { at: x0, reason: format!("x_end = {x_end} must exceed x0") });
    }
    let finite = |v: &[f64; N]| v.iter().all(|c| c.is_finite());
    let cap = |x: f64, h: f64| match opts.step_cap_rel {
        Some(c) => h.min(c * x.abs()),
        None => h,
    };
    let mut x = x0;
    let mut y = y0;
    let mut k1 = rhs(x, &y);
    if !finite(&k1) || !finite(&y) {
        return Err(Error::Integration { at: x0, reason: "non-finite initial state or slope".into() });
    }
    let mut h = cap(x, opts.h0.unwrap_or(1e-4 * (x_end - x0)));
    let mut traj = Trajectory { x: vec![x], y: vec![y], segments: Vec::new(), stop: Stop::End, crossings: Vec::new() };
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.g)(x, &y)).collect();
    let mut rejected = false;
    for _ in 0..opts.max_steps {
        h = h.min(x_end - x);
        if h <= 4.0 * f64::EPSILON * x.abs() || h <= f64::MIN_POSITIVE {
            return Err(Error::Integration { at: x, reason: "step size underflow".into() });
        }
        let k2 = rhs(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = rhs(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(x + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = rhs(x + C5 * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = rhs(x + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y1 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let x1 = if h == x_end - x { x_end } else { x + h };
        let k7 = rhs(x1, &y1);
        let mut err_v = [0.0; N];
        for i in 0..N {
            err_v[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = if !finite(&y1) || !finite(&k7) || !finite(&err_v) {
            f64::INFINITY
        } else {
            match opts.norm {
                Some(n) => n(&err_v, &y, &y1),
                None => mixed_norm(&err_v, &y, &y1, opts.rtol, opts.atol),
            }
        };
        if !(err <= 1.0) {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac.min(0.9);
            rejected = true;
            continue;
        }
        let mut rc = [[0.0; N]; 5];
        for i in 0..N {
            let ydiff = y1[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            rc[0][i] = y[i];
            rc[1][i] = ydiff;
            rc[2][i] = bspl;
            rc[3][i] = ydiff - h * k7[i] - bspl;
            rc[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let seg = Segment { x0: x, h, rc };
        // Events: earliest root inside the step wins.
        let mut hit: Option<(usize, f64)> = None;
        for (idx, ev) in events.iter().enumerate() {
            let g1 = (ev.g)(x1, &y1);
            let g0 = g_prev[idx];
            if g0 != 0.0 && (g1 == 0.0 || g0.signum() != g1.signum()) && g1.is_finite() {
                let root = if g1 == 0.0 {
                    x1
                } else {
                    numerics::brent(|s| (ev.g)(s, &seg.eval(s)), x, x1, 4.0 * f64::EPSILON * x1.abs().max(x.abs()))?
                };
                if ev.terminal {
                    if hit.map_or(true, |(_, r)| root < r) {
                        hit = Some((idx, root));
                    }
                } else {
                    traj.crossings.push((idx, root));
                }
            }
            g_prev[idx] = g1;
        }
        traj.segments.push(seg);
        if let Some((idx, root)) = hit {
            traj.crossings.retain(|&(_, r)| r <= root);
            traj.x.push(root);
            traj.y.push(seg.eval(root));
            traj.stop = Stop::Event { index: idx, x: root };
            return Ok(traj);
        }
        x = x1;
        y = y1;
        k1 = k7;
        traj.x.push(x);
        traj.y.push(y);
        if x >= x_end {
            return Ok(traj);
        }
        let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        if rejected {
            fac = fac.min(1.0);
            rejected = false;
        }
        h = cap(x, h * fac);
    }
    Err(Error::Integration { at: x, reason: format!("more than {} steps", opts.max_steps) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let t = solve(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 2.0, &Options::new(1e-12), &[]).unwrap();
        let e = 2f64.exp();
        assert!((t.y.last().unwrap()[0] - e).abs() < 1e-10 * e);
        assert_eq!(t.stop, Stop::End);
    }

    #[test]
    fn dense_output_is_fourth_order_accurate() {
        let t = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &Options::new(1e-10), &[]).unwrap();
        let mut worst = 0.0f64;
        let mut worst_d = 0.0f64;
        for i in 0..1000 {
            let x = 10.0 * i as f64 / 1000.0;
            let y = t.eval(x).unwrap();
            worst = worst.max((y[0] - x.sin()).abs());
            let d = t.deriv(x).unwrap();
            worst_d = worst_d.max((d[0] - x.cos()).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(worst_d < 1e-6, "{worst_d}");
    }

    #[test]
    fn terminal_event_located() {
        let ev = [Event::terminal(|_, y: &[f64; 2]| y[0] - 0.5)];
        let t = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &Options::new(1e-12), &ev).unwrap();
        match t.stop {
            Stop::Event { index: 0, x } => assert!((x - std::f64::consts::FRAC_PI_6).abs() < 1e-11),
            s => panic!("{s:?}"),
        }
        assert!((t.y.last().unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_terminal_crossings_recorded() {
        let ev = [Event { g: Box::new(|_, y: &[f64; 2]| y[0]), terminal: false }];
        let t = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.1, [0.1f64.sin(), 0.1f64.cos()], 10.0, &Options::new(1e-12), &ev).unwrap();
        let xs: Vec<f64> = t.crossings.iter().map(|c| c.1).collect();
        assert_eq!(xs.len(), 3);
        for (k, x) in xs.iter().enumerate() {
            assert!((x - (k + 1) as f64 * std::f64::consts::PI).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_origin_with_step_cap() {
        // y' = y / (2x) from x = 1e-8: y = sqrt(x / 1e-8) * y0.
        let mut o = Options::new(1e-12);
        o.step_cap_rel = Some(0.25);
        let t = solve(|x, y: &[f64; 1]| [0.5 * y[0] / x], 1e-8, [1e-4], 1.0, &o, &[]).unwrap();
        assert!((t.y.last().unwrap()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nan_regions_are_rejected_not_fatal() {
        // sqrt(1 - x) blows past x = 1 only in trial stages.
        let ev = [Event::terminal(|x, _: &[f64; 1]| x - 0.999)];
        let t = solve(|x, _: &[f64; 1]| [(1.0 - x).sqrt()], 0.0, [0.0], 1.5, &Options::new(1e-10), &ev).unwrap();
        assert!(matches!(t.stop, Stop::Event { .. }));
    }

    #[test]
    fn custom_norm_is_used() {
        let strict = |e: &[f64; 1], _: &[f64; 1], _: &[f64; 1]| e[0].abs() / 1e-14;
        let mut o = Options::new(1.0);
        o.norm = Some(&strict);
        let t = solve(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 1.0, &o, &[]).unwrap();
        assert!((t.y.last().unwrap()[0] - 1f64.exp()).abs() < 1e-12);
    }
}
