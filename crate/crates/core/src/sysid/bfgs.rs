//! Full-memory BFGS with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub gradient_tolerance: f64,
    /// Relative loss decrease over `window` iterations below which the run
    /// stops.
    pub loss_tolerance: f64,
    pub window: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            gradient_tolerance: 1e-8,
            loss_tolerance: 1e-12,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Gradient,
    LossStall,
    MaxIterations,
    LineSearch,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub termination: Termination,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
    g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn evaluate<F>(f: &mut F, x: &[f64], d: &[f64], alpha: f64) -> Probe
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    let (fv, g) = f(&xt);
    let dphi = dot(&g, d);
    Probe { alpha, f: fv, dphi, g }
}

/// Minimizer of the cubic interpolating two probes, safeguarded to the
/// interior of the bracket.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    let mut t = f64::NAN;
    if disc >= 0.0 && hi.f.is_finite() {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    }
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        0.5 * (a + b)
    } else {
        t
    }
}

/// Strong-Wolfe line search (bracketing then zoom).
fn line_search<F>(f: &mut F, x: &[f64], f0: f64, dphi0: f64, d: &[f64], alpha0: f64) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut prev = Probe { alpha: 0.0, f: f0, dphi: dphi0, g: Vec::new() };
    let mut alpha = alpha0;
    for i in 0..40 {
        let cur = evaluate(f, x, d, alpha);
        if !cur.f.is_finite() || cur.f > f0 + C1 * alpha * dphi0 || (i > 0 && cur.f >= prev.f) {
            return zoom(f, x, f0, dphi0, d, prev, cur);
        }
        if cur.dphi.abs() <= -C2 * dphi0 {
            return Some(cur);
        }
        if cur.dphi >= 0.0 {
            return zoom(f, x, f0, dphi0, d, cur, prev);
        }
        prev = cur;
        alpha *= 2.0;
    }
    None
}

fn zoom<F>(f: &mut F, x: &[f64], f0: f64, dphi0: f64, d: &[f64], mut lo: Probe, mut hi: Probe) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    for _ in 0..40 {
        let alpha = if hi.f.is_finite() {
            interpolate(&lo, &hi)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let cur = evaluate(f, x, d, alpha);
        if !cur.f.is_finite() || cur.f > f0 + C1 * alpha * dphi0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dphi.abs() <= -C2 * dphi0 {
                return Some(cur);
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept the best sufficient-decrease point found if the curvature
    // condition could not be met.
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimizes `f` from `x0`. `f` returns value and gradient. `on_iterate` is
/// called with the iteration index (0 for the start point), the iterate and
/// its value and gradient infinity norm.
pub fn minimize<F, C>(f: F, x0: &[f64], opts: BfgsOptions, on_iterate: C) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    C: FnMut(usize, &[f64], f64, f64),
{
    minimize_preconditioned(f, x0, opts, |_: &[f64]| None, on_iterate)
}

/// As [`minimize`], with `metric` supplying an inverse-Hessian
/// approximation at the start and whenever the line search fails.
/// Returning `None` falls back to a scaled identity.
pub fn minimize_preconditioned<F, M, C>(mut f: F, x0: &[f64], opts: BfgsOptions, mut metric: M, mut on_iterate: C) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    M: FnMut(&[f64]) -> Option<DMatrix<f64>>,
    C: FnMut(usize, &[f64], f64, f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let ginf = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    on_iterate(0, &x, fx, ginf(&g));
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsOutcome { x, f: fx, iterations: 0, termination: Termination::NonFinite };
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    // Number of metric resets tried at the current iterate.
    let mut resets = 0;
    if let Some(m) = metric(&x) {
        h = m;
        scaled = true;
    }
    let mut history = vec![fx];
    let mut it = 0;
    let termination = loop {
        if ginf(&g) < opts.gradient_tolerance || fx == 0.0 {
            break Termination::Gradient;
        }
        if it >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            h = DMatrix::identity(n, n);
            scaled = false;
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if scaled { 1.0 } else { (1.0 / dot(&g, &g).sqrt()).min(1.0) };
        let probe = match line_search(&mut f, &x, fx, dphi0, &d, alpha0) {
            Some(p) => p,
            None if resets == 0 => {
                resets += 1;
                match metric(&x) {
                    Some(m) => h = m,
                    None => {
                        h = DMatrix::identity(n, n);
                        scaled = false;
                    }
                }
                continue;
            }
            None if resets == 1 && scaled => {
                // Last attempt along steepest descent.
                resets += 1;
                h = DMatrix::identity(n, n);
                scaled = false;
                continue;
            }
            None => break Termination::LineSearch,
        };
        resets = 0;
        it += 1;
        let s: Vec<f64> = d.iter().map(|di| probe.alpha * di).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        fx = probe.f;
        g = probe.g;
        on_iterate(it, &x, fx, ginf(&g));
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            if !scaled {
                h = DMatrix::identity(n, n) * (sy / dot(&y, &y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            h += &sv * sv.transpose() * (rho * rho * yhy + rho);
        }
        history.push(fx);
        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            if (old - fx) <= opts.loss_tolerance * fx.abs().max(1e-300) {
                break Termination::LossStall;
            }
        }
    };
    BfgsOutcome { x, f: fx, iterations: it, termination }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let mut last = f64::INFINITY;
        let out = minimize(rosenbrock, &[-1.2, 1.0], BfgsOptions::default(), |_, _, f, _| {
            assert!(f <= last);
            last = f;
        });
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn quadratic_in_few_steps() {
        let q = |x: &[f64]| {
            let f = 0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1] + 100.0 * x[2] * x[2]);
            (f, vec![x[0], 10.0 * x[1], 100.0 * x[2]])
        };
        let out = minimize(q, &[1.0, 1.0, 1.0], BfgsOptions::default(), |_, _, _, _| {});
        assert!(out.f < 1e-16);
        assert!(out.iterations < 30);
    }

    #[test]
    fn zero_iterations() {
        let out = minimize(rosenbrock, &[0.0, 0.0], BfgsOptions { max_iters: 0, ..Default::default() }, |_, _, _, _| {});
        assert_eq!(out.x, vec![0.0, 0.0]);
        assert_eq!(out.termination, Termination::MaxIterations);
    }

    #[test]
    fn non_finite_start() {
        let out = minimize(|_x: &[f64]| (f64::NAN, vec![0.0]), &[0.0], BfgsOptions::default(), |_, _, _, _| {});
        assert_eq!(out.termination, Termination::NonFinite);
    }
}
