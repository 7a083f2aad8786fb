//! Complex-phase trajectory loss and its exact gradient by reverse
//! accumulation through the discrete recursion.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normalform::{ErrorSeries, HwDiscrete, PhaseRule, Setpoints};
use crate::signal::{to_phase, PhaseSeries};
use crate::scenarios::Record;

/// `Σ_k |Θᵐ_k − Θ^pred_k|²`.
pub fn loss(predicted: &PhaseSeries, measured: &PhaseSeries) -> Result<f64> {
    if predicted.len() != measured.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: measured.len() });
    }
    if (predicted.dt() - measured.dt()).abs() > 1e-9 * measured.dt() {
        return Err(Error::DtMismatch { expected: measured.dt(), got: predicted.dt() });
    }
    Ok(predicted
        .theta()
        .iter()
        .zip(measured.theta())
        .map(|(p, m)| (m - p).norm_sqr())
        .sum())
}

/// A record reduced to what the optimizer needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub e: Vec<[f64; 3]>,
    pub theta: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

impl Prepared {
    pub fn new(record: &Record, setpoints: &Setpoints) -> Result<Self> {
        let phase = to_phase(&record.series)?;
        Ok(Self {
            name: record.name.clone(),
            e: ErrorSeries::from_dq(&record.series, setpoints).e,
            theta: phase.theta().to_vec(),
            v: record.series.voltages(),
        })
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}

/// Layout of the real parameter vector for `n` internal variables:
/// `Â` (n×n, row-major), `B̂` (n×3, row-major), `Re C`, `Im C`, `Re D`,
/// `Im D`, with `A_d = I + dt Â` and `B_d = dt B̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        let n = self.n;
        n * n + 3 * n + 2 * n + 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn b(&self) -> usize {
        self.n * self.n
    }

    fn c(&self) -> usize {
        self.b() + 3 * self.n
    }

    fn d(&self) -> usize {
        self.c() + 2 * self.n
    }

    pub fn pack(&self, m: &HwDiscrete) -> Vec<f64> {
        let n = self.n;
        let dt = m.dt;
        let mut p = vec![0.0; self.len()];
        for r in 0..n {
            for c in 0..n {
                let id = if r == c { 1.0 } else { 0.0 };
                p[r * n + c] = (m.a_d[(r, c)] - id) / dt;
            }
            for j in 0..3 {
                p[self.b() + 3 * r + j] = m.b_d[(r, j)] / dt;
            }
            p[self.c() + r] = m.c[r].re;
            p[self.c() + n + r] = m.c[r].im;
        }
        for j in 0..3 {
            p[self.d() + j] = m.d[j].re;
            p[self.d() + 3 + j] = m.d[j].im;
        }
        p
    }

    pub fn unpack(&self, p: &[f64], dt: f64, setpoints: Setpoints) -> HwDiscrete {
        let n = self.n;
        let a_d = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } + dt * p[r * n + c]);
        let b_d = DMatrix::from_fn(n, 3, |r, j| dt * p[self.b() + 3 * r + j]);
        let c = (0..n).map(|r| Complex64::new(p[self.c() + r], p[self.c() + n + r])).collect();
        let d = [0, 1, 2].map(|j| Complex64::new(p[self.d() + j], p[self.d() + 3 + j]));
        HwDiscrete { a_d, b_d, c, d, dt, setpoints }
    }
}

/// Open-loop phase prediction with zero initial state from the measured
/// initial phase; identical to `normalform::simulate_open_loop`.
pub fn predict_phase(m: &HwDiscrete, rec: &Prepared, rule: PhaseRule) -> Vec<Complex64> {
    let n = m.n_ivars();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut th = rec.theta[0];
    let mut out = Vec::with_capacity(rec.len());
    for (k, e) in rec.e.iter().enumerate() {
        out.push(th);
        if k + 1 == rec.len() {
            break;
        }
        th += phase_increment(m, &x, &mut next, e, rule);
        std::mem::swap(&mut x, &mut next);
    }
    out
}

#[inline]
fn phase_increment(m: &HwDiscrete, x: &[f64], next: &mut [f64], e: &[f64; 3], rule: PhaseRule) -> Complex64 {
    let n = x.len();
    let dt = m.dt;
    let mut cx = Complex64::new(0.0, 0.0);
    let mut cnext = Complex64::new(0.0, 0.0);
    for r in 0..n {
        let mut acc = m.b_d[(r, 0)] * e[0] + m.b_d[(r, 1)] * e[1] + m.b_d[(r, 2)] * e[2];
        for c in 0..n {
            acc += m.a_d[(r, c)] * x[c];
        }
        next[r] = acc;
        cx += m.c[r] * x[r];
        cnext += m.c[r] * acc;
    }
    let de = m.d[0] * e[0] + m.d[1] * e[1] + m.d[2] * e[2];
    match rule {
        PhaseRule::Trapezoidal => (cx + cnext) * (0.5 * dt) + de * dt,
        PhaseRule::ForwardEuler => (cx + de) * dt,
    }
}

/// Loss and gradient of one record with respect to the layout parameters.
fn record_loss_gradient(m: &HwDiscrete, layout: Layout, rec: &Prepared, rule: PhaseRule, want_grad: bool) -> (f64, Vec<f64>) {
    let n = layout.n;
    let len = rec.len();
    let dt = m.dt;
    let mut xs = vec![0.0; len * n];
    let mut r = vec![Complex64::new(0.0, 0.0); len];
    let mut th = rec.theta[0];
    let mut l = 0.0;
    let mut next = vec![0.0; n];
    for k in 0..len {
        let rk = th - rec.theta[k];
        r[k] = rk;
        l += rk.norm_sqr();
        if k + 1 == len {
            break;
        }
        let (cur, rest) = xs.split_at_mut((k + 1) * n);
        let x = &cur[k * n..];
        th += phase_increment(m, x, &mut next, &rec.e[k], rule);
        rest[..n].copy_from_slice(&next);
    }
    if !want_grad || len < 2 {
        return (l, Vec::new());
    }

    let mut grad = vec![0.0; layout.len()];
    let mut d_ad = vec![0.0; n * n];
    let mut d_bd = vec![0.0; n * 3];
    let mut lam_next = vec![0.0; n];
    let mut lam = vec![0.0; n];
    let mut g_next = Complex64::new(0.0, 0.0);
    let (b_off, c_off, d_off) = (layout.b(), layout.c(), layout.d());
    for j in (0..len - 1).rev() {
        let g = g_next + r[j + 1] * 2.0;
        let xj = &xs[j * n..(j + 1) * n];
        let xj1 = &xs[(j + 1) * n..(j + 2) * n];
        let e = &rec.e[j];
        // λ_{j+1}
        let w = match rule {
            PhaseRule::Trapezoidal => (g + g_next) * (0.5 * dt),
            PhaseRule::ForwardEuler => g_next * dt,
        };
        for row in 0..n {
            let mut acc = w.re * m.c[row].re + w.im * m.c[row].im;
            for col in 0..n {
                acc += m.a_d[(col, row)] * lam_next[col];
            }
            lam[row] = acc;
        }
        for row in 0..n {
            let lr = lam[row];
            for col in 0..n {
                d_ad[row * n + col] += lr * xj[col];
            }
            for k in 0..3 {
                d_bd[row * 3 + k] += lr * e[k];
            }
        }
        for row in 0..n {
            let s = match rule {
                PhaseRule::Trapezoidal => 0.5 * dt * (xj[row] + xj1[row]),
                PhaseRule::ForwardEuler => dt * xj[row],
            };
            grad[c_off + row] += g.re * s;
            grad[c_off + n + row] += g.im * s;
        }
        for k in 0..3 {
            grad[d_off + k] += g.re * dt * e[k];
            grad[d_off + 3 + k] += g.im * dt * e[k];
        }
        std::mem::swap(&mut lam, &mut lam_next);
        g_next = g;
    }
    for (k, v) in d_ad.iter().enumerate() {
        grad[k] = dt * v;
    }
    for (k, v) in d_bd.iter().enumerate() {
        grad[b_off + k] = dt * v;
    }
    (l, grad)
}

/// Summed loss and gradient over records, plus `regularization · |p|²`.
///
/// Per-record contributions are computed in parallel and reduced in record
/// order, so results do not depend on scheduling.
pub fn loss_and_gradient(
    params: &[f64],
    layout: Layout,
    dt: f64,
    setpoints: Setpoints,
    records: &[Prepared],
    rule: PhaseRule,
    regularization: f64,
) -> (f64, Vec<f64>) {
    let m = layout.unpack(params, dt, setpoints);
    let parts: Vec<(f64, Vec<f64>)> = records
        .par_iter()
        .map(|rec| record_loss_gradient(&m, layout, rec, rule, true))
        .collect();
    let mut l = 0.0;
    let mut g = vec![0.0; layout.len()];
    for (lr, gr) in parts {
        l += lr;
        for (a, b) in g.iter_mut().zip(&gr) {
            *a += b;
        }
    }
    if regularization > 0.0 {
        for (gi, pi) in g.iter_mut().zip(params) {
            l += regularization * pi * pi;
            *gi += 2.0 * regularization * pi;
        }
    }
    (l, g)
}

/// Plain summed loss of a discrete model.
pub fn total_loss(m: &HwDiscrete, records: &[Prepared], rule: PhaseRule) -> f64 {
    let layout = Layout { n: m.n_ivars() };
    records
        .par_iter()
        .map(|rec| record_loss_gradient(m, layout, rec, rule, false).0)
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Gradient of the summed loss of `model` with respect to the layout
/// parameters.
pub fn loss_gradient(model: &HwDiscrete, records: &[Prepared], rule: PhaseRule) -> Vec<f64> {
    let layout = Layout { n: model.n_ivars() };
    let p = layout.pack(model);
    loss_and_gradient(&p, layout, model.dt, model.setpoints, records, rule, 0.0).1
}

/// Gauss-Newton curvature `2 JᵀJ` of the summed loss, with `J` the
/// Jacobian of the predicted phase trajectories by central differences.
/// Only used to precondition the optimizer, so difference accuracy is not
/// critical.
pub fn gauss_newton(params: &[f64], layout: Layout, dt: f64, setpoints: Setpoints, records: &[Prepared], rule: PhaseRule) -> DMatrix<f64> {
    let np = layout.len();
    let models: Vec<(HwDiscrete, HwDiscrete, f64)> = (0..np)
        .map(|k| {
            let h = 1e-6 * params[k].abs().max(1.0);
            let mut q = params.to_vec();
            q[k] = params[k] + h;
            let plus = layout.unpack(&q, dt, setpoints);
            q[k] = params[k] - h;
            (plus, layout.unpack(&q, dt, setpoints), h)
        })
        .collect();
    let parts: Vec<DMatrix<f64>> = records
        .par_iter()
        .map(|rec| {
            // Zero initial phase keeps the differenced sums small.
            let shifted = Prepared { theta: vec![Complex64::new(0.0, 0.0)], ..rec.clone() };
            let mut j = DMatrix::<f64>::zeros(2 * rec.len(), np);
            for (k, (plus, minus, h)) in models.iter().enumerate() {
                let tp = predict_phase(plus, &shifted, rule);
                let tm = predict_phase(minus, &shifted, rule);
                for (i, (a, b)) in tp.iter().zip(&tm).enumerate() {
                    let d = (a - b) / (2.0 * h);
                    j[(2 * i, k)] = d.re;
                    j[(2 * i + 1, k)] = d.im;
                }
            }
            j.tr_mul(&j) * 2.0
        })
        .collect();
    let mut out = DMatrix::zeros(np, np);
    for p in parts {
        out += p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalform::{simulate_open_loop, HwNormalForm};
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_model(rng: &mut impl Rng, n: usize) -> HwDiscrete {
        let a = DMatrix::from_fn(n, n, |r, cc| if r == cc { -10.0 } else { 0.0 } + rng.random_range(-3.0..3.0));
        let b = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
        let cv = (0..n).map(|_| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let d = [0, 1, 2].map(|_| c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
        HwNormalForm::new(a, b, cv, d, Setpoints::default()).unwrap().discretize(1e-3).unwrap()
    }

    fn random_record(rng: &mut impl Rng, len: usize) -> Prepared {
        let mut theta = Vec::with_capacity(len);
        let mut th = c(0.01, 0.2);
        let mut e = Vec::with_capacity(len);
        for _ in 0..len {
            theta.push(th);
            th += c(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
            e.push([rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]);
        }
        let v = theta.iter().map(|t| t.exp()).collect();
        Prepared { name: "r".into(), e, theta, v }
    }

    #[test]
    fn loss_examples() {
        let m = PhaseSeries::new(vec![c(0.0, 0.0), c(1.0, 1.0)], 1e-3).unwrap();
        assert_eq!(loss(&m, &m).unwrap(), 0.0);
        let p = PhaseSeries::new(vec![c(0.0, 0.0), c(1.1, 1.2)], 1e-3).unwrap();
        assert!((loss(&p, &m).unwrap() - 0.05).abs() < 1e-12);
        let shift = c(3.0, -2.0);
        let ms = PhaseSeries::new(m.theta().iter().map(|t| t + shift).collect(), 1e-3).unwrap();
        let ps = PhaseSeries::new(p.theta().iter().map(|t| t + shift).collect(), 1e-3).unwrap();
        assert!((loss(&ps, &ms).unwrap() - 0.05).abs() < 1e-12);
        let short = PhaseSeries::new(vec![c(0.0, 0.0)], 1e-3).unwrap();
        assert!(matches!(loss(&short, &m), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 3);
        let layout = Layout { n: 3 };
        let back = layout.unpack(&layout.pack(&m), m.dt, m.setpoints);
        assert!((back.a_d - &m.a_d).norm() < 1e-14);
        assert!((back.b_d - &m.b_d).norm() < 1e-14);
        assert_eq!(back.c, m.c);
        assert_eq!(back.d, m.d);
    }

    #[test]
    fn prediction_matches_open_loop_simulation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 2);
        let rec = random_record(&mut rng, 200);
        let es = ErrorSeries { e: rec.e.clone(), dt: 1e-3 };
        for rule in [PhaseRule::Trapezoidal, PhaseRule::ForwardEuler] {
            let a = predict_phase(&m, &rec, rule);
            let b = simulate_open_loop(&m, &es, rec.theta[0], &[0.0; 2], rule).unwrap();
            for (x, y) in a.iter().zip(b.phase.theta()) {
                assert!((x - y).norm() < 1e-13);
            }
        }
    }

    /// Central differences of the simulated trajectory (step 1e-6), chained
    /// through the quadratic loss `Σ|r|²`, `∂/∂p = Σ 2 Re(r̄ ∂r/∂p)`.
    /// Differencing trajectories rather than loss totals keeps the oracle's
    /// round-off well below the adjoint's magnitude.
    fn finite_difference(p: &[f64], layout: Layout, recs: &[Prepared], rule: PhaseRule) -> Vec<f64> {
        let h = 1e-6;
        let sp = Setpoints::default();
        let base = layout.unpack(p, 1e-3, sp);
        (0..p.len())
            .map(|k| {
                let mut q = p.to_vec();
                q[k] = p[k] + h;
                let plus = layout.unpack(&q, 1e-3, sp);
                q[k] = p[k] - h;
                let minus = layout.unpack(&q, 1e-3, sp);
                recs.iter()
                    .map(|rec| {
                        // Start from zero phase so the accumulated sums stay
                        // small; the loss only sees differences.
                        let offset = rec.theta[0];
                        let shifted = Prepared { theta: rec.theta.iter().map(|t| t - offset).collect(), ..rec.clone() };
                        let th = predict_phase(&base, &shifted, rule);
                        let tp = predict_phase(&plus, &shifted, rule);
                        let tm = predict_phase(&minus, &shifted, rule);
                        (0..rec.len())
                            .map(|i| {
                                let r = th[i] - shifted.theta[i];
                                let dr = (tp[i] - tm[i]) / (2.0 * h);
                                2.0 * (r.conj() * dr).re
                            })
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for rule in [PhaseRule::Trapezoidal, PhaseRule::ForwardEuler] {
            let m = random_model(&mut rng, 2);
            let recs = vec![random_record(&mut rng, 120), random_record(&mut rng, 80)];
            let layout = Layout { n: 2 };
            let p = layout.pack(&m);
            let (_, g) = loss_and_gradient(&p, layout, 1e-3, Setpoints::default(), &recs, rule, 0.0);
            let fd = finite_difference(&p, layout, &recs, rule);
            for (k, (a, b)) in g.iter().zip(&fd).enumerate() {
                if a.abs().max(b.abs()) < 1e-12 {
                    continue;
                }
                let rel = (a - b).abs() / a.abs().max(b.abs());
                assert!(rel < 1e-5, "component {k}: adjoint {a}, fd {b}, rel {rel}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_on_exact_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 2);
        let mut rec = random_record(&mut rng, 150);
        rec.theta = predict_phase(&m, &rec, PhaseRule::Trapezoidal);
        let g = loss_gradient(&m, &[rec], PhaseRule::Trapezoidal);
        assert!(g.iter().all(|x| x.abs() < 1e-10), "{g:?}");
    }

    #[test]
    fn regularization_adds_quadratic_term() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let m = random_model(&mut rng, 1);
        let recs = vec![random_record(&mut rng, 50)];
        let layout = Layout { n: 1 };
        let p = layout.pack(&m);
        let (l0, g0) = loss_and_gradient(&p, layout, 1e-3, Setpoints::default(), &recs, PhaseRule::Trapezoidal, 0.0);
        let (l1, g1) = loss_and_gradient(&p, layout, 1e-3, Setpoints::default(), &recs, PhaseRule::Trapezoidal, 0.5);
        let norm2: f64 = p.iter().map(|x| x * x).sum();
        assert!((l1 - l0 - 0.5 * norm2).abs() < 1e-9 * l1.abs().max(1.0));
        for k in 0..p.len() {
            assert!((g1[k] - g0[k] - p[k]).abs() < 1e-9 * g1[k].abs().max(1.0));
        }
    }
}
