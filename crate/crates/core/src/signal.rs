//! Coordinate transforms and complex-phase calculus.
//!
//! Voltages and currents live in a global dq frame that rotates at the
//! nominal synchronous frequency. A dq voltage `v = V e^{jφ}` is written as
//! `v = exp(Θ)` with the complex phase `Θ = ln V + jφ`; its time derivative
//! is the complex frequency `η = ρ + jω`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest voltage magnitude (pu) for which `ln |v|` is taken.
pub const EPSILON_V: f64 = 1e-6;

/// Nominal grid frequency in Hz.
pub const NOMINAL_FREQUENCY_HZ: f64 = 50.0;

/// Nominal synchronous angular frequency of the global dq frame (rad/s).
pub const OMEGA_0: f64 = 2.0 * PI * NOMINAL_FREQUENCY_HZ;

/// Relative tolerance on the sampling grid of a [`DqSeries`].
pub const DT_TOLERANCE: f64 = 1e-9;

/// One sample of terminal voltage and current in the global dq frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqSample {
    pub t: f64,
    pub v: Complex64,
    pub i: Complex64,
}

/// Uniformly sampled dq voltage and current trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DqSeries {
    samples: Vec<DqSample>,
    dt: f64,
}

impl DqSeries {
    pub fn new(samples: Vec<DqSample>, dt: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSeries("series is empty".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidSeries(format!("invalid step {dt}")));
        }
        for (k, s) in samples.iter().enumerate() {
            if !(s.t.is_finite()
                && s.v.re.is_finite()
                && s.v.im.is_finite()
                && s.i.re.is_finite()
                && s.i.im.is_finite())
            {
                return Err(Error::InvalidSeries(format!("non-finite value at sample {k}")));
            }
        }
        for (k, w) in samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - dt).abs() > DT_TOLERANCE * dt.max(w[1].t.abs()) {
                return Err(Error::InvalidSeries(format!(
                    "non-uniform sampling between samples {k} and {}: step {step} vs {dt}",
                    k + 1
                )));
            }
        }
        Ok(Self { samples, dt })
    }

    /// Builds a series from parallel voltage/current arrays on the grid
    /// `t0 + k dt`.
    pub fn from_parts(t0: f64, dt: f64, v: &[Complex64], i: &[Complex64]) -> Result<Self> {
        if v.len() != i.len() {
            return Err(Error::LengthMismatch {
                left: v.len(),
                right: i.len(),
            });
        }
        let samples = v
            .iter()
            .zip(i)
            .enumerate()
            .map(|(k, (&v, &i))| DqSample {
                t: t0 + k as f64 * dt,
                v,
                i,
            })
            .collect();
        Self::new(samples, dt)
    }

    pub fn samples(&self) -> &[DqSample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.samples[0].t
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    pub fn currents(&self) -> Vec<Complex64> {
        self.samples.iter().map(|s| s.i).collect()
    }

    pub fn powers(&self) -> Vec<PowerSample> {
        self.samples
            .iter()
            .map(|s| complex_power(s.v, s.i))
            .collect()
    }

    pub fn into_samples(self) -> Vec<DqSample> {
        self.samples
    }
}

/// Unwrapped complex phase `Θ = ln V + jφ` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    theta: Vec<Complex64>,
    dt: f64,
}

impl PhaseSeries {
    pub fn new(theta: Vec<Complex64>, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidSeries(format!("invalid step {dt}")));
        }
        if theta.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("complex phase"));
        }
        Ok(Self { theta, dt })
    }

    pub fn theta(&self) -> &[Complex64] {
        &self.theta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `exp(Θ)` elementwise.
    pub fn voltages(&self) -> Vec<Complex64> {
        self.theta.iter().map(|z| z.exp()).collect()
    }
}

/// Active power, reactive power and squared voltage magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub p: f64,
    pub q: f64,
    pub nu: f64,
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Amplitude-invariant Park transform of one three-phase sample into the dq
/// frame at `angle`.
///
/// A balanced cosine set `A cos(angle + φ - 2πk/3)` maps to `A e^{jφ}`.
pub fn park_transform(abc: [f64; 3], angle: f64) -> Result<Complex64> {
    if !all_finite(&abc) || !angle.is_finite() {
        return Err(Error::NonFinite("park transform input"));
    }
    let a = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
    let space_vector = (Complex64::from(abc[0]) + a * abc[1] + a * a * abc[2]) * (2.0 / 3.0);
    Ok(space_vector * Complex64::from_polar(1.0, -angle))
}

/// Whether `|a + b + c|` stays below `tolerance` times the phase peak.
pub fn is_balanced(abc: [f64; 3], tolerance: f64) -> bool {
    let peak = abc.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (abc[0] + abc[1] + abc[2]).abs() <= tolerance * peak.max(f64::MIN_POSITIVE)
}

/// Inverse of [`park_transform`]: the balanced three-phase values at `angle`.
pub fn inverse_park(v: Complex64, angle: f64) -> Result<[f64; 3]> {
    if !v.re.is_finite() || !v.im.is_finite() || !angle.is_finite() {
        return Err(Error::NonFinite("inverse park input"));
    }
    let rotated = v * Complex64::from_polar(1.0, angle);
    let phase = |k: f64| (rotated * Complex64::from_polar(1.0, -2.0 * PI * k / 3.0)).re;
    Ok([phase(0.0), phase(1.0), phase(2.0)])
}

/// `S = P + jQ = v i*` together with `ν = |v|²`.
pub fn complex_power(v: Complex64, i: Complex64) -> PowerSample {
    let s = v * i.conj();
    PowerSample {
        p: s.re,
        q: s.im,
        nu: v.norm_sqr(),
    }
}

/// Complex phase of a voltage trajectory with sequential unwrapping.
///
/// Each angle is `arg v_k + 2π m_k` with the integer `m_k` chosen closest to
/// the previous unwrapped angle, so `exp(Θ_k)` reproduces `v_k` without
/// accumulated rounding.
pub fn phase_of(voltages: &[Complex64], dt: f64, epsilon_v: f64) -> Result<PhaseSeries> {
    let mut theta = Vec::with_capacity(voltages.len());
    let mut prev: Option<f64> = None;
    for (index, v) in voltages.iter().enumerate() {
        let magnitude = v.norm();
        if !magnitude.is_finite() {
            return Err(Error::NonFinite("voltage"));
        }
        if magnitude <= epsilon_v {
            return Err(Error::VoltageTooSmall { index, magnitude });
        }
        let wrapped = v.arg();
        let angle = match prev {
            None => wrapped,
            Some(p) => wrapped + 2.0 * PI * ((p - wrapped) / (2.0 * PI)).round(),
        };
        prev = Some(angle);
        theta.push(Complex64::new(magnitude.ln(), angle));
    }
    PhaseSeries::new(theta, dt)
}

/// Complex phase of the voltage part of a series (`ε_v` = [`EPSILON_V`]).
pub fn to_phase(series: &DqSeries) -> Result<PhaseSeries> {
    phase_of(&series.voltages(), series.dt(), EPSILON_V)
}

/// Complex frequency `η = dΘ/dt` by central differences, one-sided at the
/// ends.
///
/// Differentiation amplifies measurement noise by roughly `1/dt`; the result
/// is meant for initialization and diagnostics only.
pub fn complex_frequency(phase: &PhaseSeries) -> Result<Vec<Complex64>> {
    let th = phase.theta();
    let n = th.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let dt = phase.dt();
    let mut eta = Vec::with_capacity(n);
    eta.push((th[1] - th[0]) / dt);
    for k in 1..n - 1 {
        eta.push((th[k + 1] - th[k - 1]) / (2.0 * dt));
    }
    eta.push((th[n - 1] - th[n - 2]) / dt);
    Ok(eta)
}

/// Second-order Butterworth low-pass section (bilinear transform with
/// pre-warping).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        let k = (PI * cutoff_hz / sample_rate_hz).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        }
    }

    /// Runs the filter in place, starting from the steady state for a
    /// constant input equal to the first sample.
    fn run(&self, x: &mut [Complex64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z1 = x0 * (1.0 - b0);
        let mut z2 = x0 * (b2 - a2);
        for xk in x.iter_mut() {
            let input = *xk;
            let y = input * b0 + z1;
            z1 = input * b1 - y * a1 + z2;
            z2 = input * b2 - y * a2;
            *xk = y;
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding.
    fn filtfilt(&self, x: &[Complex64], pad: usize) -> Vec<Complex64> {
        let n = x.len();
        let pad = pad.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let first = x[0];
        let last = x[n - 1];
        ext.extend((1..=pad).rev().map(|k| first * 2.0 - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| last * 2.0 - x[n - 1 - k]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Cutoff of the anti-alias filter as a fraction of the target Nyquist
/// frequency.
pub const ANTI_ALIAS_FRACTION: f64 = 0.4;

/// Reduces the sampling rate to `target_dt`, which must be an integer
/// multiple of the source step.
///
/// Voltage and current are low-pass filtered (2nd-order Butterworth at 40 % of
/// the target Nyquist frequency, forward-backward) and then every n-th sample
/// is kept, giving `ceil(N/n)` samples.
pub fn downsample(series: &DqSeries, target_dt: f64) -> Result<DqSeries> {
    let ratio = decimation_ratio(series.dt(), target_dt)?;
    if ratio == 1 {
        return Ok(series.clone());
    }
    let source_rate = 1.0 / series.dt();
    let cutoff = ANTI_ALIAS_FRACTION * 0.5 / target_dt;
    let filter = Biquad::butterworth_lowpass(cutoff, source_rate);
    let pad = (source_rate / cutoff).ceil() as usize;
    let v = filter.filtfilt(&series.voltages(), pad);
    let i = filter.filtfilt(&series.currents(), pad);
    let samples = series
        .samples()
        .iter()
        .enumerate()
        .step_by(ratio)
        .map(|(k, s)| DqSample {
            t: s.t,
            v: v[k],
            i: i[k],
        })
        .collect();
    DqSeries::new(samples, series.dt() * ratio as f64)
}

/// Integer ratio `target_dt / source_dt`, or an error when it is not integral.
pub fn decimation_ratio(source_dt: f64, target_dt: f64) -> Result<usize> {
    if !(target_dt.is_finite() && target_dt > 0.0) {
        return Err(Error::param("target_dt", format!("must be positive, got {target_dt}")));
    }
    let ratio = target_dt / source_dt;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(Error::NonIntegerRatio {
            target: target_dt,
            source_dt,
        });
    }
    Ok(rounded as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn balanced(amplitude: f64, phi: f64, angle: f64) -> [f64; 3] {
        [0.0, 1.0, 2.0].map(|k| amplitude * (angle + phi - 2.0 * PI * k / 3.0).cos())
    }

    #[test]
    fn park_aligned_set_maps_to_unity() {
        let v = park_transform([1.0, (-2.0 * PI / 3.0).cos(), (2.0 * PI / 3.0).cos()], 0.0).unwrap();
        assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn park_zero_signal() {
        for angle in [0.0, 0.3, -2.0] {
            assert_eq!(park_transform([0.0; 3], angle).unwrap(), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn park_shifted_set_by_hand() {
        // Cosines evaluated numerically and pushed through the 2/3 matrix.
        let abc = [
            0.95 * 0.1f64.cos(),
            0.95 * (0.1 - 2.0 * PI / 3.0).cos(),
            0.95 * (0.1 + 2.0 * PI / 3.0).cos(),
        ];
        let vd = 2.0 / 3.0
            * (abc[0] * 0.0f64.cos()
                + abc[1] * (-2.0 * PI / 3.0).cos()
                + abc[2] * (2.0 * PI / 3.0).cos());
        let vq = -2.0 / 3.0
            * (abc[0] * 0.0f64.sin()
                + abc[1] * (-2.0 * PI / 3.0).sin()
                + abc[2] * (2.0 * PI / 3.0).sin());
        let v = park_transform(abc, 0.0).unwrap();
        assert_abs_diff_eq!(v.re, vd, epsilon = 1e-14);
        assert_abs_diff_eq!(v.im, vq, epsilon = 1e-14);
        assert_abs_diff_eq!(v.re, 0.95 * 0.1f64.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(v.im, 0.95 * 0.1f64.sin(), epsilon = 1e-14);
    }

    #[test]
    fn park_rejects_nan() {
        assert!(park_transform([f64::NAN, 0.0, 0.0], 0.0).is_err());
        assert!(inverse_park(Complex64::new(1.0, 0.0), f64::INFINITY).is_err());
    }

    #[test]
    fn balance_check() {
        assert!(is_balanced(balanced(1.0, 0.2, 0.7), 1e-9));
        assert!(!is_balanced([1.0, 0.0, 0.0], 1e-3));
    }

    #[test]
    fn inverse_park_examples() {
        let abc = inverse_park(Complex64::new(1.0, 0.0), 0.0).unwrap();
        assert_abs_diff_eq!(abc[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(abc[1], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(abc[2], -0.5, epsilon = 1e-15);
        assert_eq!(inverse_park(Complex64::new(0.0, 0.0), 1.3).unwrap(), [0.0; 3]);
        let v = Complex64::from_polar(0.8, 0.3);
        let back = park_transform(inverse_park(v, 0.0).unwrap(), 0.0).unwrap();
        assert!((back - v).norm() < 1e-12);
    }

    #[test]
    fn complex_power_examples() {
        let s = complex_power(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        assert_eq!((s.p, s.q, s.nu), (1.0, 0.0, 1.0));
        let s = complex_power(Complex64::new(1.0, 0.0), Complex64::new(0.5, -0.5));
        assert_eq!((s.p, s.q, s.nu), (0.5, 0.5, 1.0));
        let r = Complex64::from_polar(1.0, 0.7);
        let s = complex_power(r, r);
        assert_abs_diff_eq!(s.p, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q, 0.0, epsilon = 1e-15);
    }

    fn series_of(v: Vec<Complex64>, dt: f64) -> DqSeries {
        let i = vec![Complex64::new(0.0, 0.0); v.len()];
        DqSeries::from_parts(0.0, dt, &v, &i).unwrap()
    }

    #[test]
    fn phase_of_constants() {
        let s = series_of(vec![Complex64::new(1.0, 0.0); 5], 1e-3);
        assert!(to_phase(&s).unwrap().theta().iter().all(|z| z.norm() == 0.0));
        let s = series_of(vec![Complex64::new(0.5, 0.0); 5], 1e-3);
        for z in to_phase(&s).unwrap().theta() {
            assert_abs_diff_eq!(z.re, 0.5f64.ln(), epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn phase_of_rotating_voltage_is_linear_in_time() {
        let (omega, dt) = (2.0 * PI * 7.3, 1e-3);
        let v: Vec<_> = (0..2000)
            .map(|k| Complex64::from_polar(1.0, omega * k as f64 * dt))
            .collect();
        let ph = to_phase(&series_of(v, dt)).unwrap();
        for (k, z) in ph.theta().iter().enumerate() {
            assert_abs_diff_eq!(z.im, omega * k as f64 * dt, epsilon = 1e-10);
        }
        assert!(ph.theta().windows(2).all(|w| w[1].im > w[0].im));
    }

    #[test]
    fn phase_of_rejects_collapsed_voltage() {
        let s = series_of(vec![Complex64::new(1.0, 0.0), Complex64::new(1e-7, 0.0)], 1e-3);
        match to_phase(&s) {
            Err(Error::VoltageTooSmall { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn complex_frequency_examples() {
        let dt = 1e-3;
        let ramp = |f: &dyn Fn(f64) -> Complex64| {
            PhaseSeries::new((0..50).map(|k| f(k as f64 * dt)).collect(), dt).unwrap()
        };
        for eta in complex_frequency(&ramp(&|t| Complex64::new(0.0, 314.0 * t))).unwrap() {
            assert_abs_diff_eq!(eta.im, 314.0, epsilon = 1e-9);
            assert_abs_diff_eq!(eta.re, 0.0);
        }
        for eta in complex_frequency(&ramp(&|t| Complex64::new(-2.5 * t, 0.0))).unwrap() {
            assert_abs_diff_eq!(eta.re, -2.5, epsilon = 1e-9);
        }
        for eta in complex_frequency(&ramp(&|_| Complex64::new(0.3, 1.0))).unwrap() {
            assert_eq!(eta, Complex64::new(0.0, 0.0));
        }
        let short = PhaseSeries::new(vec![Complex64::new(0.0, 0.0); 2], dt).unwrap();
        assert!(matches!(complex_frequency(&short), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn downsample_counts_and_identity() {
        let s = series_of(vec![Complex64::new(1.0, 0.0); 20_000], 50e-6);
        let d = downsample(&s, 1e-3).unwrap();
        assert_eq!(d.len(), 1000);
        assert_abs_diff_eq!(d.dt(), 1e-3, epsilon = 1e-15);
        let s = series_of(vec![Complex64::new(1.0, 0.0); 21_001], 50e-6);
        assert_eq!(downsample(&s, 1e-3).unwrap().len(), 1051);
        assert_eq!(downsample(&s, 50e-6).unwrap(), s);
        assert!(matches!(downsample(&s, 0.7e-4), Err(Error::NonIntegerRatio { .. })));
    }

    #[test]
    fn downsample_preserves_slow_sinusoid() {
        let dt = 50e-6;
        let f = 10.0;
        let v: Vec<_> = (0..40_000)
            .map(|k| Complex64::new((2.0 * PI * f * k as f64 * dt).sin(), 0.0))
            .collect();
        let d = downsample(&series_of(v, dt), 1e-3).unwrap();
        for s in d.samples() {
            let analytic = (2.0 * PI * f * s.t).sin();
            assert!((s.v.re - analytic).abs() < 1e-3, "t = {}: {} vs {analytic}", s.t, s.v.re);
        }
    }

    #[test]
    fn series_rejects_bad_grids() {
        let z = Complex64::new(0.0, 0.0);
        let s = |t: f64| DqSample { t, v: z, i: z };
        assert!(DqSeries::new(vec![], 1.0).is_err());
        assert!(DqSeries::new(vec![s(0.0), s(1.0), s(2.5)], 1.0).is_err());
        assert!(DqSeries::new(vec![s(0.0), s(1.0), s(2.0)], 1.0).is_ok());
    }

    proptest! {
        #[test]
        fn park_round_trip(re in -5.0..5.0f64, im in -5.0..5.0f64, angle in -20.0..20.0f64) {
            let v = Complex64::new(re, im);
            let back = park_transform(inverse_park(v, angle).unwrap(), angle).unwrap();
            prop_assert!((back - v).norm() < 1e-12);
        }

        #[test]
        fn park_rotation_covariance(phi in -PI..PI, amp in 0.1..2.0f64, a in -10.0..10.0f64, delta in -3.0..3.0f64) {
            let abc = balanced(amp, phi, 0.4);
            let base = park_transform(abc, a).unwrap();
            let shifted = park_transform(abc, a + delta).unwrap();
            prop_assert!((shifted - base * Complex64::from_polar(1.0, -delta)).norm() < 1e-12);
        }

        #[test]
        fn power_rotation_invariance(vr in -2.0..2.0f64, vi in -2.0..2.0f64, ir in -2.0..2.0f64, ii in -2.0..2.0f64, alpha in -10.0..10.0f64) {
            let (v, i) = (Complex64::new(vr, vi), Complex64::new(ir, ii));
            let r = Complex64::from_polar(1.0, alpha);
            let (a, b) = (complex_power(v, i), complex_power(v * r, i * r));
            prop_assert!((a.p - b.p).abs() < 1e-12 && (a.q - b.q).abs() < 1e-12 && (a.nu - b.nu).abs() < 1e-12);
        }

        #[test]
        fn phase_exp_round_trip_and_continuity(
            mags in proptest::collection::vec(1e-5..10.0f64, 2..200),
            omega_dt in -3.0..3.0f64,
            phase0 in -PI..PI,
        ) {
            let v: Vec<_> = mags
                .iter()
                .enumerate()
                .map(|(k, &m)| Complex64::from_polar(m, phase0 + omega_dt * k as f64))
                .collect();
            let ph = phase_of(&v, 1e-3, EPSILON_V).unwrap();
            for (z, v) in ph.voltages().iter().zip(&v) {
                prop_assert!((z - v).norm() <= 1e-12 * v.norm());
            }
            for w in ph.theta().windows(2) {
                prop_assert!((w[1].im - w[0].im).abs() < PI);
            }
        }

        #[test]
        fn complex_frequency_exact_on_affine(slope_re in -50.0..50.0f64, slope_im in -400.0..400.0f64, n in 3usize..100) {
            let dt = 1e-3;
            let slope = Complex64::new(slope_re, slope_im);
            let theta: Vec<_> = (0..n).map(|k| Complex64::new(0.2, -1.0) + slope * (k as f64 * dt)).collect();
            let eta = complex_frequency(&PhaseSeries::new(theta, dt).unwrap()).unwrap();
            for e in eta {
                prop_assert!((e - slope).norm() < 1e-9 * (1.0 + slope.norm()));
            }
        }
    }
}
