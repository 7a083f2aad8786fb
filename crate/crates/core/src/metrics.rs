//! R² scores, trajectory errors and the power-spectrum diagnostic.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalform::{simulate_open_loop, ErrorSeries, HwNormalForm, PhaseRule};
use crate::scenarios::{Partition, Record};
use crate::signal::{to_phase, DqSeries, NOMINAL_FREQUENCY_HZ};

/// Coefficient of determination `1 − Σ(y−f)² / Σ(y−ȳ)²`.
pub fn r2(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::LengthMismatch { left: observed.len(), right: predicted.len() });
    }
    if observed.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: observed.len() });
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, f)| (y - f).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One-sided periodogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    /// Power spectral density, units² per Hz.
    pub power: Vec<f64>,
    pub bin_width: f64,
}

pub const MIN_SPECTRUM_LEN: usize = 256;

/// Hann-windowed one-sided periodogram normalized by `fs · Σw²`, so that
/// `Σ power · Δf` estimates the mean square.
pub fn spectrum(series: &[f64], dt: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::TooFewSamples { needed: MIN_SPECTRUM_LEN, got: n });
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectrum input"));
    }
    let w: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let mut buf: Vec<Complex64> = series.iter().zip(&w).map(|(x, w)| Complex64::new(x * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fs = 1.0 / dt;
    let bins = n / 2 + 1;
    let scale = 1.0 / (fs * w2);
    let power = (0..bins)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            let nyquist = n % 2 == 0 && k == n / 2;
            if k == 0 || nyquist {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let df = fs / n as f64;
    Ok(Spectrum {
        frequencies: (0..bins).map(|k| k as f64 * df).collect(),
        power,
        bin_width: df,
    })
}

fn to_db(p: f64) -> f64 {
    10.0 * p.max(1e-300).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCheck {
    pub frequency: f64,
    pub measured_db: f64,
    pub predicted_db: f64,
    /// Measured power stands out of the floor and the prediction misses it
    /// by at least the flag margin.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComparison {
    pub harmonics: Vec<HarmonicCheck>,
    pub flagged: bool,
}

/// Deficit of predicted power, in dB, that flags a harmonic.
pub const HARMONIC_FLAG_DB: f64 = 10.0;
/// Height above the median measured floor for a harmonic to count.
pub const HARMONIC_PROMINENCE_DB: f64 = 20.0;

/// Compares measured and predicted `|v|` spectra at multiples of the
/// nominal frequency.
pub fn compare_spectra(measured: &[f64], predicted: &[f64], dt: f64) -> Result<SpectrumComparison> {
    if measured.len() != predicted.len() {
        return Err(Error::LengthMismatch { left: measured.len(), right: predicted.len() });
    }
    let sm = spectrum(measured, dt)?;
    let sp = spectrum(predicted, dt)?;
    let mut sorted = sm.power.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite power"));
    let floor_db = to_db(sorted[sorted.len() / 2]);
    let nyquist = 0.5 / dt;
    let last = sm.power.len() - 1;
    let peak = |s: &Spectrum, k: usize| {
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(last);
        s.power[lo..=hi].iter().copied().fold(0.0, f64::max)
    };
    let mut harmonics = Vec::new();
    let mut m = 1;
    while (m as f64) * NOMINAL_FREQUENCY_HZ < nyquist {
        let f = m as f64 * NOMINAL_FREQUENCY_HZ;
        let k = (f / sm.bin_width).round() as usize;
        let measured_db = to_db(peak(&sm, k));
        let predicted_db = to_db(peak(&sp, k));
        let flagged =
            measured_db - predicted_db >= HARMONIC_FLAG_DB && measured_db >= floor_db + HARMONIC_PROMINENCE_DB;
        harmonics.push(HarmonicCheck { frequency: f, measured_db, predicted_db, flagged });
        m += 1;
    }
    let flagged = harmonics.iter().any(|h| h.flagged);
    Ok(SpectrumComparison { harmonics, flagged })
}

/// Evaluation of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEval {
    pub name: String,
    pub partition: Partition,
    /// `None` when the measured component has zero variance.
    pub r2_d: Option<f64>,
    pub r2_q: Option<f64>,
    pub r2_theta_re: Option<f64>,
    pub r2_theta_im: Option<f64>,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub spectrum: Option<SpectrumComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub records: usize,
    pub mean_r2_d: Option<f64>,
    pub mean_r2_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<RecordEval>,
    pub partitions: BTreeMap<String, PartitionSummary>,
}

/// Open-loop prediction of one record: measured and predicted voltages.
pub struct Prediction {
    pub measured: Vec<Complex64>,
    pub predicted: Vec<Complex64>,
    pub theta_measured: Vec<Complex64>,
    pub theta_predicted: Vec<Complex64>,
}

/// Drives the model with the record's measured error coordinates, starting
/// from the measured phase and zero internal state.
pub fn predict(model: &HwNormalForm, record: &Record, rule: PhaseRule) -> Result<Prediction> {
    let d = model.discretize(record.series.dt())?;
    let e = ErrorSeries::from_dq(&record.series, &model.setpoints);
    let measured_phase = to_phase(&record.series)?;
    let theta0 = measured_phase.theta()[0];
    let out = simulate_open_loop(&d, &e, theta0, &vec![0.0; model.n_ivars()], rule)?;
    Ok(Prediction {
        measured: record.series.voltages(),
        predicted: out.voltages,
        theta_measured: measured_phase.theta().to_vec(),
        theta_predicted: out.phase.theta().to_vec(),
    })
}

fn optional_r2(obs: &[f64], pred: &[f64]) -> Result<Option<f64>> {
    match r2(obs, pred) {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate_record(model: &HwNormalForm, record: &Record, partition: Partition, rule: PhaseRule, with_spectrum: bool) -> Result<RecordEval> {
    let p = predict(model, record, rule)?;
    let re = |v: &[Complex64]| v.iter().map(|z| z.re).collect::<Vec<_>>();
    let im = |v: &[Complex64]| v.iter().map(|z| z.im).collect::<Vec<_>>();
    let errors: Vec<f64> = p.measured.iter().zip(&p.predicted).map(|(a, b)| (a - b).norm()).collect();
    let spectrum = if with_spectrum && p.measured.len() >= MIN_SPECTRUM_LEN {
        let mag = |v: &[Complex64]| v.iter().map(|z| z.norm()).collect::<Vec<_>>();
        Some(compare_spectra(&mag(&p.measured), &mag(&p.predicted), record.series.dt())?)
    } else {
        None
    };
    Ok(RecordEval {
        name: record.name.clone(),
        partition,
        r2_d: optional_r2(&re(&p.measured), &re(&p.predicted))?,
        r2_q: optional_r2(&im(&p.measured), &im(&p.predicted))?,
        r2_theta_re: optional_r2(&re(&p.theta_measured), &re(&p.theta_predicted))?,
        r2_theta_im: optional_r2(&im(&p.theta_measured), &im(&p.theta_predicted))?,
        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
        mean_abs_error: errors.iter().sum::<f64>() / errors.len() as f64,
        spectrum,
    })
}

/// Per-record evaluation; partition summaries are plain means of the
/// per-record scores, never pooled residuals.
pub fn evaluate(model: &HwNormalForm, records: &[(&Record, Partition)], rule: PhaseRule, with_spectrum: bool) -> Result<EvalReport> {
    use rayon::prelude::*;
    let evals = records
        .par_iter()
        .map(|(r, p)| evaluate_record(model, r, *p, rule, with_spectrum))
        .collect::<Result<Vec<_>>>()?;
    let mut partitions = BTreeMap::new();
    for part in [Partition::Train, Partition::Validation, Partition::Test, Partition::Ood] {
        let members: Vec<&RecordEval> = evals.iter().filter(|e| e.partition == part).collect();
        if members.is_empty() {
            continue;
        }
        partitions.insert(
            part.label().to_string(),
            PartitionSummary {
                records: members.len(),
                mean_r2_d: mean(members.iter().map(|e| e.r2_d)),
                mean_r2_q: mean(members.iter().map(|e| e.r2_q)),
            },
        );
    }
    Ok(EvalReport { records: evals, partitions })
}

/// Steady-state comparison of one event-free segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentComparison {
    pub start: f64,
    pub end: f64,
    /// Mean frequency deviation (rad/s) over the settle window closing the
    /// segment.
    pub model_frequency: f64,
    pub plant_frequency: f64,
    pub model_magnitude: f64,
    pub plant_magnitude: f64,
}

/// Model vs plant trajectories on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub samples: usize,
    pub max_abs_magnitude_error: f64,
    pub segments: Vec<SegmentComparison>,
    /// Largest steady-state frequency error divided by the largest plant
    /// steady-state deviation over the trajectory. `None` when the plant
    /// never leaves nominal frequency.
    pub frequency_error_relative: Option<f64>,
    pub frequency_error_abs: f64,
}

/// Plant deviations below this (rad/s) count as nominal frequency.
const FREQUENCY_FLOOR: f64 = 1e-6;

/// Compares two closed-loop runs sharing a time axis from 0. Segments are
/// split at `event_times`; the last `settle` seconds of each give its
/// steady state.
pub fn compare_trajectories(model: &DqSeries, plant: &DqSeries, event_times: &[f64], settle: f64) -> Result<TrajectoryComparison> {
    let dt = model.dt();
    if (plant.dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::DtMismatch { expected: dt, got: plant.dt() });
    }
    let n = model.len().min(plant.len());
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let vm = model.voltages();
    let vp = plant.voltages();
    let max_abs_magnitude_error = vm[..n].iter().zip(&vp[..n]).map(|(a, b)| (a.norm() - b.norm()).abs()).fold(0.0, f64::max);
    let tm = crate::signal::phase_of(&vm[..n], dt, crate::signal::EPSILON_V)?;
    let tp = crate::signal::phase_of(&vp[..n], dt, crate::signal::EPSILON_V)?;
    let t_end = (n - 1) as f64 * dt;
    let mut bounds = vec![0.0];
    bounds.extend(event_times.iter().copied().filter(|t| *t > 0.0 && *t < t_end));
    bounds.push(t_end);
    let mut segments = Vec::new();
    for w in bounds.windows(2) {
        let hi = ((w[1] / dt).round() as usize).min(n - 1);
        let hi = if hi + 1 < n && w[1] < t_end { hi.saturating_sub(1) } else { hi };
        let span = ((settle / dt).round() as usize).max(1);
        let lo_seg = (w[0] / dt).round() as usize;
        let lo = hi.saturating_sub(span).max(lo_seg);
        if hi <= lo {
            continue;
        }
        let width = (hi - lo) as f64 * dt;
        let freq = |th: &[Complex64]| (th[hi].im - th[lo].im) / width;
        let mag = |v: &[Complex64]| v[lo..=hi].iter().map(|z| z.norm()).sum::<f64>() / (hi - lo + 1) as f64;
        segments.push(SegmentComparison {
            start: w[0],
            end: w[1],
            model_frequency: freq(tm.theta()),
            plant_frequency: freq(tp.theta()),
            model_magnitude: mag(&vm),
            plant_magnitude: mag(&vp),
        });
    }
    let frequency_error_abs = segments.iter().map(|s| (s.model_frequency - s.plant_frequency).abs()).fold(0.0, f64::max);
    let scale = segments.iter().map(|s| s.plant_frequency.abs()).fold(0.0, f64::max);
    let frequency_error_relative = (scale > FREQUENCY_FLOOR).then(|| frequency_error_abs / scale);
    Ok(TrajectoryComparison { samples: n, max_abs_magnitude_error, segments, frequency_error_relative, frequency_error_abs })
}
