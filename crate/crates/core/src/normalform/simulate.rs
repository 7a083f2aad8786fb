use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{error_coordinates, ErrorSeries, HwDiscrete, HwNormalForm};
use crate::error::{Error, Result};
use crate::numerics::{solve_nonlinear, NewtonOptions};
use crate::plants::{Event, Network};
use crate::signal::{DqSeries, PhaseSeries, DT_TOLERANCE};

/// Integration rule for `Θ̇ = η` between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseRule {
    /// `Θ_{k+1} = Θ_k + dt/2 (η_k + η_{k+1})`, with `η_{k+1}` from the
    /// updated state and the held input.
    #[default]
    Trapezoidal,
    /// `Θ_{k+1} = Θ_k + dt η_k`.
    ForwardEuler,
}

#[derive(Debug, Clone)]
pub struct OpenLoopOutput {
    pub phase: PhaseSeries,
    pub voltages: Vec<Complex64>,
}

fn check_dt(model: &HwDiscrete, dt: f64) -> Result<()> {
    if (dt - model.dt).abs() > DT_TOLERANCE * model.dt.max(1.0) {
        return Err(Error::DtMismatch { expected: model.dt, got: dt });
    }
    Ok(())
}

fn check_state(model: &HwDiscrete, xc0: &[f64]) -> Result<()> {
    if xc0.len() != model.n_ivars() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, model has {} internal variables",
            xc0.len(),
            model.n_ivars()
        )));
    }
    Ok(())
}

/// One step of the discrete recursion; returns `ΔΘ`.
struct Stepper<'a> {
    model: &'a HwDiscrete,
    rule: PhaseRule,
    x: DVector<f64>,
    next: DVector<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a HwDiscrete, rule: PhaseRule, xc0: &[f64]) -> Self {
        Self {
            model,
            rule,
            x: DVector::from_column_slice(xc0),
            next: DVector::zeros(xc0.len()),
        }
    }

    fn cx(&self, x: &DVector<f64>) -> Complex64 {
        self.model
            .c
            .iter()
            .zip(x.iter())
            .fold(Complex64::new(0.0, 0.0), |acc, (c, x)| acc + c * x)
    }

    fn step(&mut self, e: &[f64; 3]) -> Complex64 {
        let m = self.model;
        let de = m.d[0] * e[0] + m.d[1] * e[1] + m.d[2] * e[2];
        let n = m.n_ivars();
        self.next.gemv(1.0, &m.a_d, &self.x, 0.0);
        for r in 0..n {
            self.next[r] += m.b_d[(r, 0)] * e[0] + m.b_d[(r, 1)] * e[1] + m.b_d[(r, 2)] * e[2];
        }
        let delta = match self.rule {
            PhaseRule::Trapezoidal => (self.cx(&self.x) + self.cx(&self.next)) * (0.5 * m.dt) + de * m.dt,
            PhaseRule::ForwardEuler => (self.cx(&self.x) + de) * m.dt,
        };
        std::mem::swap(&mut self.x, &mut self.next);
        delta
    }
}

/// Drives the model with a recorded error-coordinate series.
///
/// Sample `k` of the output depends on inputs `0..k` only.
pub fn simulate_open_loop(
    model: &HwDiscrete,
    e: &ErrorSeries,
    theta0: Complex64,
    xc0: &[f64],
    rule: PhaseRule,
) -> Result<OpenLoopOutput> {
    check_dt(model, e.dt)?;
    check_state(model, xc0)?;
    let mut stepper = Stepper::new(model, rule, xc0);
    let mut theta = Vec::with_capacity(e.len());
    let mut th = theta0;
    for ek in &e.e {
        theta.push(th);
        th += stepper.step(ek);
    }
    let phase = PhaseSeries::new(theta, model.dt)?;
    let voltages = phase.voltages();
    Ok(OpenLoopOutput { phase, voltages })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedLoopOptions {
    pub rule: PhaseRule,
    /// Stop at the first sample whose `|v|` leaves this band.
    pub stop_band: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopOutput {
    pub series: DqSeries,
    /// Time of the first sample outside the stop band, if any.
    pub left_band_at: Option<f64>,
}

/// Trajectories of one model instance per network port.
#[derive(Debug, Clone)]
pub struct MultiPortOutput {
    pub ports: Vec<DqSeries>,
    /// Time of the first sample where any port left the stop band.
    pub left_band_at: Option<f64>,
}

/// Couples the model to an algebraic network: the current at each sample
/// is solved from the voltage at that same sample.
pub fn simulate_closed_loop(
    model: &HwDiscrete,
    network: &Network,
    t_span: f64,
    theta0: Complex64,
    xc0: &[f64],
    events: &[Event],
    options: ClosedLoopOptions,
) -> Result<ClosedLoopOutput> {
    if network.ports() != 1 {
        return Err(Error::Dimension(format!(
            "normal form has one port, network has {}",
            network.ports()
        )));
    }
    let out = simulate_closed_loop_ports(model, network, t_span, &[(theta0, xc0.to_vec())], events, options)?;
    Ok(ClosedLoopOutput {
        series: out.ports.into_iter().next().expect("one port"),
        left_band_at: out.left_band_at,
    })
}

/// As [`simulate_closed_loop`] with an identical copy of the model behind
/// every port of `network`. `init` holds `(Θ₀, x₀)` per port.
pub fn simulate_closed_loop_ports(
    model: &HwDiscrete,
    network: &Network,
    t_span: f64,
    init: &[(Complex64, Vec<f64>)],
    events: &[Event],
    options: ClosedLoopOptions,
) -> Result<MultiPortOutput> {
    let ports = network.ports();
    if init.len() != ports {
        return Err(Error::Dimension(format!("{} initial states for {ports} ports", init.len())));
    }
    for (_, x) in init {
        check_state(model, x)?;
    }
    network.validate()?;
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::param("events", "must be sorted by time"));
    }
    let dt = model.dt;
    let steps = (t_span / dt).round() as usize;
    let mut network = network.clone();
    let mut steppers: Vec<Stepper> = init.iter().map(|(_, x)| Stepper::new(model, options.rule, x)).collect();
    let mut th: Vec<Complex64> = init.iter().map(|(t, _)| *t).collect();
    let mut v = vec![Vec::with_capacity(steps); ports];
    let mut i = vec![Vec::with_capacity(steps); ports];
    let mut ev = 0;
    let mut left_band_at = None;
    let mut vk = vec![Complex64::new(0.0, 0.0); ports];
    let mut cur = vec![Complex64::new(0.0, 0.0); ports];
    'time: for k in 0..steps {
        let t = k as f64 * dt;
        while ev < events.len() && events[ev].t <= t + 1e-9 * dt {
            network.apply(&events[ev]);
            ev += 1;
        }
        for (p, out) in vk.iter_mut().enumerate() {
            *out = th[p].exp();
            if !(out.re.is_finite() && out.im.is_finite()) {
                return Err(Error::NonFiniteState { t });
            }
            if let Some((lo, hi)) = options.stop_band {
                if !(lo..=hi).contains(&out.norm()) {
                    left_band_at = Some(t);
                    break 'time;
                }
            }
        }
        network.currents(t, &vk, &mut cur);
        for p in 0..ports {
            let e = error_coordinates(vk[p], cur[p], &model.setpoints);
            v[p].push(vk[p]);
            i[p].push(cur[p]);
            th[p] += steppers[p].step(&e);
            if steppers[p].x.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteState { t: t + dt });
            }
        }
    }
    if v[0].is_empty() {
        return Err(Error::InvalidSeries("closed-loop run produced no samples".into()));
    }
    let ports = v
        .iter()
        .zip(&i)
        .map(|(v, i)| DqSeries::from_parts(0.0, dt, v, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiPortOutput { ports, left_band_at })
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub theta: Complex64,
    pub xc: Vec<f64>,
    pub e: [f64; 3],
    pub residual_norm: f64,
}

/// Steady state `ẋ_c = 0`, `η = 0` of the model closed through a one-port
/// network, by damped Newton iteration. `None` when no solution with
/// residual below 1e-10 is found.
pub fn equilibrium(model: &HwNormalForm, network: &Network) -> Option<Equilibrium> {
    if network.ports() != 1 {
        log::warn!("equilibrium: network has {} ports, expected 1", network.ports());
        return None;
    }
    equilibrium_ports(model, network).and_then(|v| v.into_iter().next())
}

/// Steady state with one copy of the model behind every port.
pub fn equilibrium_ports(model: &HwNormalForm, network: &Network) -> Option<Vec<Equilibrium>> {
    let n = model.n_ivars();
    let ports = network.ports();
    let w = n + 2;
    let voltages = |z: &[f64]| -> Vec<Complex64> { (0..ports).map(|p| Complex64::new(z[p * w + n], z[p * w + n + 1]).exp()).collect() };
    let residual = |z: &[f64], r: &mut [f64]| -> Result<()> {
        let v = voltages(z);
        let mut i = vec![Complex64::new(0.0, 0.0); ports];
        network.currents(0.0, &v, &mut i);
        for p in 0..ports {
            let zp = &z[p * w..(p + 1) * w];
            let rp = &mut r[p * w..(p + 1) * w];
            let e = error_coordinates(v[p], i[p], &model.setpoints);
            let mut eta = model.d[0] * e[0] + model.d[1] * e[1] + model.d[2] * e[2];
            for row in 0..n {
                let mut acc = 0.0;
                for col in 0..n {
                    acc += model.a[(row, col)] * zp[col];
                }
                for (j, ej) in e.iter().enumerate() {
                    acc += model.b[(row, j)] * ej;
                }
                rp[row] = acc;
                eta += model.c[row] * zp[row];
            }
            rp[n] = eta.re;
            rp[n + 1] = eta.im;
        }
        Ok(())
    };
    let mut z0 = vec![0.0; w * ports];
    for p in 0..ports {
        z0[p * w + n] = model.setpoints.v.ln();
    }
    let outcome = match solve_nonlinear(residual, &z0, w * ports, NewtonOptions::default()) {
        Ok(o) => o,
        Err(err) => {
            log::warn!("equilibrium: {err}");
            return None;
        }
    };
    if !outcome.converged || outcome.residual_norm > 1e-10 {
        log::warn!(
            "equilibrium: no solution (residual {:e}, Jacobian conditioning {:e})",
            outcome.residual_norm,
            outcome.jacobian_conditioning
        );
        return None;
    }
    let v = voltages(&outcome.x);
    let mut i = vec![Complex64::new(0.0, 0.0); ports];
    network.currents(0.0, &v, &mut i);
    Some(
        (0..ports)
            .map(|p| Equilibrium {
                theta: Complex64::new(outcome.x[p * w + n], outcome.x[p * w + n + 1]),
                xc: outcome.x[p * w..p * w + n].to_vec(),
                e: error_coordinates(v[p], i[p], &model.setpoints),
                residual_norm: outcome.residual_norm,
            })
            .collect(),
    )
}
