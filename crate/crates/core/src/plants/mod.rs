//! Reference grid-forming inverter simulators: droop and dVOC outer loops
//! behind a first-order actuation lag, coupled to algebraic networks.

mod integrate;
mod network;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalform::Setpoints;
use crate::signal::{complex_power, EPSILON_V, OMEGA_0};

pub use integrate::{equilibrium, integrate, integrate_ode, SimulationOutput};
pub use network::{
    couple, line_admittance, Event, EventKind, GridState, Network, NetworkElement, Topology,
};

/// Droop control: frequency from filtered active power, magnitude from
/// filtered reactive power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopParams {
    /// rad/s per pu active power.
    pub k_p: f64,
    /// pu voltage per pu reactive power.
    pub k_q: f64,
    pub tau_p: f64,
    pub tau_q: f64,
    /// Actuation lag; 0 makes the terminal an ideal source.
    pub tau_act: f64,
    pub setpoints: Setpoints,
    /// Absolute angular frequency setpoint, rad/s.
    pub omega_s: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        Self {
            k_p: 0.02 * OMEGA_0,
            k_q: 0.05,
            tau_p: 0.05,
            tau_q: 0.05,
            tau_act: 0.002,
            setpoints: Setpoints::default(),
            omega_s: OMEGA_0,
        }
    }
}

/// Dispatchable virtual oscillator: amplitude regulation towards `vˢ` plus
/// rotation driven by the power error, rotated by the impedance angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvocParams {
    pub eta_gain: f64,
    pub alpha_gain: f64,
    pub kappa: f64,
    pub tau_act: f64,
    pub setpoints: Setpoints,
    pub omega_s: f64,
}

impl Default for DvocParams {
    fn default() -> Self {
        Self {
            eta_gain: 20.0,
            alpha_gain: 10.0,
            kappa: std::f64::consts::FRAC_PI_2,
            tau_act: 0.002,
            setpoints: Setpoints::default(),
            omega_s: OMEGA_0,
        }
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be positive and finite, got {value}")))
    }
}

fn non_negative(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be non-negative and finite, got {value}")))
    }
}

impl DroopParams {
    pub fn validate(&self) -> Result<()> {
        positive("tau_p", self.tau_p)?;
        positive("tau_q", self.tau_q)?;
        non_negative("tau_act", self.tau_act)?;
        if !self.k_p.is_finite() || !self.k_q.is_finite() || !self.omega_s.is_finite() {
            return Err(Error::param("droop", "gains must be finite"));
        }
        self.setpoints.validate()
    }
}

impl DvocParams {
    pub fn validate(&self) -> Result<()> {
        positive("eta_gain", self.eta_gain)?;
        positive("alpha_gain", self.alpha_gain)?;
        non_negative("tau_act", self.tau_act)?;
        if !self.kappa.is_finite() || !self.omega_s.is_finite() {
            return Err(Error::param("dvoc", "kappa and omega_s must be finite"));
        }
        self.setpoints.validate()
    }
}

/// A grid-forming controller with its actuation lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Plant {
    Droop(DroopParams),
    Dvoc(DvocParams),
}

/// Real state of one plant at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Plant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Plant::Droop(p) => p.validate(),
            Plant::Dvoc(p) => p.validate(),
        }
    }

    pub fn setpoints(&self) -> Setpoints {
        match self {
            Plant::Droop(p) => p.setpoints,
            Plant::Dvoc(p) => p.setpoints,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Droop(_) => 5,
            Plant::Dvoc(_) => 4,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            Plant::Droop(_) => &["delta", "p_filt", "q_filt", "v_re", "v_im"],
            Plant::Dvoc(_) => &["osc_re", "osc_im", "v_re", "v_im"],
        }
    }

    /// Slowest internal time constant, used to judge scenario dwell times.
    pub fn slowest_time_constant(&self) -> f64 {
        match self {
            Plant::Droop(p) => p.tau_p.max(p.tau_q).max(p.tau_act),
            Plant::Dvoc(p) => (1.0 / p.eta_gain).max(1.0 / (2.0 * p.alpha_gain)).max(p.tau_act),
        }
    }

    /// State at the setpoint operating point with the terminal at `v`.
    pub fn nominal_state(&self, v: Complex64) -> Vec<f64> {
        match self {
            Plant::Droop(p) => vec![v.arg(), p.setpoints.p, p.setpoints.q, v.re, v.im],
            Plant::Dvoc(_) => vec![v.re, v.im, v.re, v.im],
        }
    }

    /// Terminal voltage as a function of the state.
    pub fn terminal_voltage(&self, x: &[f64]) -> Complex64 {
        match self {
            Plant::Droop(p) => {
                if p.tau_act > 0.0 {
                    Complex64::new(x[3], x[4])
                } else {
                    droop_reference(x, p)
                }
            }
            Plant::Dvoc(p) => {
                if p.tau_act > 0.0 {
                    Complex64::new(x[2], x[3])
                } else {
                    Complex64::new(x[0], x[1])
                }
            }
        }
    }

    pub fn rhs(&self, x: &[f64], i: Complex64, dx: &mut [f64]) -> Result<()> {
        match self {
            Plant::Droop(p) => {
                droop_rhs(x, i, p, dx);
                Ok(())
            }
            Plant::Dvoc(p) => dvoc_rhs(x, i, p, dx),
        }
    }
}

fn droop_reference(x: &[f64], p: &DroopParams) -> Complex64 {
    let v_ref = p.setpoints.v + p.k_q * (p.setpoints.q - x[2]);
    Complex64::from_polar(v_ref, x[0])
}

/// Droop dynamics on `[δ, P̄, Q̄, v_re, v_im]`, frame rotating at the
/// nominal frequency.
pub fn droop_rhs(x: &[f64], i: Complex64, p: &DroopParams, dx: &mut [f64]) {
    let reference = droop_reference(x, p);
    let v = if p.tau_act > 0.0 {
        Complex64::new(x[3], x[4])
    } else {
        reference
    };
    let s = complex_power(v, i);
    dx[0] = (p.omega_s - OMEGA_0) + p.k_p * (p.setpoints.p - x[1]);
    dx[1] = (s.p - x[1]) / p.tau_p;
    dx[2] = (s.q - x[2]) / p.tau_q;
    if p.tau_act > 0.0 {
        let dv = (reference - v) / p.tau_act;
        dx[3] = dv.re;
        dx[4] = dv.im;
    } else {
        dx[3] = 0.0;
        dx[4] = 0.0;
    }
}

/// dVOC dynamics on `[osc_re, osc_im, v_re, v_im]`.
pub fn dvoc_rhs(x: &[f64], i: Complex64, p: &DvocParams, dx: &mut [f64]) -> Result<()> {
    let osc = Complex64::new(x[0], x[1]);
    let amplitude = osc.norm();
    if !(amplitude > EPSILON_V) {
        return Err(Error::AmplitudeUnderflow { magnitude: amplitude });
    }
    let sp = &p.setpoints;
    let nu_s = sp.v * sp.v;
    let dispatch = Complex64::new(sp.p, -sp.q) / nu_s * osc - i;
    let sync = Complex64::from_polar(p.eta_gain, p.kappa) * dispatch;
    let amp = osc * (p.alpha_gain * (nu_s - amplitude * amplitude) / nu_s);
    let drift = Complex64::new(0.0, p.omega_s - OMEGA_0) * osc;
    let d_osc = sync + amp + drift;
    dx[0] = d_osc.re;
    dx[1] = d_osc.im;
    if p.tau_act > 0.0 {
        let dv = (osc - Complex64::new(x[2], x[3])) / p.tau_act;
        dx[2] = dv.re;
        dx[3] = dv.im;
    } else {
        dx[2] = 0.0;
        dx[3] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn droop_setpoint_equilibrium() {
        let p = DroopParams::default();
        let x = [0.0, p.setpoints.p, p.setpoints.q, 1.0, 0.0];
        let i = Complex64::new(p.setpoints.p, -p.setpoints.q);
        let mut dx = [1.0; 5];
        droop_rhs(&x, i, &p, &mut dx);
        for d in dx {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn droop_frequency_arithmetic() {
        let p = DroopParams {
            k_p: 0.1,
            setpoints: Setpoints { p: 1.0, q: 0.0, v: 1.0 },
            ..Default::default()
        };
        let x = [0.0, 0.9, 0.0, 1.0, 0.0];
        let mut dx = [0.0; 5];
        droop_rhs(&x, Complex64::new(0.9, 0.0), &p, &mut dx);
        assert_abs_diff_eq!(dx[0], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn droop_filter_relaxes_with_tau() {
        // Constant measured power Pˢ + 0.1 through an ideal terminal: P̄ is a
        // first-order lag, so at t = τ_P it reaches Pˢ + 0.1 (1 − 1/e).
        let p = DroopParams { tau_act: 0.0, ..Default::default() };
        let i = Complex64::new(p.setpoints.p + 0.1, 0.0);
        let mut x = vec![0.0, p.setpoints.p, 0.0, 0.0, 0.0];
        let steps = 1000;
        let h = p.tau_p / steps as f64;
        let mut out = vec![0.0; 5];
        let mut rk = crate::numerics::Rk4::new(5);
        for k in 0..steps {
            // hold the angle at zero so the current stays at the injected value
            rk.step(
                &mut |_t, x: &[f64], dx: &mut [f64]| {
                    droop_rhs(x, i, &p, dx);
                    dx[0] = 0.0;
                    Ok(())
                },
                k as f64 * h,
                &x,
                h,
                &mut out,
            )
            .unwrap();
            x.copy_from_slice(&out);
        }
        let expected = p.setpoints.p + 0.1 * (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(x[1], expected, epsilon = 1e-10);
    }

    #[test]
    fn dvoc_fixed_point_and_amplitude_sign() {
        let p = DvocParams::default();
        let sp = p.setpoints;
        let v = Complex64::new(sp.v, 0.0);
        let i = Complex64::new(sp.p, -sp.q) / v.conj();
        let mut dx = [1.0; 4];
        dvoc_rhs(&[v.re, v.im, v.re, v.im], i, &p, &mut dx).unwrap();
        for d in dx {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-14);
        }

        let p0 = DvocParams {
            setpoints: Setpoints { p: 0.0, q: 0.0, v: 1.0 },
            ..Default::default()
        };
        let osc = Complex64::from_polar(0.8, 0.3);
        dvoc_rhs(&[osc.re, osc.im, osc.re, osc.im], Complex64::new(0.0, 0.0), &p0, &mut dx).unwrap();
        let radial = (Complex64::new(dx[0], dx[1]) * osc.conj()).re / osc.norm();
        assert!(radial > 0.0);
    }

    #[test]
    fn dvoc_underflow() {
        let p = DvocParams::default();
        let mut dx = [0.0; 4];
        let err = dvoc_rhs(&[0.0, 0.0, 0.0, 0.0], Complex64::new(0.0, 0.0), &p, &mut dx).unwrap_err();
        assert!(matches!(err, Error::AmplitudeUnderflow { .. }));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = DroopParams { tau_p: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let d = DvocParams { eta_gain: -1.0, ..Default::default() };
        assert!(d.validate().is_err());
    }
}
