//! Algebraic network closures: terminal currents as explicit functions of
//! the inverter voltages.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single network element seen from one inverter terminal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetworkElement {
    /// Ideal source `slack` behind a line of admittance `y`.
    StiffBus { slack: Complex64, y: Complex64 },
    /// Conductance `g` to ground.
    ResistiveLoad { g: f64 },
    /// Series admittance `y` to ground.
    Line { y: Complex64 },
}

impl NetworkElement {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NetworkElement::ResistiveLoad { g } if !(g > 0.0) => {
                Err(Error::param("g", format!("load conductance must be positive, got {g}")))
            }
            NetworkElement::StiffBus { y, .. } | NetworkElement::Line { y } if !(y.norm() > 0.0) => {
                Err(Error::param("y", "line admittance must be nonzero"))
            }
            _ => Ok(()),
        }
    }
}

/// Current drawn out of the inverter terminal at voltage `v`.
pub fn couple(v: Complex64, element: &NetworkElement) -> Complex64 {
    match *element {
        NetworkElement::StiffBus { slack, y } => (v - slack) * y,
        NetworkElement::ResistiveLoad { g } => v * g,
        NetworkElement::Line { y } => v * y,
    }
}

/// Admittance of a series `r + jx` impedance.
pub fn line_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(r, x)
}

/// Discrete change of the network at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum EventKind {
    /// Slack magnitude as a multiple of its nominal value.
    SlackMagnitude(f64),
    /// Slack frequency offset from nominal, in Hz.
    SlackFrequency(f64),
    /// Load conductance in pu.
    LoadConductance(f64),
    /// `true` closes the breaker towards the slack, `false` opens it.
    Breaker(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Time-varying quantities of the external grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridState {
    /// Slack phasor at nominal magnitude and `t = 0`.
    pub slack_nominal: Complex64,
    pub magnitude_level: f64,
    pub frequency_offset_hz: f64,
    /// Slack angle offset accumulated up to `t_ref`.
    angle_ref: f64,
    t_ref: f64,
    pub load_g: f64,
    pub breaker_closed: bool,
}

impl GridState {
    pub fn new(slack_nominal: Complex64, load_g: f64) -> Self {
        Self {
            slack_nominal,
            magnitude_level: 1.0,
            frequency_offset_hz: 0.0,
            angle_ref: 0.0,
            t_ref: 0.0,
            load_g,
            breaker_closed: true,
        }
    }

    /// Frame-relative slack phasor at `t`.
    pub fn slack_voltage(&self, t: f64) -> Complex64 {
        let angle = self.angle_ref + 2.0 * PI * self.frequency_offset_hz * (t - self.t_ref);
        self.slack_nominal * self.magnitude_level * Complex64::from_polar(1.0, angle)
    }

    pub fn apply(&mut self, event: &Event) {
        match event.kind {
            EventKind::SlackMagnitude(level) => self.magnitude_level = level,
            EventKind::SlackFrequency(hz) => {
                self.angle_ref += 2.0 * PI * self.frequency_offset_hz * (event.t - self.t_ref);
                self.t_ref = event.t;
                self.frequency_offset_hz = hz;
            }
            EventKind::LoadConductance(g) => self.load_g = g,
            EventKind::Breaker(closed) => self.breaker_closed = closed,
        }
    }
}

/// How the inverter ports are wired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    /// One inverter behind a line to the slack.
    StiffBus { y_line: Complex64 },
    /// One inverter feeding a conductance.
    Load,
    /// Several inverters, each behind its own line to a common load bus,
    /// which connects through a breaker and line to the slack.
    MicroGrid {
        y_ports: Vec<Complex64>,
        y_grid: Complex64,
    },
}

/// Network topology together with its current grid state.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub topology: Topology,
    pub state: GridState,
}

impl Network {
    pub fn stiff_bus(slack_nominal: Complex64, y_line: Complex64) -> Self {
        Self {
            topology: Topology::StiffBus { y_line },
            state: GridState::new(slack_nominal, 0.0),
        }
    }

    pub fn load(g: f64) -> Self {
        Self {
            topology: Topology::Load,
            state: GridState::new(Complex64::new(0.0, 0.0), g),
        }
    }

    pub fn micro_grid(y_ports: Vec<Complex64>, y_grid: Complex64, slack_nominal: Complex64, load_g: f64) -> Self {
        Self {
            topology: Topology::MicroGrid { y_ports, y_grid },
            state: GridState::new(slack_nominal, load_g),
        }
    }

    pub fn ports(&self) -> usize {
        match &self.topology {
            Topology::MicroGrid { y_ports, .. } => y_ports.len(),
            _ => 1,
        }
    }

    /// Whether rotating every inverter voltage rotates the currents equally.
    pub fn is_rotation_invariant(&self) -> bool {
        match &self.topology {
            Topology::Load => true,
            Topology::StiffBus { .. } => false,
            Topology::MicroGrid { .. } => !self.state.breaker_closed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.topology {
            Topology::StiffBus { y_line } => NetworkElement::StiffBus {
                slack: self.state.slack_nominal,
                y: *y_line,
            }
            .validate(),
            Topology::Load => NetworkElement::ResistiveLoad { g: self.state.load_g }.validate(),
            Topology::MicroGrid { y_ports, y_grid } => {
                if y_ports.is_empty() {
                    return Err(Error::param("y_ports", "micro-grid needs at least one port"));
                }
                for y in y_ports.iter().chain(std::iter::once(y_grid)) {
                    NetworkElement::Line { y: *y }.validate()?;
                }
                if self.state.load_g < 0.0 {
                    return Err(Error::param("load_g", "must be non-negative"));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, event: &Event) {
        self.state.apply(event);
    }

    /// Voltage of the common load bus of a micro-grid (KCL solve).
    fn load_bus_voltage(&self, t: f64, y_ports: &[Complex64], y_grid: Complex64, v: &[Complex64]) -> Complex64 {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = Complex64::new(self.state.load_g, 0.0);
        for (y, vk) in y_ports.iter().zip(v) {
            num += y * vk;
            den += y;
        }
        if self.state.breaker_closed {
            num += y_grid * self.state.slack_voltage(t);
            den += y_grid;
        }
        num / den
    }

    /// Terminal currents out of each inverter.
    pub fn currents(&self, t: f64, v: &[Complex64], out: &mut [Complex64]) {
        match &self.topology {
            Topology::StiffBus { y_line } => {
                out[0] = couple(
                    v[0],
                    &NetworkElement::StiffBus {
                        slack: self.state.slack_voltage(t),
                        y: *y_line,
                    },
                );
            }
            Topology::Load => {
                out[0] = couple(v[0], &NetworkElement::ResistiveLoad { g: self.state.load_g });
            }
            Topology::MicroGrid { y_ports, y_grid } => {
                let bus = self.load_bus_voltage(t, y_ports, *y_grid, v);
                for ((o, y), vk) in out.iter_mut().zip(y_ports).zip(v) {
                    *o = (vk - bus) * y;
                }
            }
        }
    }

    /// Complex power delivered by the slack into the network (zero when the
    /// topology has no slack or the breaker is open).
    pub fn grid_import(&self, t: f64, v: &[Complex64]) -> Complex64 {
        match &self.topology {
            Topology::StiffBus { y_line } => {
                let vs = self.state.slack_voltage(t);
                vs * ((vs - v[0]) * y_line).conj()
            }
            Topology::Load => Complex64::new(0.0, 0.0),
            Topology::MicroGrid { y_ports, y_grid } => {
                if !self.state.breaker_closed {
                    return Complex64::new(0.0, 0.0);
                }
                let vs = self.state.slack_voltage(t);
                let bus = self.load_bus_voltage(t, y_ports, *y_grid, v);
                vs * ((vs - bus) * y_grid).conj()
            }
        }
    }
}
