use num_complex::Complex64;

use super::network::{Event, Network};
use super::Plant;
use crate::error::{Error, Result};
use crate::numerics::{solve_nonlinear, NewtonOptions, Rk4};
use crate::signal::{decimation_ratio, DqSeries};

/// Recorded terminal trajectories of every port.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub ports: Vec<DqSeries>,
    /// Complex power delivered by the slack at each recorded sample.
    pub grid_import: Vec<Complex64>,
    pub final_state: Vec<f64>,
}

/// Fixed-step RK4 of `ẋ = f(t, x)` from `t = 0` to `t_end`.
pub fn integrate_ode<F>(mut f: F, x0: &[f64], t_end: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::param("dt", "step and horizon must be positive"));
    }
    let steps = (t_end / dt).round() as usize;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut rk = Rk4::new(x.len());
    for k in 0..steps {
        let t = k as f64 * dt;
        rk.step(&mut f, t, &x, dt, &mut next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t + dt });
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

fn offsets(plants: &[Plant]) -> Vec<usize> {
    let mut out = Vec::with_capacity(plants.len() + 1);
    let mut acc = 0;
    out.push(0);
    for p in plants {
        acc += p.state_dim();
        out.push(acc);
    }
    out
}

struct Coupled<'a> {
    plants: &'a [Plant],
    offsets: Vec<usize>,
    v: Vec<Complex64>,
    i: Vec<Complex64>,
}

impl<'a> Coupled<'a> {
    fn new(plants: &'a [Plant]) -> Self {
        Self {
            plants,
            offsets: offsets(plants),
            v: vec![Complex64::new(0.0, 0.0); plants.len()],
            i: vec![Complex64::new(0.0, 0.0); plants.len()],
        }
    }

    fn terminals(&mut self, network: &Network, t: f64, x: &[f64]) {
        for (k, p) in self.plants.iter().enumerate() {
            self.v[k] = p.terminal_voltage(&x[self.offsets[k]..self.offsets[k + 1]]);
        }
        network.currents(t, &self.v, &mut self.i);
    }

    fn rhs(&mut self, network: &Network, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        self.terminals(network, t, x);
        for (k, p) in self.plants.iter().enumerate() {
            let (a, b) = (self.offsets[k], self.offsets[k + 1]);
            p.rhs(&x[a..b], self.i[k], &mut dx[a..b])?;
        }
        Ok(())
    }
}

fn check_ports(plants: &[Plant], network: &Network, x: &[f64]) -> Result<()> {
    if plants.len() != network.ports() {
        return Err(Error::Dimension(format!(
            "{} plants for a network with {} ports",
            plants.len(),
            network.ports()
        )));
    }
    let dim: usize = plants.iter().map(Plant::state_dim).sum();
    if x.len() != dim {
        return Err(Error::Dimension(format!("state has {} entries, plants need {dim}", x.len())));
    }
    for p in plants {
        p.validate()?;
    }
    network.validate()
}

/// Steady state of the coupled plants for the network as given.
pub fn equilibrium(plants: &[Plant], network: &Network) -> Result<Vec<f64>> {
    let mut x0 = Vec::new();
    for p in plants {
        x0.extend(p.nominal_state(Complex64::new(p.setpoints().v, 0.0)));
    }
    check_ports(plants, network, &x0)?;
    let mut coupled = Coupled::new(plants);
    let outcome = solve_nonlinear(
        |x, r| coupled.rhs(network, 0.0, x, r),
        &x0,
        x0.len(),
        NewtonOptions::default(),
    )?;
    if outcome.residual_norm > 1e-10 {
        return Err(Error::Optimization(format!(
            "plant equilibrium not found (residual {:e} after {} iterations)",
            outcome.residual_norm, outcome.iterations
        )));
    }
    Ok(outcome.x)
}

/// Fixed-step RK4 simulation of plants coupled through `network`.
///
/// Steps are split at event instants so no step straddles a discontinuity.
/// Samples are recorded every `dt_record` on `[0, t_span)`, after any events
/// at that instant.
pub fn integrate(
    plants: &[Plant],
    network: &Network,
    x0: &[f64],
    t_span: f64,
    dt_sim: f64,
    dt_record: f64,
    events: &[Event],
) -> Result<SimulationOutput> {
    check_ports(plants, network, x0)?;
    if !(dt_sim > 0.0) || !(t_span > 0.0) {
        return Err(Error::param("dt_sim", "step and horizon must be positive"));
    }
    let ratio = decimation_ratio(dt_sim, dt_record)?;
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::param("events", "must be sorted by time"));
    }
    if events.iter().any(|e| !(e.t >= 0.0 && e.t <= t_span)) {
        return Err(Error::param("events", "event outside the simulated span"));
    }

    let mut network = network.clone();
    let mut coupled = Coupled::new(plants);
    let n_ports = plants.len();
    let steps = (t_span / dt_sim).round() as usize;
    let tiny = 1e-9 * dt_sim;

    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut rk = Rk4::new(x.len());
    let mut v_rec: Vec<Vec<Complex64>> = vec![Vec::new(); n_ports];
    let mut i_rec: Vec<Vec<Complex64>> = vec![Vec::new(); n_ports];
    let mut import = Vec::new();
    let mut ev = 0;

    for k in 0..steps {
        let t = k as f64 * dt_sim;
        while ev < events.len() && events[ev].t <= t + tiny {
            network.apply(&events[ev]);
            ev += 1;
        }
        if k % ratio == 0 {
            coupled.terminals(&network, t, &x);
            for p in 0..n_ports {
                v_rec[p].push(coupled.v[p]);
                i_rec[p].push(coupled.i[p]);
            }
            import.push(network.grid_import(t, &coupled.v));
        }
        let t_end = (k + 1) as f64 * dt_sim;
        let mut t_cur = t;
        while ev < events.len() && events[ev].t < t_end - tiny {
            let h = events[ev].t - t_cur;
            if h > tiny {
                let net = &network;
                rk.step(&mut |tt, xx: &[f64], dx: &mut [f64]| coupled.rhs(net, tt, xx, dx), t_cur, &x, h, &mut next)?;
                std::mem::swap(&mut x, &mut next);
                t_cur = events[ev].t;
            }
            network.apply(&events[ev]);
            ev += 1;
        }
        let net = &network;
        rk.step(
            &mut |tt, xx: &[f64], dx: &mut [f64]| coupled.rhs(net, tt, xx, dx),
            t_cur,
            &x,
            t_end - t_cur,
            &mut next,
        )?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_end });
        }
        std::mem::swap(&mut x, &mut next);
    }

    let dt = dt_sim * ratio as f64;
    let ports = v_rec
        .iter()
        .zip(&i_rec)
        .map(|(v, i)| DqSeries::from_parts(0.0, dt, v, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationOutput {
        ports,
        grid_import: import,
        final_state: x,
    })
}
