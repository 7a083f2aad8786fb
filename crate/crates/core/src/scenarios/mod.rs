//! Excitation protocols, scenario simulation and dataset partitioning.

mod dataset;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::normalform::{equilibrium_ports, simulate_closed_loop_ports, ClosedLoopOptions, HwNormalForm, Setpoints};
use crate::plants::{self, line_admittance, Event, EventKind, Network, Plant};
use crate::signal::{downsample, DqSeries};

pub use dataset::{
    build_dataset, check_excitation, partition_counts, split_records, Dataset, Partition, Record,
};

/// Derives an independent seed for a named sub-stream of `root`.
pub fn sub_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioClass {
    MagnitudeSteps,
    FrequencySteps,
    RapidChanges,
    OodLoadStep,
    OodIslanding,
}

impl ScenarioClass {
    pub fn label(&self) -> &'static str {
        match self {
            ScenarioClass::MagnitudeSteps => "magnitude",
            ScenarioClass::FrequencySteps => "frequency",
            ScenarioClass::RapidChanges => "rapid",
            ScenarioClass::OodLoadStep => "ood-load-step",
            ScenarioClass::OodIslanding => "ood-islanding",
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, ScenarioClass::OodLoadStep | ScenarioClass::OodIslanding)
    }
}

/// What the device under test is connected to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioNetwork {
    /// Stiff bus behind the configured line, slack placed so the device
    /// sits at its setpoints.
    StiffBus,
    /// Resistive load of conductance `g`.
    Load { g: f64 },
    /// Two identical devices, each behind the configured line, feeding a
    /// load bus that connects to the stiff bus through the same line.
    MicroGrid { load_g: f64 },
}

/// A timed script of network changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub class: ScenarioClass,
    pub network: ScenarioNetwork,
    pub events: Vec<Event>,
    pub duration: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::param("duration", "must be positive"));
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::param("events", "must be sorted by time"));
        }
        for e in &self.events {
            if !(e.t >= 0.0 && e.t < self.duration) {
                return Err(Error::param("events", format!("event at {} s outside the scenario", e.t)));
            }
            match e.kind {
                EventKind::SlackMagnitude(m) if !(m > 0.0) => {
                    return Err(Error::param("events", "slack magnitude must be positive"))
                }
                EventKind::LoadConductance(g) if !(g > 0.0) => {
                    return Err(Error::param("events", "load conductance must be positive"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Warns and returns `false` when segments are shorter than ten times
    /// the slowest plant time constant.
    pub fn check_dwell(&self, slowest_time_constant: f64) -> bool {
        let mut times: Vec<f64> = vec![0.0];
        times.extend(self.events.iter().map(|e| e.t));
        times.push(self.duration);
        let shortest = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
        let ok = shortest >= 10.0 * slowest_time_constant;
        if !ok && self.class != ScenarioClass::RapidChanges {
            log::warn!(
                "scenario {}: dwell {shortest} s is shorter than 10x the slowest time constant ({slowest_time_constant} s)",
                self.name
            );
        }
        ok
    }
}

/// Allowed slack magnitude range for step protocols.
pub const LEVEL_GUARD: (f64, f64) = (0.8, 1.2);

fn piecewise_events(values: &[f64], dwell: f64, nominal: f64, kind: fn(f64) -> EventKind) -> Vec<Event> {
    let mut events = Vec::new();
    let mut current = nominal;
    for (k, &v) in values.iter().enumerate() {
        if v != current {
            events.push(Event { t: k as f64 * dwell, kind: kind(v) });
            current = v;
        }
    }
    events
}

/// Slack magnitude steps through `levels` (multiples of nominal), `dwell`
/// seconds each.
pub fn magnitude_step_scenario(levels: &[f64], dwell: f64, seed: u64) -> Result<Scenario> {
    if levels.is_empty() {
        return Err(Error::param("levels", "at least one level is required"));
    }
    if let Some(l) = levels.iter().find(|l| !(LEVEL_GUARD.0..=LEVEL_GUARD.1).contains(*l)) {
        return Err(Error::param("levels", format!("level {l} outside [{}, {}] pu", LEVEL_GUARD.0, LEVEL_GUARD.1)));
    }
    if !(dwell > 0.0) {
        return Err(Error::param("dwell", "must be positive"));
    }
    Ok(Scenario {
        name: format!("magnitude-{seed:016x}"),
        class: ScenarioClass::MagnitudeSteps,
        network: ScenarioNetwork::StiffBus,
        events: piecewise_events(levels, dwell, 1.0, EventKind::SlackMagnitude),
        duration: levels.len() as f64 * dwell,
        seed,
    })
}

/// Slack frequency offsets (Hz) held `dwell` seconds each.
pub fn frequency_step_scenario(deviations: &[f64], dwell: f64, seed: u64) -> Result<Scenario> {
    if !(dwell > 0.0) {
        return Err(Error::param("dwell", "must be positive"));
    }
    if deviations.iter().any(|d| !d.is_finite() || d.abs() > 5.0) {
        return Err(Error::param("deviations", "must be finite and within ±5 Hz"));
    }
    let segments = deviations.len().max(1);
    Ok(Scenario {
        name: format!("frequency-{seed:016x}"),
        class: ScenarioClass::FrequencySteps,
        network: ScenarioNetwork::StiffBus,
        events: piecewise_events(deviations, dwell, 0.0, EventKind::SlackFrequency),
        duration: segments as f64 * dwell,
        seed,
    })
}

/// Seeded piecewise-constant magnitude and frequency perturbations with a
/// new draw every `step_period`, starting after the first period.
pub fn rapid_small_changes_scenario(
    duration: f64,
    step_period: f64,
    mag_range: f64,
    freq_range: f64,
    seed: u64,
) -> Result<Scenario> {
    if !(duration > 0.0 && step_period > 0.0) {
        return Err(Error::param("step_period", "duration and period must be positive"));
    }
    if !((0.0..0.2).contains(&mag_range) && freq_range >= 0.0) {
        return Err(Error::param("mag_range", "ranges must be non-negative (magnitude below 0.2)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let steps = (duration / step_period).ceil() as usize;
    for k in 1..steps {
        let t = k as f64 * step_period;
        if t >= duration {
            break;
        }
        let m: f64 = rng.random_range(-1.0..=1.0);
        let f: f64 = rng.random_range(-1.0..=1.0);
        if mag_range > 0.0 {
            events.push(Event { t, kind: EventKind::SlackMagnitude(1.0 + mag_range * m) });
        }
        if freq_range > 0.0 {
            events.push(Event { t, kind: EventKind::SlackFrequency(freq_range * f) });
        }
    }
    Ok(Scenario {
        name: format!("rapid-{seed:016x}"),
        class: ScenarioClass::RapidChanges,
        network: ScenarioNetwork::StiffBus,
        events,
        duration,
        seed,
    })
}

/// Resistive load sized for the setpoint, whose conductance increases in
/// three steps.
pub fn ood_load_step_scenario(setpoints: &Setpoints) -> Scenario {
    let g0 = setpoints.p / setpoints.nu();
    let events = [1.1, 1.2, 1.3]
        .iter()
        .enumerate()
        .map(|(k, f)| Event { t: 1.0 + 2.0 * k as f64, kind: EventKind::LoadConductance(g0 * f) })
        .collect();
    Scenario {
        name: "ood-load-step".into(),
        class: ScenarioClass::OodLoadStep,
        network: ScenarioNetwork::Load { g: g0 },
        events,
        duration: 8.0,
        seed: 0,
    }
}

/// Two devices importing power from the stiff bus until the breaker opens.
pub fn ood_islanding_scenario(setpoints: &Setpoints) -> Scenario {
    // Load absorbs 40 % more than both devices' setpoints at nominal
    // voltage, so the grid supplies the difference before islanding.
    let load_g = 1.4 * 2.0 * setpoints.p / setpoints.nu();
    Scenario {
        name: "ood-islanding".into(),
        class: ScenarioClass::OodIslanding,
        network: ScenarioNetwork::MicroGrid { load_g },
        events: vec![Event { t: 2.0, kind: EventKind::Breaker(false) }],
        duration: 6.0,
        seed: 0,
    }
}

/// Knobs of the default excitation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub instances_per_class: usize,
    pub magnitude_step_min: f64,
    pub magnitude_step_max: f64,
    pub magnitude_dwell: f64,
    pub magnitude_cycles: usize,
    pub frequency_step_min: f64,
    pub frequency_step_max: f64,
    pub frequency_dwell: f64,
    pub frequency_cycles: usize,
    pub rapid_duration: f64,
    pub rapid_period: f64,
    pub rapid_mag_range: f64,
    pub rapid_freq_range: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            instances_per_class: 5,
            magnitude_step_min: 0.02,
            magnitude_step_max: 0.05,
            magnitude_dwell: 2.0,
            magnitude_cycles: 5,
            frequency_step_min: 0.1,
            frequency_step_max: 0.2,
            frequency_dwell: 2.0,
            frequency_cycles: 5,
            rapid_duration: 60.0,
            rapid_period: 1.0,
            rapid_mag_range: 0.01,
            rapid_freq_range: 0.1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("magnitude_step", self.magnitude_step_min, self.magnitude_step_max),
            ("frequency_step", self.frequency_step_min, self.frequency_step_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::param(name, "need 0 <= min <= max"));
            }
        }
        if self.instances_per_class == 0 {
            return Err(Error::param("instances_per_class", "must be at least 1"));
        }
        if self.magnitude_cycles == 0 || self.frequency_cycles == 0 {
            return Err(Error::param("cycles", "must be at least 1"));
        }
        Ok(())
    }
}

fn cycle_values(rng: &mut ChaCha8Rng, cycles: usize, lo: f64, hi: f64, base: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * cycles);
    for _ in 0..cycles {
        let up: f64 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let down: f64 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out.extend([base, base + up, base, base - down]);
    }
    out
}

/// The three in-distribution protocols, `instances_per_class` each, with
/// seeds drawn from named sub-streams of `seed`.
pub fn default_scenarios(protocol: &ProtocolConfig, seed: u64) -> Result<Vec<Scenario>> {
    protocol.validate()?;
    let mut out = Vec::new();
    for k in 0..protocol.instances_per_class {
        let s = sub_seed(seed, &format!("scenario/magnitude/{k}"));
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let levels = cycle_values(
            &mut rng,
            protocol.magnitude_cycles,
            protocol.magnitude_step_min,
            protocol.magnitude_step_max,
            1.0,
        );
        let mut sc = magnitude_step_scenario(&levels, protocol.magnitude_dwell, s)?;
        sc.name = format!("magnitude-{k:02}");
        out.push(sc);
    }
    for k in 0..protocol.instances_per_class {
        let s = sub_seed(seed, &format!("scenario/frequency/{k}"));
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let devs = cycle_values(
            &mut rng,
            protocol.frequency_cycles,
            protocol.frequency_step_min,
            protocol.frequency_step_max,
            0.0,
        );
        let mut sc = frequency_step_scenario(&devs, protocol.frequency_dwell, s)?;
        sc.name = format!("frequency-{k:02}");
        out.push(sc);
    }
    for k in 0..protocol.instances_per_class {
        let s = sub_seed(seed, &format!("scenario/rapid/{k}"));
        let mut sc = rapid_small_changes_scenario(
            protocol.rapid_duration,
            protocol.rapid_period,
            protocol.rapid_mag_range,
            protocol.rapid_freq_range,
            s,
        )?;
        sc.name = format!("rapid-{k:02}");
        out.push(sc);
    }
    Ok(out)
}

/// Line and step settings shared by all simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub line_r: f64,
    pub line_x: f64,
    pub dt_sim: f64,
    pub dt_record: f64,
    /// Step of the preprocessed records.
    pub dt: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            line_r: 0.01,
            line_x: 0.1,
            dt_sim: 5e-5,
            dt_record: 5e-5,
            dt: 1e-3,
        }
    }
}

impl SimulationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.line_r >= 0.0 && self.line_x.is_finite() && (self.line_r > 0.0 || self.line_x != 0.0)) {
            return Err(Error::param("line", "impedance must be nonzero"));
        }
        for (name, v) in [("dt_sim", self.dt_sim), ("dt_record", self.dt_record), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.dt_record < self.dt_sim * (1.0 - 1e-9) {
            return Err(Error::param("dt_record", "must not be shorter than dt_sim"));
        }
        Ok(())
    }

    pub fn line_impedance(&self) -> Complex64 {
        Complex64::new(self.line_r, self.line_x)
    }

    /// Slack phasor that puts a device with setpoints `sp` at `vˢ∠0` and
    /// power `(Pˢ, Qˢ)`.
    pub fn slack_for(&self, sp: &Setpoints) -> Complex64 {
        let v = Complex64::new(sp.v, 0.0);
        let i = Complex64::new(sp.p, -sp.q) / v.conj();
        v - self.line_impedance() * i
    }

    pub fn network(&self, topology: &ScenarioNetwork, sp: &Setpoints) -> Network {
        let z = self.line_impedance();
        let y = line_admittance(z.re, z.im);
        match *topology {
            ScenarioNetwork::StiffBus => Network::stiff_bus(self.slack_for(sp), y),
            ScenarioNetwork::Load { g } => Network::load(g),
            ScenarioNetwork::MicroGrid { load_g } => {
                Network::micro_grid(vec![y, y], y, Complex64::new(sp.v, 0.0), load_g)
            }
        }
    }
}

/// Device that produces the data.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Plant(Plant),
    /// Known normal form, simulated directly at the preprocessed step.
    NormalForm(HwNormalForm),
}

impl Source {
    pub fn setpoints(&self) -> Setpoints {
        match self {
            Source::Plant(p) => p.setpoints(),
            Source::NormalForm(m) => m.setpoints,
        }
    }
}

/// Preprocessed trajectories of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub ports: Vec<DqSeries>,
    /// Slack import at the preprocessed step.
    pub grid_import: Vec<Complex64>,
}

/// Simulates a scenario from the source's equilibrium and preprocesses the
/// result to `settings.dt`.
pub fn simulate_scenario(scenario: &Scenario, source: &Source, settings: &SimulationSettings) -> Result<ScenarioRun> {
    scenario.validate()?;
    settings.validate()?;
    let sp = source.setpoints();
    let network = settings.network(&scenario.network, &sp);
    match source {
        Source::Plant(plant) => {
            scenario.check_dwell(plant.slowest_time_constant());
            let plants = vec![*plant; network.ports()];
            let x0 = plants::equilibrium(&plants, &network)?;
            let out = plants::integrate(
                &plants,
                &network,
                &x0,
                scenario.duration,
                settings.dt_sim,
                settings.dt_record,
                &scenario.events,
            )?;
            let ratio = crate::signal::decimation_ratio(settings.dt_record, settings.dt)?;
            let ports = out
                .ports
                .iter()
                .map(|s| downsample(s, settings.dt))
                .collect::<Result<Vec<_>>>()?;
            let grid_import = out.grid_import.iter().step_by(ratio).copied().collect();
            Ok(ScenarioRun { ports, grid_import })
        }
        Source::NormalForm(model) => {
            let run = run_model_scenario(scenario, model, settings, ClosedLoopOptions::default())?;
            Ok(ScenarioRun { ports: run.ports, grid_import: run.grid_import })
        }
    }
}

/// Closed-loop run of a normal form on a scenario.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub ports: Vec<DqSeries>,
    pub grid_import: Vec<Complex64>,
    /// First time any port left `options.stop_band`.
    pub left_band_at: Option<f64>,
}

/// Runs one copy of `model` behind every port of the scenario network,
/// starting from the closed-loop equilibrium, at the preprocessed step.
pub fn run_model_scenario(
    scenario: &Scenario,
    model: &HwNormalForm,
    settings: &SimulationSettings,
    options: ClosedLoopOptions,
) -> Result<ModelRun> {
    scenario.validate()?;
    settings.validate()?;
    let network = settings.network(&scenario.network, &model.setpoints);
    let eq = equilibrium_ports(model, &network)
        .ok_or_else(|| Error::Optimization(format!("model has no equilibrium on the {} network", scenario.name)))?;
    let d = model.discretize(settings.dt)?;
    let init: Vec<_> = eq.into_iter().map(|e| (e.theta, e.xc)).collect();
    let out = simulate_closed_loop_ports(&d, &network, scenario.duration, &init, &scenario.events, options)?;
    let mut net = network.clone();
    let len = out.ports[0].len();
    let mut grid_import = Vec::with_capacity(len);
    let mut ev = 0;
    let mut v = vec![Complex64::new(0.0, 0.0); out.ports.len()];
    for k in 0..len {
        let t = out.ports[0].samples()[k].t;
        while ev < scenario.events.len() && scenario.events[ev].t <= t + 1e-9 * settings.dt {
            net.apply(&scenario.events[ev]);
            ev += 1;
        }
        for (vp, port) in v.iter_mut().zip(&out.ports) {
            *vp = port.samples()[k].v;
        }
        grid_import.push(net.grid_import(t, &v));
    }
    Ok(ModelRun { ports: out.ports, grid_import, left_band_at: out.left_band_at })
}
