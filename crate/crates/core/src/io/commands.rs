//! The pipeline stages behind the command-line driver. Each stage writes one
//! directory, listed in its manifest, and replaces it only on success.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{load_model, RunConfig};
use super::dataset::{read_dataset, simulate_dataset, write_dataset};
use super::manifest::Manifest;
use super::series::write_dq;
use super::svg::line_chart;
use super::{write_atomically, write_file};
use crate::error::{Error, Result};
use crate::metrics::{compare_trajectories, evaluate as evaluate_model, predict, EvalReport, TrajectoryComparison};
use crate::normalform::{ClosedLoopOptions, HwNormalForm, PhaseRule};
use crate::plants::Plant;
use crate::scenarios::{
    ood_islanding_scenario, ood_load_step_scenario, run_model_scenario, simulate_scenario, Partition, Scenario,
    ScenarioClass, ScenarioNetwork, SimulationSettings, Source,
};
use crate::signal::DqSeries;
use crate::sysid::{self, IdentConfig, IdentResult, RecordScore, StabilityReport, Termination, TraceEntry, EPSILON_SELECT};

/// `|v|` band (pu) outside which a closed-loop run counts as diverged.
pub const DIVERGENCE_BAND: (f64, f64) = (0.5, 1.5);
/// Closing window of each segment used for steady-state comparisons.
pub const SETTLE_WINDOW: f64 = 0.2;

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn put(dir: &Path, manifest: &mut Manifest, rel: &str, text: &str) -> Result<()> {
    write_file(&dir.join(rel), text.as_bytes())?;
    manifest.add_file(dir, rel)
}

// ---- simulate ----

/// Simulates the configured dataset into `out`.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    write_atomically(out, |dir| simulate_into(config, dir))
}

fn simulate_into(config: &RunConfig, dir: &Path) -> Result<Manifest> {
    let (ds, source) = simulate_dataset(config)?;
    write_dataset(dir, &ds, config, &source)
}

// ---- identify ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Orders {
    Single(usize),
    Sweep(Vec<usize>),
}

impl Orders {
    /// Parses `a..b` (inclusive) or `a..=b`.
    pub fn parse_range(text: &str) -> Result<Vec<usize>> {
        let bad = || Error::param("sweep", format!("expected a range like 1..6, got `{text}`"));
        let (a, b) = text.split_once("..").ok_or_else(bad)?;
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct IdentifyOverrides {
    pub max_iters: Option<usize>,
    pub restarts: Option<usize>,
}

/// Summary written to `report.json` for one identified order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub n_ivars: usize,
    pub train_loss: f64,
    pub validation_score: f64,
    pub validation: Vec<RecordScore>,
    pub selected_restart: usize,
    pub selected_iteration: usize,
    pub terminations: Vec<Termination>,
    pub stability: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub n_ivars: usize,
    pub validation_score: f64,
    pub train_loss: f64,
    pub stable: bool,
    pub directory: String,
}

/// Written to `selection.json` by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epsilon: f64,
    pub selected: usize,
    pub orders: Vec<OrderSummary>,
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub results: Vec<IdentResult>,
    pub selected: usize,
}

impl IdentifyOutcome {
    pub fn selected_result(&self) -> &IdentResult {
        self.results.iter().find(|r| r.n_ivars == self.selected).expect("selected order is present")
    }
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("restart,iteration,loss,gradient_norm,validation_score\n");
    for t in trace {
        let score = t.validation_score.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", t.restart, t.iteration, t.loss, t.gradient_norm, score);
    }
    out
}

fn write_result(dir: &Path, prefix: &str, result: &IdentResult, data_hash: &str, manifest: &mut Manifest) -> Result<()> {
    let mut model = result.model.clone();
    model.provenance.data_manifest_hash = Some(data_hash.to_string());
    put(dir, manifest, &format!("{prefix}model.json"), &model.to_json())?;
    put(dir, manifest, &format!("{prefix}init_model.json"), &result.init_model.to_json())?;
    put(dir, manifest, &format!("{prefix}trace.csv"), &trace_csv(&result.trace))?;
    let report = IdentReport {
        n_ivars: result.n_ivars,
        train_loss: result.train_loss,
        validation_score: result.validation_score,
        validation: result.validation.clone(),
        selected_restart: result.selected_restart,
        selected_iteration: result.selected_iteration,
        terminations: result.terminations.clone(),
        stability: result.stability.clone(),
    };
    put(dir, manifest, &format!("{prefix}report.json"), &to_json(&report))
}

/// Identifies one order, or sweeps several, on the dataset in `data`.
pub fn identify(data: &Path, orders: &Orders, overrides: &IdentifyOverrides, out: &Path) -> Result<IdentifyOutcome> {
    let loaded = read_dataset(data)?;
    write_atomically(out, |dir| identify_loaded(&loaded, orders, overrides, dir))
}

fn identify_loaded(
    loaded: &super::LoadedDataset,
    orders: &Orders,
    overrides: &IdentifyOverrides,
    dir: &Path,
) -> Result<IdentifyOutcome> {
    let run_config = loaded.config()?;
    let mut config: IdentConfig = run_config.ident_config();
    if let Some(m) = overrides.max_iters {
        config.max_iters = m;
    }
    if let Some(r) = overrides.restarts {
        config.restarts = r;
    }
    let order_list = match orders {
        Orders::Single(n) => vec![*n],
        Orders::Sweep(list) => list.clone(),
    };
    if order_list.is_empty() {
        return Err(Error::param("sweep", "no orders given"));
    }
    for n in &order_list {
        IdentConfig { n_ivars: *n, ..config.clone() }.validate()?;
    }
    let data_hash = loaded.manifest.digest();
    let mut manifest = Manifest::new(
        "identify",
        serde_json::json!({ "identify": config, "orders": order_list }),
    );
    manifest.seeds.insert("optimizer".into(), config.seed);
    manifest.inputs.insert("dataset".into(), data_hash.clone());
    let ds = &loaded.dataset;
    let outcome = match orders {
        Orders::Single(n) => {
            let r = sysid::identify(ds, &IdentConfig { n_ivars: *n, ..config.clone() })?;
            write_result(dir, "", &r, &data_hash, &mut manifest)?;
            IdentifyOutcome { selected: r.n_ivars, results: vec![r] }
        }
        Orders::Sweep(list) => {
            let sweep = sysid::order_sweep(ds, list, &config)?;
            let mut summaries = Vec::new();
            for r in &sweep.results {
                let sub = format!("order-{:02}", r.n_ivars);
                write_result(dir, &format!("{sub}/"), r, &data_hash, &mut manifest)?;
                summaries.push(OrderSummary {
                    n_ivars: r.n_ivars,
                    validation_score: r.validation_score,
                    train_loss: r.train_loss,
                    stable: r.stability.stable,
                    directory: sub,
                });
            }
            let selection = Selection { epsilon: EPSILON_SELECT, selected: sweep.selected, orders: summaries };
            put(dir, &mut manifest, "selection.json", &to_json(&selection))?;
            let mut model = sweep.selected_result().model.clone();
            model.provenance.data_manifest_hash = Some(data_hash.clone());
            put(dir, &mut manifest, "model.json", &model.to_json())?;
            IdentifyOutcome { selected: sweep.selected, results: sweep.results }
        }
    };
    manifest.write(dir)?;
    Ok(outcome)
}

// ---- evaluate ----

/// `None` evaluates every record.
pub fn parse_partition(name: &str) -> Result<Option<Partition>> {
    if name == "all" {
        return Ok(None);
    }
    Partition::parse(name)
        .map(Some)
        .ok_or_else(|| Error::param("partition", format!("unknown partition `{name}` (train, validation, test, ood, all)")))
}

fn report_csv(report: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("record,partition,r2_d,r2_q,r2_theta_re,r2_theta_im,max_abs_error,mean_abs_error,harmonic_flag\n");
    for r in &report.records {
        let flag = r.spectrum.as_ref().map(|s| s.flagged.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            r.partition.label(),
            opt(r.r2_d),
            opt(r.r2_q),
            opt(r.r2_theta_re),
            opt(r.r2_theta_im),
            r.max_abs_error,
            r.mean_abs_error,
            flag
        );
    }
    out
}

pub const OVERLAY_HEADER: &str = "t,v_d_measured,v_d_predicted,v_q_measured,v_q_predicted,abs_v_measured,abs_v_predicted";

fn overlay_csv(times: &[f64], measured: &[Complex64], predicted: &[Complex64]) -> String {
    let mut out = String::with_capacity(96 * times.len());
    out.push_str(OVERLAY_HEADER);
    out.push('\n');
    for ((t, m), p) in times.iter().zip(measured).zip(predicted) {
        let _ = writeln!(out, "{t},{},{},{},{},{},{}", m.re, p.re, m.im, p.im, m.norm(), p.norm());
    }
    out
}

/// Open-loop evaluation of `model` on the records of `partition`.
pub fn evaluate(model_path: &Path, data: &Path, partition: Option<Partition>, out: &Path) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let loaded = read_dataset(data)?;
    write_atomically(out, |dir| evaluate_loaded(&model, model_path, &loaded, partition, dir))
}

fn evaluate_loaded(
    model: &HwNormalForm,
    model_path: &Path,
    loaded: &super::LoadedDataset,
    partition: Option<Partition>,
    dir: &Path,
) -> Result<EvalReport> {
    let ds = &loaded.dataset;
    if model.setpoints != ds.setpoints {
        log::warn!("model setpoints {:?} differ from the dataset's {:?}", model.setpoints, ds.setpoints);
    }
    let selected: Vec<_> = ds
        .records
        .iter()
        .zip(&ds.partitions)
        .filter(|(_, p)| partition.is_none_or(|q| q == **p))
        .map(|(r, p)| (r, *p))
        .collect();
    if selected.is_empty() {
        let name = partition.map(|p| p.label()).unwrap_or("all");
        return Err(Error::param("partition", format!("no records in partition `{name}`")));
    }
    let rule = PhaseRule::Trapezoidal;
    let report = evaluate_model(model, &selected, rule, true)?;
    let mut manifest = Manifest::new(
        "evaluate",
        serde_json::json!({ "partition": partition.map(|p| p.label()).unwrap_or("all"), "rule": rule }),
    );
    manifest.add_input("model", model_path)?;
    manifest.inputs.insert("dataset".into(), loaded.manifest.digest());
    put(dir, &mut manifest, "report.json", &to_json(&report))?;
    put(dir, &mut manifest, "report.csv", &report_csv(&report))?;
    for (record, _) in &selected {
        let p = predict(model, record, rule)?;
        let rel = format!("overlays/{}.csv", record.name);
        put(dir, &mut manifest, &rel, &overlay_csv(&record.series.times(), &p.measured, &p.predicted))?;
    }
    manifest.write(dir)?;
    Ok(report)
}

// ---- closed loop ----

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioChoice {
    LoadStep,
    Islanding,
    /// Stiff bus at the setpoints with no events.
    StiffBus { duration: f64 },
    Custom(Scenario),
}

impl ScenarioChoice {
    /// Built-in names, or a path to a TOML scenario file.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "load-step" => Ok(Self::LoadStep),
            "islanding" => Ok(Self::Islanding),
            "stiff-bus" => Ok(Self::StiffBus { duration: 5.0 }),
            path => {
                let path = Path::new(path);
                if !path.is_file() {
                    return Err(Error::param(
                        "scenario",
                        format!("`{}` is neither load-step, islanding, stiff-bus nor a scenario file", path.display()),
                    ));
                }
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                let scenario: Scenario = toml::from_str(&text).map_err(|e| Error::Parse {
                    file: path.to_path_buf(),
                    line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
                    msg: e.message().to_string(),
                })?;
                scenario.validate()?;
                Ok(Self::Custom(scenario))
            }
        }
    }

    pub fn build(&self, model: &HwNormalForm) -> Scenario {
        match self {
            Self::LoadStep => ood_load_step_scenario(&model.setpoints),
            Self::Islanding => ood_islanding_scenario(&model.setpoints),
            Self::StiffBus { duration } => Scenario {
                name: "stiff-bus".into(),
                class: ScenarioClass::MagnitudeSteps,
                network: ScenarioNetwork::StiffBus,
                events: Vec::new(),
                duration: *duration,
                seed: 0,
            },
            Self::Custom(s) => s.clone(),
        }
    }
}

/// Written to `summary.json` by a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub scenario: String,
    pub ports: usize,
    pub band: (f64, f64),
    /// First time the model's `|v|` left the band; the run stops there.
    pub left_band_at: Option<f64>,
    pub plant: Option<Plant>,
    /// One comparison per port when a plant was given.
    pub comparisons: Vec<TrajectoryComparison>,
    pub max_abs_magnitude_error: Option<f64>,
    pub frequency_error_relative: Option<f64>,
}

fn port_file(stem: &str, port: usize, ports: usize) -> String {
    if ports == 1 {
        format!("{stem}.csv")
    } else {
        format!("{stem}-port{port}.csv")
    }
}

/// Runs the model in closed loop on a scenario and, given a plant, the
/// plant on the same event script.
pub fn closed_loop(
    model_path: &Path,
    scenario: &ScenarioChoice,
    plant: Option<Plant>,
    settings: &SimulationSettings,
    out: &Path,
) -> Result<ClosedLoopSummary> {
    let model = load_model(model_path)?;
    settings.validate()?;
    if let Some(p) = &plant {
        p.validate()?;
    }
    write_atomically(out, |dir| closed_loop_into(&model, model_path, scenario, plant, settings, dir))
}

fn closed_loop_into(
    model: &HwNormalForm,
    model_path: &Path,
    choice: &ScenarioChoice,
    plant: Option<Plant>,
    settings: &SimulationSettings,
    dir: &Path,
) -> Result<ClosedLoopSummary> {
    let scenario = choice.build(model);
    let options = ClosedLoopOptions { stop_band: Some(DIVERGENCE_BAND), ..Default::default() };
    let run = run_model_scenario(&scenario, model, settings, options)?;
    if let Some(t) = run.left_band_at {
        log::warn!("model left the |v| band {DIVERGENCE_BAND:?} at t = {t} s");
    }
    let mut manifest = Manifest::new(
        "closed-loop",
        serde_json::json!({ "scenario": scenario, "plant": plant, "simulation": settings }),
    );
    manifest.add_input("model", model_path)?;
    let ports = run.ports.len();
    for (k, s) in run.ports.iter().enumerate() {
        put(dir, &mut manifest, &port_file("model", k, ports), &write_dq(s))?;
    }
    let mut comparisons = Vec::new();
    if let Some(p) = plant {
        if p.setpoints() != model.setpoints {
            log::warn!("plant and model setpoints differ");
        }
        let plant_run = simulate_scenario(&scenario, &Source::Plant(p), settings)?;
        let events: Vec<f64> = scenario.events.iter().map(|e| e.t).collect();
        for (k, (m, ps)) in run.ports.iter().zip(&plant_run.ports).enumerate() {
            put(dir, &mut manifest, &port_file("plant", k, ports), &write_dq(ps))?;
            comparisons.push(compare_trajectories(m, ps, &events, SETTLE_WINDOW)?);
        }
    }
    let max_abs_magnitude_error = comparisons.iter().map(|c| c.max_abs_magnitude_error).reduce(f64::max);
    let frequency_error_relative = comparisons.iter().filter_map(|c| c.frequency_error_relative).reduce(f64::max);
    let summary = ClosedLoopSummary {
        scenario: scenario.name.clone(),
        ports,
        band: DIVERGENCE_BAND,
        left_band_at: run.left_band_at,
        plant,
        comparisons,
        max_abs_magnitude_error,
        frequency_error_relative,
    };
    put(dir, &mut manifest, "summary.json", &to_json(&summary))?;
    manifest.write(dir)?;
    Ok(summary)
}

// ---- sweep ----

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub identify: IdentifyOutcome,
    pub test_report: EvalReport,
}

/// Simulate, sweep the orders, and evaluate the selected model on the
/// test partition: `dataset/`, `identify/` and `evaluate/` under `out`.
pub fn sweep(config: &RunConfig, orders: &[usize], overrides: &IdentifyOverrides, out: &Path) -> Result<SweepOutcome> {
    config.validate()?;
    write_atomically(out, |dir| {
        let data = dir.join("dataset");
        std::fs::create_dir_all(&data).map_err(|e| Error::io(format!("creating {}", data.display()), e))?;
        simulate_into(config, &data)?;
        let loaded = read_dataset(&data)?;
        let ident_dir = dir.join("identify");
        std::fs::create_dir_all(&ident_dir).map_err(|e| Error::io(format!("creating {}", ident_dir.display()), e))?;
        let identify = identify_loaded(&loaded, &Orders::Sweep(orders.to_vec()), overrides, &ident_dir)?;
        let model_path = ident_dir.join("model.json");
        let model = load_model(&model_path)?;
        let eval_dir = dir.join("evaluate");
        std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(format!("creating {}", eval_dir.display()), e))?;
        let test_report = evaluate_loaded(&model, &model_path, &loaded, Some(Partition::Test), &eval_dir)?;
        let mut manifest = Manifest::new("sweep", serde_json::json!({ "run": config, "orders": orders }));
        manifest.seeds.insert("root".into(), config.seed);
        for sub in ["dataset", "identify", "evaluate"] {
            manifest.add_file(dir, &format!("{sub}/manifest.json"))?;
        }
        manifest.write(dir)?;
        Ok(SweepOutcome { identify, test_report })
    })
}

// ---- report ----

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), msg: e.to_string() })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn read_overlay(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cols = vec![Vec::new(); 7];
    for (k, line) in text.lines().enumerate().skip(1) {
        for (c, field) in line.split(',').enumerate().take(7) {
            let v = field.parse::<f64>().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line: k + 1,
                msg: format!("bad number `{field}`"),
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn report_section(run: &Path, md: &mut String, charts: &mut Vec<(String, String)>, prefix: &str) -> Result<()> {
    let manifest = Manifest::read(run)?;
    manifest.verify(run)?;
    let _ = writeln!(md, "## {} ({})\n", manifest.kind, run.display());
    match manifest.kind.as_str() {
        "dataset" => {
            let index: super::DatasetIndex = read_json(&run.join(super::dataset::INDEX_FILE))?;
            let _ = writeln!(md, "| record | class | partition |\n|---|---|---|");
            for r in &index.records {
                let _ = writeln!(md, "| {} | {} | {} |", r.name, r.class.label(), r.partition.label());
            }
            let _ = writeln!(md, "\ncounts: {:?}\n", index.counts);
        }
        "identify" => {
            if run.join("selection.json").is_file() {
                let sel: Selection = read_json(&run.join("selection.json"))?;
                let _ = writeln!(md, "| n_ivars | validation score | train loss | stable |\n|---|---|---|---|");
                for o in &sel.orders {
                    let mark = if o.n_ivars == sel.selected { " (selected)" } else { "" };
                    let _ = writeln!(md, "| {}{mark} | {:.6} | {:e} | {} |", o.n_ivars, o.validation_score, o.train_loss, o.stable);
                }
                let x: Vec<f64> = sel.orders.iter().map(|o| o.n_ivars as f64).collect();
                let y: Vec<f64> = sel.orders.iter().map(|o| o.validation_score).collect();
                charts.push((format!("{prefix}sweep.svg"), line_chart("validation score by order", "n_ivars", &x, &[("validation", &y)])));
                let _ = writeln!(md, "\nselected order: {}\n", sel.selected);
            } else {
                let r: IdentReport = read_json(&run.join("report.json"))?;
                let _ = writeln!(
                    md,
                    "n_ivars {}, train loss {:e}, validation score {:.6}, terminations {:?}, stable {}\n",
                    r.n_ivars, r.train_loss, r.validation_score, r.terminations, r.stability.stable
                );
            }
        }
        "evaluate" => {
            let report: EvalReport = read_json(&run.join("report.json"))?;
            let _ = writeln!(md, "| record | partition | R² v_d | R² v_q | harmonic flag |\n|---|---|---|---|---|");
            for r in &report.records {
                let flag = match &r.spectrum {
                    Some(s) if s.flagged => {
                        let f: Vec<String> = s.harmonics.iter().filter(|h| h.flagged).map(|h| format!("{} Hz", h.frequency)).collect();
                        format!("yes ({})", f.join(", "))
                    }
                    Some(_) => "no".into(),
                    None => "-".into(),
                };
                let _ = writeln!(md, "| {} | {} | {} | {} | {flag} |", r.name, r.partition.label(), fmt_opt(r.r2_d), fmt_opt(r.r2_q));
                let overlay = run.join(format!("overlays/{}.csv", r.name));
                if overlay.is_file() {
                    let c = read_overlay(&overlay)?;
                    charts.push((
                        format!("{prefix}{}-v_d.svg", r.name),
                        line_chart(&format!("{}: v_d", r.name), "t [s]", &c[0], &[("measured", &c[1]), ("predicted", &c[2])]),
                    ));
                    charts.push((
                        format!("{prefix}{}-v_q.svg", r.name),
                        line_chart(&format!("{}: v_q", r.name), "t [s]", &c[0], &[("measured", &c[3]), ("predicted", &c[4])]),
                    ));
                }
            }
            for (name, p) in &report.partitions {
                let _ = writeln!(md, "\n{name}: {} records, mean R² v_d {}, v_q {}", p.records, fmt_opt(p.mean_r2_d), fmt_opt(p.mean_r2_q));
            }
            md.push('\n');
        }
        "closed-loop" => {
            let s: ClosedLoopSummary = read_json(&run.join("summary.json"))?;
            let _ = writeln!(
                md,
                "scenario {}, ports {}, left band at {:?}, max |Δ|v|| {}, frequency error (relative) {}\n",
                s.scenario,
                s.ports,
                s.left_band_at,
                fmt_opt(s.max_abs_magnitude_error),
                fmt_opt(s.frequency_error_relative)
            );
            let model_file = port_file("model", 0, s.ports);
            let plant_file = port_file("plant", 0, s.ports);
            let load = |f: &str| -> Result<Option<DqSeries>> {
                let p = run.join(f);
                if p.is_file() {
                    super::read_series(&p).map(Some)
                } else {
                    Ok(None)
                }
            };
            if let Some(m) = load(&model_file)? {
                let t = m.times();
                let mag: Vec<f64> = m.voltages().iter().map(|z| z.norm()).collect();
                let plant = load(&plant_file)?;
                let pm: Vec<f64> = plant
                    .map(|p| p.voltages().iter().map(|z| z.norm()).chain(std::iter::repeat(f64::NAN)).take(t.len()).collect())
                    .unwrap_or_else(|| vec![f64::NAN; t.len()]);
                charts.push((
                    format!("{prefix}closed-loop.svg"),
                    line_chart(&format!("{}: |v|", s.scenario), "t [s]", &t, &[("model", &mag), ("plant", &pm)]),
                ));
            }
        }
        "sweep" => {
            for sub in ["dataset", "identify", "evaluate"] {
                report_section(&run.join(sub), md, charts, &format!("{sub}-"))?;
            }
        }
        other => return Err(Error::Manifest(format!("{}: unknown run kind `{other}`", run.display()))),
    }
    Ok(())
}

/// Markdown summary and SVG charts of a run directory, written to `out`.
/// Returns the markdown.
pub fn report(run: &Path, out: &Path) -> Result<String> {
    write_atomically(out, |dir| {
        let mut md = String::from("# Run report\n\n");
        let mut charts = Vec::new();
        report_section(run, &mut md, &mut charts, "")?;
        let mut manifest = Manifest::new("report", serde_json::json!({}));
        manifest.inputs.insert("run".into(), Manifest::read(run)?.digest());
        if !charts.is_empty() {
            md.push_str("## Charts\n\n");
        }
        for (name, svg) in &charts {
            let rel = format!("charts/{name}");
            put(dir, &mut manifest, &rel, svg)?;
            let _ = writeln!(md, "![{name}]({rel})");
        }
        put(dir, &mut manifest, "report.md", &md)?;
        manifest.write(dir)?;
        Ok(md)
    })
}
