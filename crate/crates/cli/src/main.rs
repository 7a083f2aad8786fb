//! `gfmid`: simulate, identify, evaluate, replay and report.
//!
//! Exit status is 0 on success, 1 on a numerical failure and 2 on bad
//! usage, configuration or input files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfmid::error::{Error, Result};
use gfmid::io::commands::{self, IdentifyOverrides, Orders, ScenarioChoice};
use gfmid::io::RunConfig;
use gfmid::plants::{DroopParams, DvocParams, Plant};

#[derive(Parser, Debug)]
#[command(name = "gfmid", version, about = "Normal-form identification of grid-forming inverters")]
struct Cli {
    /// Root for outputs; each command writes to <out-dir>/<command> unless
    /// given --out.
    #[arg(long, global = true, env = "GFMID_OUT_DIR", default_value = "gfmid-out")]
    out_dir: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GFMID_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory; replaced on success.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimizerArgs {
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

impl OptimizerArgs {
    fn overrides(&self) -> IdentifyOverrides {
        IdentifyOverrides { max_iters: self.max_iters, restarts: self.restarts }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlantKind {
    Droop,
    Dvoc,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from a TOML run configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fit a normal-form model, or sweep orders, on a dataset.
    Identify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
        n_ivars: Option<usize>,
        /// Inclusive order range, e.g. 1..6.
        #[arg(long)]
        sweep: Option<String>,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Open-loop evaluation of a model on a dataset partition.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, validation, test, ood or all.
        #[arg(long, default_value = "test")]
        partition: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Replay a model in closed loop, optionally against a plant.
    ClosedLoop {
        #[arg(long)]
        model: PathBuf,
        /// load-step, islanding, stiff-bus, or a scenario TOML file.
        #[arg(long, default_value = "load-step")]
        scenario: String,
        /// Run configuration supplying the plant and simulation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Compare against a plant with default parameters.
        #[arg(long, value_enum)]
        plant: Option<PlantKind>,
        /// Length of the stiff-bus hold, in seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Simulate, sweep orders and evaluate the selected model on the test
    /// partition.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "1..6")]
        orders: String,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Markdown summary and SVG charts of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

fn out_path(root: &Path, out: &OutArg, name: &str) -> PathBuf {
    out.out.clone().unwrap_or_else(|| root.join(name))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter { field: "threads".into(), reason: "must be at least 1".into() });
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already set up: {e}");
        }
    }
    let root = cli.out_dir;
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_path(&root, &out, "simulate");
            let m = commands::simulate(&cfg, &dir)?;
            println!("dataset written to {} ({:?})", dir.display(), m.partitions);
        }
        Command::Identify { data, n_ivars, sweep, optimizer, out } => {
            let orders = match (n_ivars, sweep) {
                (Some(n), _) => Orders::Single(n),
                (None, Some(range)) => Orders::Sweep(Orders::parse_range(&range)?),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let dir = out_path(&root, &out, "identify");
            let outcome = commands::identify(&data, &orders, &optimizer.overrides(), &dir)?;
            for r in &outcome.results {
                println!("n_ivars {}: train loss {:e}, validation score {:.6}", r.n_ivars, r.train_loss, r.validation_score);
            }
            println!("selected n_ivars {}; model written to {}", outcome.selected, dir.join("model.json").display());
        }
        Command::Evaluate { model, data, partition, out } => {
            let partition = commands::parse_partition(&partition)?;
            let dir = out_path(&root, &out, "evaluate");
            let report = commands::evaluate(&model, &data, partition, &dir)?;
            for r in &report.records {
                println!(
                    "{} [{}]: R2 v_d {} v_q {}",
                    r.name,
                    r.partition.label(),
                    r.r2_d.map_or("-".into(), |v| format!("{v:.6}")),
                    r.r2_q.map_or("-".into(), |v| format!("{v:.6}"))
                );
            }
            println!("report written to {}", dir.display());
        }
        Command::ClosedLoop { model, scenario, config, plant, duration, out } => {
            let mut choice = ScenarioChoice::parse(&scenario)?;
            if let ScenarioChoice::StiffBus { duration: d } = &mut choice {
                *d = duration;
            }
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let settings = cfg.as_ref().map(|c| c.simulation).unwrap_or_default();
            let plant = match plant {
                Some(PlantKind::Droop) => Some(Plant::Droop(DroopParams::default())),
                Some(PlantKind::Dvoc) => Some(Plant::Dvoc(DvocParams::default())),
                None => cfg.and_then(|c| c.plant),
            };
            let dir = out_path(&root, &out, "closed-loop");
            let s = commands::closed_loop(&model, &choice, plant, &settings, &dir)?;
            match s.left_band_at {
                Some(t) => println!("model left the |v| band {:?} pu at t = {t} s", s.band),
                None => println!("model stayed within the |v| band {:?} pu", s.band),
            }
            if let Some(e) = s.max_abs_magnitude_error {
                println!("max |d|v|| vs plant: {e:e} pu");
            }
            if let Some(e) = s.frequency_error_relative {
                println!("steady-state frequency error vs plant: {e:e} (relative)");
            }
            println!("trajectories written to {}", dir.display());
        }
        Command::Sweep { config, orders, optimizer, out } => {
            let cfg = RunConfig::load(&config)?;
            let orders = Orders::parse_range(&orders)?;
            let dir = out_path(&root, &out, "sweep");
            let s = commands::sweep(&cfg, &orders, &optimizer.overrides(), &dir)?;
            for r in &s.identify.results {
                println!("n_ivars {}: validation score {:.6}", r.n_ivars, r.validation_score);
            }
            println!("selected n_ivars {}; outputs in {}", s.identify.selected, dir.display());
        }
        Command::Report { run, out } => {
            let dir = out_path(&root, &out, "report");
            commands::report(&run, &dir)?;
            println!("report written to {}", dir.join("report.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
