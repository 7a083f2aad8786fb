//! Identification: subspace initialization, trajectory loss, BFGS and the
//! model-order sweep.

mod bfgs;
mod loss;
mod subspace;

pub use bfgs::{minimize, minimize_preconditioned, BfgsOptions, BfgsOutcome, Termination};
pub use loss::{gauss_newton, loss, loss_and_gradient, loss_gradient, predict_phase, total_loss, Layout, Prepared};
pub use subspace::{estimate_eta, subspace_init, SubspaceInit};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::r2;
use crate::normalform::{HwDiscrete, HwNormalForm, PhaseRule, Setpoints};
use crate::numerics::eigenvalues;
use crate::scenarios::{sub_seed, Dataset, Partition};

/// Optimizer and initialization knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentConfig {
    pub n_ivars: usize,
    pub max_iters: usize,
    pub gradient_tolerance: f64,
    pub loss_tolerance: f64,
    /// Extra runs from perturbed initializations.
    pub restarts: usize,
    /// Relative size of the restart perturbation.
    pub perturbation_scale: f64,
    pub seed: u64,
    pub hankel_rows: usize,
    pub regularization: f64,
    pub rule: PhaseRule,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            n_ivars: 1,
            max_iters: 2000,
            gradient_tolerance: 1e-8,
            loss_tolerance: 1e-12,
            restarts: 0,
            perturbation_scale: 0.1,
            seed: 0,
            hankel_rows: 20,
            regularization: 0.0,
            rule: PhaseRule::Trapezoidal,
        }
    }
}

impl IdentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.gradient_tolerance.is_finite()) {
            return Err(Error::param("gradient_tolerance", "must be positive"));
        }
        if !(self.loss_tolerance > 0.0 && self.loss_tolerance.is_finite()) {
            return Err(Error::param("loss_tolerance", "must be positive"));
        }
        if !(self.perturbation_scale >= 0.0 && self.perturbation_scale.is_finite()) {
            return Err(Error::param("perturbation_scale", "must be non-negative"));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::param("regularization", "must be non-negative"));
        }
        if self.hankel_rows <= self.n_ivars {
            return Err(Error::param("hankel_rows", "must exceed n_ivars"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub restart: usize,
    pub iteration: usize,
    pub loss: f64,
    pub gradient_norm: f64,
    pub validation_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub name: String,
    pub r2_d: Option<f64>,
    pub r2_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Eigenvalues of the identified `A` as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub init_eigenvalues: Vec<[f64; 2]>,
    pub max_real_part: Option<f64>,
    pub stable: bool,
    pub init_reflected: usize,
    pub init_bilinear_fallback: bool,
    pub bilinear_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct IdentResult {
    pub n_ivars: usize,
    pub model: HwNormalForm,
    pub init_model: HwNormalForm,
    pub train_loss: f64,
    pub validation: Vec<RecordScore>,
    /// Mean over validation records of the average of `R²_d` and `R²_q`.
    pub validation_score: f64,
    pub trace: Vec<TraceEntry>,
    pub selected_restart: usize,
    pub selected_iteration: usize,
    pub terminations: Vec<Termination>,
    pub stability: StabilityReport,
}

fn pairs(z: &[Complex64]) -> Vec<[f64; 2]> {
    z.iter().map(|z| [z.re, z.im]).collect()
}

fn prepare(dataset: &Dataset, p: Partition) -> Result<Vec<Prepared>> {
    dataset.partition(p).into_iter().map(|r| Prepared::new(r, &dataset.setpoints)).collect()
}

/// Open-loop voltage R² of each validation record under a discrete model.
fn score(m: &HwDiscrete, records: &[Prepared], rule: PhaseRule) -> (Vec<RecordScore>, f64) {
    let scores: Vec<RecordScore> = records
        .par_iter()
        .map(|rec| {
            let theta = predict_phase(m, rec, rule);
            let pred: Vec<Complex64> = theta.iter().map(|t| t.exp()).collect();
            let comp = |f: fn(&Complex64) -> f64| {
                let obs: Vec<f64> = rec.v.iter().map(f).collect();
                let est: Vec<f64> = pred.iter().map(f).collect();
                r2(&obs, &est).ok().map(|v| if v.is_finite() { v } else { f64::NEG_INFINITY })
            };
            RecordScore { name: rec.name.clone(), r2_d: comp(|z| z.re), r2_q: comp(|z| z.im) }
        })
        .collect();
    let per: Vec<f64> = scores
        .iter()
        .filter_map(|s| {
            let v: Vec<f64> = [s.r2_d, s.r2_q].into_iter().flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let mean = if per.is_empty() { f64::NEG_INFINITY } else { per.iter().sum::<f64>() / per.len() as f64 };
    (scores, mean)
}

/// Inverse of a Gauss-Newton curvature matrix, damped so that directions
/// the data do not determine (for example state-space similarity) stay
/// bounded.
fn inverse_metric(gn: &nalgebra::DMatrix<f64>, regularization: f64) -> Option<nalgebra::DMatrix<f64>> {
    let n = gn.nrows();
    if n == 0 || gn.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = (gn + nalgebra::DMatrix::identity(n, n) * (2.0 * regularization)).symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-12 * top;
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(0.0).max(floor));
    Some(&eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Subspace initialization from the training partition.
pub fn initialize(dataset: &Dataset, config: &IdentConfig) -> Result<SubspaceInit> {
    let train = dataset.partition(Partition::Train);
    if train.is_empty() {
        return Err(Error::param("dataset", "training partition is empty"));
    }
    let series: Vec<_> = train.iter().map(|r| &r.series).collect();
    let eta = estimate_eta(&series)?;
    let prepared: Vec<Prepared> = train.iter().map(|r| Prepared::new(r, &dataset.setpoints)).collect::<Result<_>>()?;
    let e: Vec<&[[f64; 3]]> = prepared.iter().map(|p| p.e.as_slice()).collect();
    subspace_init(&e, &eta, config.n_ivars, config.hankel_rows, dataset.dt, dataset.setpoints)
}

/// Full pipeline: subspace initialization, then BFGS on the training loss,
/// returning the iterate with the best validation score.
pub fn identify(dataset: &Dataset, config: &IdentConfig) -> Result<IdentResult> {
    config.validate()?;
    let init = initialize(dataset, config)?;
    let mut result = identify_from(dataset, &init.model, config)?;
    result.stability.init_reflected = init.reflected;
    result.stability.init_bilinear_fallback = init.bilinear_fallback;
    Ok(result)
}

/// BFGS from a given initial model.
pub fn identify_from(dataset: &Dataset, init: &HwNormalForm, config: &IdentConfig) -> Result<IdentResult> {
    config.validate()?;
    let n = init.n_ivars();
    let train = prepare(dataset, Partition::Train)?;
    let validation = prepare(dataset, Partition::Validation)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::param("dataset", "needs non-empty train and validation partitions"));
    }
    let dt = dataset.dt;
    let sp: Setpoints = dataset.setpoints;
    let layout = Layout { n };
    let start = layout.pack(&init.discretize(dt)?);
    let opts = BfgsOptions {
        max_iters: config.max_iters,
        gradient_tolerance: config.gradient_tolerance,
        loss_tolerance: config.loss_tolerance,
        window: 5,
    };

    let mut trace = Vec::new();
    let mut terminations = Vec::new();
    // (score, params, restart, iteration)
    let mut best: Option<(f64, Vec<f64>, usize, usize)> = None;
    let mut any_finite = false;
    for restart in 0..=config.restarts {
        let x0 = if restart == 0 {
            start.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &format!("restart/{restart}")));
            start
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + config.perturbation_scale * p.abs().max(1e-3) * z
                })
                .collect()
        };
        let objective = |p: &[f64]| loss_and_gradient(p, layout, dt, sp, &train, config.rule, config.regularization);
        let metric = |p: &[f64]| {
            let gn = gauss_newton(p, layout, dt, sp, &train, config.rule);
            inverse_metric(&gn, config.regularization)
        };
        let outcome = minimize_preconditioned(objective, &x0, opts, metric, |iteration, p, f, gnorm| {
            let score_value = f.is_finite().then(|| score(&layout.unpack(p, dt, sp), &validation, config.rule).1);
            trace.push(TraceEntry { restart, iteration, loss: f, gradient_norm: gnorm, validation_score: score_value });
            if let Some(s) = score_value {
                if best.as_ref().is_none_or(|b| s >= b.0) {
                    best = Some((s, p.to_vec(), restart, iteration));
                }
            }
        });
        log::info!(
            "n={n} restart {restart}: {:?} after {} iterations, loss {:e}",
            outcome.termination,
            outcome.iterations,
            outcome.f
        );
        any_finite |= outcome.f.is_finite();
        terminations.push(outcome.termination);
    }
    let Some((_, params, selected_restart, selected_iteration)) = best.filter(|_| any_finite) else {
        let last = trace.last().map(|t| format!("last loss {:e}", t.loss)).unwrap_or_default();
        return Err(Error::Optimization(format!("all {} run(s) diverged; {last}", config.restarts + 1)));
    };
    let discrete = layout.unpack(&params, dt, sp);
    let (validation_scores, validation_score) = score(&discrete, &validation, config.rule);
    let train_loss = total_loss(&discrete, &train, config.rule);
    let (mut model, bilinear_fallback) = discrete.to_continuous()?;
    model.provenance.training_seed = Some(config.seed);
    let eig = eigenvalues(&model.a);
    let max_real_part = eig.iter().map(|z| z.re).reduce(f64::max);
    Ok(IdentResult {
        n_ivars: n,
        stability: StabilityReport {
            eigenvalues: pairs(&eig),
            init_eigenvalues: pairs(&init.eigenvalues()),
            max_real_part,
            stable: max_real_part.is_none_or(|m| m < 0.0),
            init_reflected: 0,
            init_bilinear_fallback: false,
            bilinear_fallback,
        },
        model,
        init_model: init.clone(),
        train_loss,
        validation: validation_scores,
        validation_score,
        trace,
        selected_restart,
        selected_iteration,
        terminations,
    })
}

/// Validation scores within this margin of the best count as a plateau.
pub const EPSILON_SELECT: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub results: Vec<IdentResult>,
    pub selected: usize,
}

impl SweepResult {
    pub fn selected_result(&self) -> &IdentResult {
        self.results.iter().find(|r| r.n_ivars == self.selected).expect("selected order is present")
    }
}

/// Smallest order whose score is within `epsilon` of the best.
pub fn select_order(scores: &[(usize, f64)], epsilon: f64) -> Option<usize> {
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scores.iter().filter(|s| s.1 >= best - epsilon).map(|s| s.0).min()
}

/// Identifies every order in `orders` (concurrently) and selects one.
pub fn order_sweep(dataset: &Dataset, orders: &[usize], config: &IdentConfig) -> Result<SweepResult> {
    if orders.is_empty() {
        return Err(Error::param("orders", "must be non-empty"));
    }
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    let results = orders
        .par_iter()
        .map(|&n| identify(dataset, &IdentConfig { n_ivars: n, ..config.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(usize, f64)> = results.iter().map(|r| (r.n_ivars, r.validation_score)).collect();
    let selected = select_order(&scores, EPSILON_SELECT).expect("non-empty");
    Ok(SweepResult { results, selected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_small_orders_on_plateau() {
        let s = [(1, 0.990), (2, 0.9985), (3, 0.9990), (4, 0.9991)];
        assert_eq!(select_order(&s, EPSILON_SELECT), Some(2));
        assert_eq!(select_order(&[(3, 0.5)], EPSILON_SELECT), Some(3));
        assert_eq!(select_order(&[], EPSILON_SELECT), None);
    }

    #[test]
    fn config_validation() {
        assert!(IdentConfig::default().validate().is_ok());
        assert!(IdentConfig { gradient_tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(IdentConfig { n_ivars: 20, ..Default::default() }.validate().is_err());
    }
}
