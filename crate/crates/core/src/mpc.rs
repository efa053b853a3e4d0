//! Receding-horizon closed loop: solve the OCP at `(x_t, w_t, s_t, β_t)`,
//! apply `u_t`, observe `w_{t+1}`, update the learner and the confidence
//! schedule. Monte Carlo runs share pre-sampled mode paths across controllers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ambiguity::Divergence;
use crate::conic::{ClarabelBackend, SolveStatus, SolverBackend};
use crate::drocp::{value_and_law, Controller};
use crate::error::{Error, Result};
use crate::learner::{replay, update_learner, ConfidenceSchedule, LearnerState, RadiusSpec};
use crate::markov::{one_based, sample_path, TransitionKernel};
use crate::model::MjlsModel;
use crate::rng::derive_seed;

/// Absolute tolerance on `H x - h` before a step counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-9;

/// Relative slack when comparing a DR value against the omniscient value.
pub const VALUE_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub horizon: usize,
    pub steps: usize,
    pub x0: Vec<f64>,
    #[serde(with = "one_based")]
    pub w0: usize,
    /// Offline transitions fed to the learner before the loop starts; the
    /// confidence schedule continues from this index.
    pub warm_start: usize,
    pub beta_b: f64,
    pub beta_q: f64,
    /// Also solve the omniscient problem at every visited `(x, w)`.
    pub track_omniscient: bool,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            horizon: 5,
            steps: 30,
            x0: vec![0.5, 0.5],
            w0: 0,
            warm_start: 0,
            beta_b: 0.19,
            beta_q: 2.0,
            track_omniscient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    #[serde(with = "one_based")]
    pub mode: usize,
    pub u: Vec<f64>,
    pub stage_cost: f64,
    pub value: f64,
    pub status: SolveStatus,
    pub reduced_accuracy: bool,
    pub solve_time: f64,
    /// Learner digest at the time of the solve.
    pub learner_hash: u64,
    pub x_next: Vec<f64>,
    #[serde(with = "one_based")]
    pub mode_next: usize,
    /// `H_i x_{t+1} - h_i > VIOLATION_TOL`, per constraint row.
    pub violations: Vec<bool>,
    pub omniscient_value: Option<f64>,
    /// `d Σ_{k=t}^{t+N} ‖β_k‖₁` for DR controllers.
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Infeasible { step: usize },
    SolverFailure { step: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub variant: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub outcome: RunOutcome,
}

impl ClosedLoopTrace {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    /// Sum of stage costs along the run.
    pub fn cost(&self) -> f64 {
        self.steps.iter().map(|s| s.stage_cost).sum()
    }

    /// States `x_0, ..., x_T`.
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut xs: Vec<Vec<f64>> = self.steps.iter().map(|s| s.x.clone()).collect();
        if let Some(last) = self.steps.last() {
            xs.push(last.x_next.clone());
        }
        xs
    }

    /// Steps where the DR value fell below the omniscient value.
    pub fn value_shortfalls(&self) -> usize {
        self.steps.iter().filter(|s| s.omniscient_value.is_some_and(|v| s.value < v - VALUE_TOL * (1.0 + v.abs()))).count()
    }

    pub fn theta_sum(&self) -> f64 {
        self.steps.iter().filter_map(|s| s.theta).fold(0.0, |a, b| a + b)
    }
}

/// Learner, schedule and radius spec carried along the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopState {
    pub x: Vec<f64>,
    pub mode: usize,
    pub learner: LearnerState,
    pub conf: ConfidenceSchedule,
}

fn spec_of(controller: &Controller) -> RadiusSpec {
    match controller {
        Controller::Dr(spec) => spec.clone(),
        _ => RadiusSpec::new(Divergence::tv()),
    }
}

/// `d Σ_{k=0}^{N} ‖β_{t+k}‖₁`.
pub fn theta_bound(conf: &ConfidenceSchedule, d: usize, horizon: usize) -> f64 {
    let n_beta = conf.beta.len() as f64;
    d as f64 * (0..=horizon as u64).map(|k| n_beta * conf.ahead(k)).sum::<f64>()
}

/// Initial loop state after feeding `offline` (a mode path) to the learner.
pub fn initial_state(model: &MjlsModel, cfg: &ClosedLoopConfig, controller: &Controller, offline: &[usize]) -> Result<LoopState> {
    let conf = ConfidenceSchedule::new(cfg.beta_b, cfg.beta_q, 2, 0)?;
    let s0 = LearnerState::init(model.d, 2)?;
    let (learner, conf) = replay(&s0, &conf, offline, &spec_of(controller))?;
    if cfg.x0.len() != model.nx {
        return Err(Error::InvalidInput(format!("x0 has {} entries, expected {}", cfg.x0.len(), model.nx)));
    }
    if cfg.w0 >= model.d {
        return Err(Error::ModeOutOfRange { mode: cfg.w0 + 1, d: model.d });
    }
    Ok(LoopState { x: cfg.x0.clone(), mode: cfg.w0, learner, conf })
}

/// One closed-loop step with the successor mode `w_next` already drawn.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_step(
    state: &LoopState,
    w_next: usize,
    t: usize,
    model: &MjlsModel,
    horizon: usize,
    controller: &Controller,
    omniscient: Option<&TransitionKernel>,
    backend: &mut dyn SolverBackend,
) -> Result<(LoopState, StepRecord)> {
    let sol = value_and_law(model, horizon, &state.x, state.mode, &state.learner, &state.conf, controller, backend)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::StepInfeasible { step: t }),
        SolveStatus::SolverError => return Err(Error::SolverFailure(format!("step {t}: solver did not converge"))),
    }
    let omniscient_value = match omniscient {
        Some(k) => {
            let o = value_and_law(
                model,
                horizon,
                &state.x,
                state.mode,
                &state.learner,
                &state.conf,
                &Controller::Omniscient(k.clone()),
                backend,
            )?;
            (o.status == SolveStatus::Optimal).then_some(o.value)
        }
        None => None,
    };
    let x = DVector::from_column_slice(&state.x);
    let u = if horizon == 0 { DVector::zeros(model.nu) } else { DVector::from_column_slice(&sol.u0) };
    let x_next = model.step(&x, &u, w_next);
    let g = model.constraint_values(&x_next);
    let learner = update_learner(&state.learner, state.mode, w_next, &state.conf, &spec_of(controller))?;
    let record = StepRecord {
        t,
        x: state.x.clone(),
        mode: state.mode,
        u: u.iter().cloned().collect(),
        stage_cost: model.stage_cost(&x, &u),
        value: sol.value,
        status: sol.status,
        reduced_accuracy: sol.reduced_accuracy,
        solve_time: sol.solve_time,
        learner_hash: state.learner.digest(),
        x_next: x_next.iter().cloned().collect(),
        mode_next: w_next,
        violations: g.iter().map(|v| *v > VIOLATION_TOL).collect(),
        omniscient_value,
        theta: controller.needs_learner().then(|| theta_bound(&state.conf, model.d, horizon)),
    };
    let next = LoopState { x: record.x_next.clone(), mode: w_next, learner, conf: state.conf.advance() };
    Ok((next, record))
}

/// Runs the loop along `modes` (`modes[0]` must equal `cfg.w0`). Infeasible
/// steps and solver failures end the run and are reported in the outcome.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    model: &MjlsModel,
    cfg: &ClosedLoopConfig,
    controller: &Controller,
    variant: &str,
    modes: &[usize],
    offline: &[usize],
    omniscient: Option<&TransitionKernel>,
    seed: u64,
    backend: &mut dyn SolverBackend,
) -> Result<ClosedLoopTrace> {
    if modes.len() < cfg.steps + 1 || modes.first() != Some(&cfg.w0) {
        return Err(Error::InvalidInput(format!("mode path must start at the initial mode and hold {} entries", cfg.steps + 1)));
    }
    let mut state = initial_state(model, cfg, controller, offline)?;
    let mut trace = ClosedLoopTrace { variant: variant.into(), seed, steps: vec![], outcome: RunOutcome::Completed };
    let track = if cfg.track_omniscient && controller.needs_learner() { omniscient } else { None };
    for t in 0..cfg.steps {
        match closed_loop_step(&state, modes[t + 1], t, model, cfg.horizon, controller, track, backend) {
            Ok((next, rec)) => {
                trace.steps.push(rec);
                state = next;
            }
            Err(Error::StepInfeasible { step }) => {
                trace.outcome = RunOutcome::Infeasible { step };
                break;
            }
            Err(Error::SolverFailure(message)) => {
                trace.outcome = RunOutcome::SolverFailure { step: t, message };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(trace)
}

/// A named controller with its offline warm start.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub controller: Controller,
    pub warm_start: usize,
}

impl Variant {
    pub fn new(name: impl Into<String>, controller: Controller, warm_start: usize) -> Self {
        Variant { name: name.into(), controller, warm_start }
    }

    /// Omniscient, robust, DR-10 and DR-100 with the given radius spec.
    pub fn standard_set(kernel: &TransitionKernel, spec: &RadiusSpec) -> Vec<Variant> {
        vec![
            Variant::new("omniscient", Controller::Omniscient(kernel.clone()), 0),
            Variant::new("dr-100", Controller::Dr(spec.clone()), 100),
            Variant::new("dr-10", Controller::Dr(spec.clone()), 10),
            Variant::new("robust", Controller::Robust, 0),
        ]
    }
}

/// Mode path and offline data of run `r`. Offline data for a shorter warm
/// start is a prefix of the data for a longer one.
pub fn run_paths(
    kernel: &TransitionKernel,
    cfg: &ClosedLoopConfig,
    master: u64,
    r: u64,
    offline_len: usize,
) -> Result<(u64, Vec<usize>, Vec<usize>)> {
    let seed = derive_seed(master, r);
    let modes = sample_path(kernel, cfg.w0, cfg.steps, derive_seed(seed, 0))?.modes;
    let offline = sample_path(kernel, cfg.w0, offline_len, derive_seed(seed, 1))?.modes;
    Ok((seed, modes, offline))
}

/// Worker cap from `JUMPDR_THREADS` (unset or invalid means no cap).
pub fn thread_cap() -> Option<usize> {
    std::env::var("JUMPDR_THREADS").ok()?.parse().ok().filter(|n: &usize| *n > 0)
}

/// Runs every variant on `runs` matched mode paths; traces are grouped by
/// variant in the order given, each in run order.
pub fn monte_carlo(
    model: &MjlsModel,
    kernel: &TransitionKernel,
    cfg: &ClosedLoopConfig,
    variants: &[Variant],
    runs: usize,
    master_seed: u64,
    backend: &ClarabelBackend,
) -> Result<Vec<Vec<ClosedLoopTrace>>> {
    let offline_len = variants.iter().map(|v| v.warm_start).max().unwrap_or(0);
    let paths: Vec<_> = (0..runs as u64).map(|r| run_paths(kernel, cfg, master_seed, r, offline_len)).collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..runs).map(move |r| (v, r))).collect();
    let run_cell = |&(v, r): &(usize, usize)| -> Result<ClosedLoopTrace> {
        let var = &variants[v];
        let (seed, modes, offline) = &paths[r];
        let mut c = cfg.clone();
        c.warm_start = var.warm_start;
        let mut be = backend.clone();
        run_closed_loop(model, &c, &var.controller, &var.name, modes, &offline[..=var.warm_start], Some(kernel), *seed, &mut be)
    };
    let traces: Vec<ClosedLoopTrace> = map_cells(&cells, run_cell)?;
    let mut grouped: Vec<Vec<ClosedLoopTrace>> = vec![Vec::with_capacity(runs); variants.len()];
    for ((v, _), tr) in cells.iter().zip(traces) {
        grouped[*v].push(tr);
    }
    Ok(grouped)
}

#[cfg(feature = "parallel")]
pub(crate) fn map_cells<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_cells<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}

/// Linear-interpolation quantile of unsorted data (NaN for empty input).
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    data.iter().sum::<f64>() / data.len() as f64
}

/// Per-time statistics across runs of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub t: usize,
    pub x_norm2_mean: f64,
    pub x_norm2_q05: f64,
    pub x_norm2_q95: f64,
    pub x2_mean: f64,
    pub x2_q05: f64,
    pub x2_q95: f64,
    pub u_mean: Vec<f64>,
    pub u_q05: Vec<f64>,
    pub u_q95: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub completed: usize,
    pub infeasible: usize,
    pub solver_failures: usize,
    /// Closed-loop costs of completed runs.
    pub costs: Vec<f64>,
    pub cost_mean: f64,
    /// Per constraint row, over all recorded steps.
    pub violation_rate: Vec<f64>,
    pub steps_recorded: usize,
    pub first_input_norm_mean: f64,
    pub value_shortfalls: usize,
    pub theta_sum_mean: f64,
    pub per_step: Vec<StepStats>,
}

pub fn summarize(traces: &[ClosedLoopTrace], n_g: usize) -> VariantSummary {
    let done: Vec<&ClosedLoopTrace> = traces.iter().filter(|t| t.completed()).collect();
    let costs: Vec<f64> = done.iter().map(|t| t.cost()).collect();
    let mut counts = vec![0usize; n_g];
    let mut steps = 0;
    for tr in traces {
        for s in &tr.steps {
            steps += 1;
            for (c, v) in counts.iter_mut().zip(&s.violations) {
                *c += *v as usize;
            }
        }
    }
    let first: Vec<f64> = done.iter().filter_map(|t| t.steps.first()).map(|s| s.u.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let horizon = done.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let per_step = (0..=horizon)
        .map(|k| {
            let xs: Vec<Vec<f64>> = done.iter().filter_map(|t| t.states().get(k).cloned()).collect();
            let n2: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
            let x2: Vec<f64> = xs.iter().filter_map(|x| x.get(1).copied()).collect();
            let us: Vec<&Vec<f64>> = done.iter().filter_map(|t| t.steps.get(k).map(|s| &s.u)).collect();
            let nu = us.first().map_or(0, |u| u.len());
            let comp = |j: usize| us.iter().map(|u| u[j]).collect::<Vec<f64>>();
            StepStats {
                t: k,
                x_norm2_mean: mean(&n2),
                x_norm2_q05: quantile(&n2, 0.05),
                x_norm2_q95: quantile(&n2, 0.95),
                x2_mean: mean(&x2),
                x2_q05: quantile(&x2, 0.05),
                x2_q95: quantile(&x2, 0.95),
                u_mean: (0..nu).map(|j| mean(&comp(j))).collect(),
                u_q05: (0..nu).map(|j| quantile(&comp(j), 0.05)).collect(),
                u_q95: (0..nu).map(|j| quantile(&comp(j), 0.95)).collect(),
            }
        })
        .collect();
    VariantSummary {
        variant: traces.first().map_or_else(String::new, |t| t.variant.clone()),
        runs: traces.len(),
        completed: done.len(),
        infeasible: traces.iter().filter(|t| matches!(t.outcome, RunOutcome::Infeasible { .. })).count(),
        solver_failures: traces.iter().filter(|t| matches!(t.outcome, RunOutcome::SolverFailure { .. })).count(),
        cost_mean: mean(&costs),
        costs,
        violation_rate: counts.iter().map(|&c| if steps == 0 { 0.0 } else { c as f64 / steps as f64 }).collect(),
        steps_recorded: steps,
        first_input_norm_mean: mean(&first),
        value_shortfalls: traces.iter().map(|t| t.value_shortfalls()).sum(),
        theta_sum_mean: mean(&traces.iter().map(|t| t.theta_sum()).collect::<Vec<_>>()),
        per_step,
    }
}

/// Upper end of the binomial 95% band around `alpha` for `n` trials.
pub fn binomial_slack(alpha: f64, n: usize) -> f64 {
    1.96 * (alpha * (1.0 - alpha) / n.max(1) as f64).sqrt()
}
