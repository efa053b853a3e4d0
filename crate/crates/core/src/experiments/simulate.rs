//! Closed-loop comparison of the omniscient, robust and DR controllers on
//! matched mode paths.

use serde::Serialize;

use super::output::{SimCostRow, SimStepRow, SimSummaryRow, SimViolationRow};
use super::ExperimentConfig;
use crate::conic::ClarabelBackend;
use crate::drocp::Controller;
use crate::error::Result;
use crate::mpc::{monte_carlo, quantile, summarize, ClosedLoopConfig, ClosedLoopTrace, RunOutcome, StepRecord, Variant, VariantSummary};

pub struct SimulateOutput {
    pub summaries: Vec<VariantSummary>,
    pub traces: Vec<Vec<ClosedLoopTrace>>,
}

/// Trace line: a step record tagged with its variant and run.
#[derive(Serialize)]
pub struct TraceLine<'a> {
    pub variant: &'a str,
    pub run: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub step: &'a StepRecord,
}

/// Omniscient, robust and one DR controller per warm start, ordered from
/// least to most informed DR.
pub fn variants(cfg: &ExperimentConfig) -> Result<Vec<Variant>> {
    let kernel = cfg.kernel()?;
    let spec = cfg.radius_spec(cfg.simulate.divergence, kernel.d());
    let mut v = vec![Variant::new("omniscient", Controller::Omniscient(kernel), 0)];
    let mut warm = cfg.simulate.warm_starts.clone();
    warm.sort_unstable_by(|a, b| b.cmp(a));
    for w in warm {
        v.push(Variant::new(format!("dr-{w}"), Controller::Dr(spec.clone()), w));
    }
    v.push(Variant::new("robust", Controller::Robust, 0));
    Ok(v)
}

pub fn loop_config(cfg: &ExperimentConfig) -> ClosedLoopConfig {
    ClosedLoopConfig {
        horizon: cfg.horizon,
        steps: cfg.simulate.steps,
        x0: cfg.simulate.x0.clone(),
        w0: cfg.simulate.w0,
        warm_start: 0,
        beta_b: cfg.beta_b,
        beta_q: cfg.beta_q,
        track_omniscient: cfg.simulate.track_omniscient,
    }
}

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<SimulateOutput> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let traces = monte_carlo(&model, &kernel, &loop_config(cfg), &variants(cfg)?, cfg.simulate.runs, seed, &ClarabelBackend::default())?;
    let summaries = traces.iter().map(|t| summarize(t, model.n_g())).collect();
    Ok(SimulateOutput { summaries, traces })
}

fn outcome_label(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Completed => "completed".into(),
        RunOutcome::Infeasible { step } => format!("infeasible@{step}"),
        RunOutcome::SolverFailure { step, .. } => format!("solver_failure@{step}"),
    }
}

impl SimulateOutput {
    pub fn step_rows(&self) -> Vec<SimStepRow> {
        let mut rows = Vec::new();
        for s in &self.summaries {
            for st in &s.per_step {
                let mut push = |q: String, mean: f64, q05: f64, q95: f64| {
                    rows.push(SimStepRow { variant: s.variant.clone(), t: st.t, quantity: q, mean, q05, q95 })
                };
                push("x_norm2".into(), st.x_norm2_mean, st.x_norm2_q05, st.x_norm2_q95);
                push("x2".into(), st.x2_mean, st.x2_q05, st.x2_q95);
                for j in 0..st.u_mean.len() {
                    push(format!("u{}", j + 1), st.u_mean[j], st.u_q05[j], st.u_q95[j]);
                }
            }
        }
        rows
    }

    pub fn cost_rows(&self) -> Vec<SimCostRow> {
        self.traces
            .iter()
            .flat_map(|runs| {
                runs.iter().enumerate().map(|(r, t)| SimCostRow {
                    variant: t.variant.clone(),
                    run: r,
                    seed: t.seed,
                    cost: t.cost(),
                    outcome: outcome_label(&t.outcome),
                })
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SimSummaryRow> {
        self.summaries
            .iter()
            .map(|s| SimSummaryRow {
                variant: s.variant.clone(),
                runs: s.runs,
                completed: s.completed,
                infeasible: s.infeasible,
                solver_failures: s.solver_failures,
                cost_mean: s.cost_mean,
                cost_q05: quantile(&s.costs, 0.05),
                cost_median: quantile(&s.costs, 0.5),
                cost_q95: quantile(&s.costs, 0.95),
                first_input_norm_mean: s.first_input_norm_mean,
                value_shortfalls: s.value_shortfalls,
                theta_sum_mean: s.theta_sum_mean,
            })
            .collect()
    }

    pub fn violation_rows(&self) -> Vec<SimViolationRow> {
        self.summaries
            .iter()
            .flat_map(|s| {
                s.violation_rate.iter().enumerate().map(|(i, &rate)| SimViolationRow {
                    variant: s.variant.clone(),
                    constraint: i + 1,
                    violations: (rate * s.steps_recorded as f64).round() as usize,
                    steps: s.steps_recorded,
                    rate,
                })
            })
            .collect()
    }

    pub fn trace_lines(&self) -> impl Iterator<Item = TraceLine<'_>> {
        self.traces.iter().flat_map(|runs| {
            runs.iter()
                .enumerate()
                .flat_map(|(r, t)| t.steps.iter().map(move |s| TraceLine { variant: &t.variant, run: r, seed: t.seed, step: s }))
        })
    }

    pub fn infeasible_runs(&self) -> usize {
        self.summaries.iter().map(|s| s.infeasible).sum()
    }

    pub fn solver_failures(&self) -> usize {
        self.summaries.iter().map(|s| s.solver_failures).sum()
    }
}
