//! Browser bindings: three JSON-in, JSON-out operations for the demo page.
//!
//! Each export has a plain Rust twin returning `Result<String, String>` so the
//! logic is testable natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use jumpdr::ambiguity::{conic_rep, worst_case_over_rep, AmbiguitySet, Divergence, DivergenceKind};
use jumpdr::conic::ClarabelBackend;
use jumpdr::drocp::Controller;
use jumpdr::experiments::{ExperimentConfig, VariantKind};
use jumpdr::learner::radius;
use jumpdr::markov::TransitionKernel;
use jumpdr::model::MjlsModel;
use jumpdr::mpc::{run_closed_loop, run_paths, ClosedLoopConfig, RunOutcome};
use jumpdr::risk::robust_avar_rep;

fn kind(s: &str) -> Result<DivergenceKind, String> {
    s.parse().map_err(|e: jumpdr::error::Error| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
pub struct RadiusRequest {
    pub divergence: String,
    #[serde(default = "three")]
    pub d: usize,
    pub beta: f64,
    #[serde(default = "m_max")]
    pub m_max: u64,
}

fn three() -> usize {
    3
}

fn m_max() -> u64 {
    10_000
}

#[derive(Serialize)]
pub struct RadiusCurve {
    pub m: Vec<u64>,
    pub radius: Vec<f64>,
}

/// Radius versus sample count on a logarithmic grid, 10 points per decade.
pub fn radius_curve_json(request: &str) -> Result<String, String> {
    let req: RadiusRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let div = Divergence::default_for(kind(&req.divergence)?, req.d);
    let m = jumpdr::experiments::concentration::log_grid(req.m_max.max(1), 10);
    let radius = m.iter().map(|&m| radius(&div, m, req.beta, req.d, false)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    to_json(&RadiusCurve { m, radius })
}

#[derive(Deserialize)]
pub struct WorstCaseRequest {
    pub divergence: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub xi: Vec<f64>,
    /// AVaR level; the plain worst-case expectation when absent.
    pub alpha: Option<f64>,
}

#[derive(Serialize)]
pub struct WorstCase {
    pub value: f64,
    pub nominal: f64,
    /// Worst-case distribution (expectation only).
    pub p: Option<Vec<f64>>,
}

pub fn worst_case_json(request: &str) -> Result<String, String> {
    let req: WorstCaseRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let err = |e: jumpdr::error::Error| e.to_string();
    let d = req.center.len();
    let set = AmbiguitySet::new(req.center.clone(), req.radius, Divergence::default_for(kind(&req.divergence)?, d)).map_err(err)?;
    let mut rep = conic_rep(&set).map_err(err)?;
    if let Some(a) = req.alpha {
        rep = robust_avar_rep(&rep, a).map_err(err)?;
    }
    let (value, p) = worst_case_over_rep(&rep, &req.xi, &mut ClarabelBackend::default()).map_err(err)?;
    let nominal = match req.alpha {
        Some(a) => jumpdr::risk::avar(&req.center, a, &req.xi),
        None => req.center.iter().zip(&req.xi).map(|(a, b)| a * b).sum(),
    };
    to_json(&WorstCase { value, nominal, p: req.alpha.is_none().then_some(p) })
}

#[derive(Deserialize)]
#[serde(default)]
pub struct SimulateRequest {
    pub variant: String,
    pub divergence: String,
    pub warm_start: usize,
    pub horizon: usize,
    pub steps: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
}

impl Default for SimulateRequest {
    fn default() -> Self {
        SimulateRequest {
            variant: "dr".into(),
            divergence: "tv".into(),
            warm_start: 100,
            horizon: 3,
            steps: 20,
            x0: vec![0.5, 0.5],
            seed: 1,
        }
    }
}

#[derive(Serialize)]
pub struct Trajectory {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// 1-based modes `w_0, ..., w_T`.
    pub modes: Vec<usize>,
    pub cost: f64,
    pub outcome: String,
}

/// One closed-loop run of the cooling example.
pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let err = |e: jumpdr::error::Error| e.to_string();
    if req.horizon > 5 || req.steps > 100 {
        return Err("demo limits: horizon <= 5, steps <= 100".into());
    }
    let exp = ExperimentConfig::default();
    let model = MjlsModel::cooling(3);
    let kernel: TransitionKernel = exp.kernel().map_err(err)?;
    let variant: VariantKind = req.variant.parse().map_err(err)?;
    let (controller, warm) = match variant {
        VariantKind::Dr => (Controller::Dr(exp.radius_spec(kind(&req.divergence)?, model.d)), req.warm_start),
        VariantKind::Robust => (Controller::Robust, 0),
        VariantKind::Omniscient => (Controller::Omniscient(kernel.clone()), 0),
    };
    let cfg = ClosedLoopConfig { horizon: req.horizon, steps: req.steps, x0: req.x0, warm_start: warm, ..ClosedLoopConfig::default() };
    let (seed, modes, offline) = run_paths(&kernel, &cfg, req.seed, 0, warm).map_err(err)?;
    let trace = run_closed_loop(&model, &cfg, &controller, &req.variant, &modes, &offline, None, seed, &mut ClarabelBackend::default())
        .map_err(err)?;
    let outcome = match &trace.outcome {
        RunOutcome::Completed => "completed".to_string(),
        RunOutcome::Infeasible { step } => format!("infeasible at step {step}"),
        RunOutcome::SolverFailure { step, message } => format!("solver failure at step {step}: {message}"),
    };
    let mut modes1: Vec<usize> = trace.steps.iter().map(|s| s.mode + 1).collect();
    modes1.extend(trace.steps.last().map(|s| s.mode_next + 1));
    to_json(&Trajectory {
        x: trace.states(),
        u: trace.steps.iter().map(|s| s.u.clone()).collect(),
        modes: modes1,
        cost: trace.cost(),
        outcome,
    })
}

#[wasm_bindgen]
pub fn radius_curve(request: &str) -> Result<String, JsValue> {
    radius_curve_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn worst_case(request: &str) -> Result<String, JsValue> {
    worst_case_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsValue> {
    simulate_json(request).map_err(|e| JsValue::from_str(&e))
}
