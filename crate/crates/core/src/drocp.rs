//! Scenario-tree conic program for the distributionally robust optimal
//! control problem, plus the omniscient and robust baselines.
//!
//! Per node `ι`: state `x`, and for non-leaf nodes input `u`, stage-cost
//! epigraph `τ >= ℓ(x, u)` and cost-to-go `ξ` with
//! `(τ⁺ + ξ⁺, ξ) ∈ epi ρ_cost` over the children. Leaves carry `τ`, `ξ` with
//! `Vf(x) <= τ + ξ`. Each constraint row `i` adds `(H_i x⁺ - h_i, 0) ∈ epi ρ_con`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, ConicRep};
use crate::conic::{AffineExpr, Cone, ConicProgram, SolveStatus, SolverBackend};
use crate::error::{Error, Result};
use crate::learner::{ConfidenceSchedule, LearnerState, RadiusSpec};
use crate::markov::TransitionKernel;
use crate::model::MjlsModel;
use crate::risk::{robust_avar_rep, tighten_alpha, RiskMeasure};
use crate::tree::{ScenarioTree, DEFAULT_NODE_BUDGET};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Controller {
    /// Learned divergence balls around the empirical kernel.
    Dr(RadiusSpec),
    /// Full simplex at every node.
    Robust,
    /// Exact transition kernel (expectation cost, nominal AVaR constraints).
    Omniscient(TransitionKernel),
}

impl Controller {
    pub fn tag(&self) -> String {
        match self {
            Controller::Dr(spec) => format!("dr-{}", spec.divergence.kind),
            Controller::Robust => "robust".into(),
            Controller::Omniscient(_) => "omniscient".into(),
        }
    }

    pub fn needs_learner(&self) -> bool {
        matches!(self, Controller::Dr(_))
    }
}

/// Cost and constraint risk measures at a non-leaf node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRisk {
    pub cost: RiskMeasure,
    pub constraint: RiskMeasure,
    pub alpha_hat: f64,
}

pub fn node_risk(model: &MjlsModel, tree: &ScenarioTree, n: usize, controller: &Controller) -> Result<NodeRisk> {
    let w = tree.nodes[n].mode;
    let d = tree.d;
    match controller {
        Controller::Dr(spec) => {
            let p = &tree.params[n];
            let center = p.learner.p_hat_row(w).to_vec();
            let beta_bar = p.conf.constraint_beta();
            let alpha_hat = tighten_alpha(model.alpha, beta_bar)?;
            let cost_set = AmbiguitySet::new(center.clone(), p.learner.radius(w, 0), spec.divergence.clone())?;
            let con_set = AmbiguitySet::new(center, p.learner.radius(w, 1), spec.divergence.clone())?;
            Ok(NodeRisk {
                cost: RiskMeasure::ambiguous_expectation(&cost_set)?,
                constraint: RiskMeasure::ambiguous_avar(&con_set, alpha_hat)?,
                alpha_hat,
            })
        }
        Controller::Robust => Ok(NodeRisk {
            cost: RiskMeasure::Conic(ConicRep::simplex(d)),
            constraint: RiskMeasure::Conic(robust_avar_rep(&ConicRep::simplex(d), model.alpha)?),
            alpha_hat: model.alpha,
        }),
        Controller::Omniscient(kernel) => {
            if kernel.d() != d {
                return Err(Error::InvalidInput(format!("kernel has {} modes, model {d}", kernel.d())));
            }
            let row = kernel.row(w).to_vec();
            Ok(NodeRisk {
                cost: RiskMeasure::Expectation(row.clone()),
                constraint: RiskMeasure::avar(&row, model.alpha)?,
                alpha_hat: model.alpha,
            })
        }
    }
}

/// Variable offsets of each node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub x: Vec<usize>,
    pub u: Vec<Option<usize>>,
    pub tau: Vec<usize>,
    pub xi: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Assembled {
    pub program: ConicProgram,
    pub layout: Layout,
    pub nx: usize,
    pub nu: usize,
    /// Factor applied to every quadratic cost inside the program; values and
    /// epigraph variables reported by [`solve`] are in original units.
    pub cost_scale: f64,
}

/// Normalizes the largest weight eigenvalue to 10. Cost weights spanning
/// several orders of magnitude (e.g. `R = 1000 I`, `Qf ~ 1e5`) otherwise leave
/// the interior-point iterates badly scaled and solves stall short of the
/// requested accuracy.
pub fn cost_scale(model: &MjlsModel) -> f64 {
    let top = [&model.q, &model.r, &model.qf].iter().map(|m| (*m).clone().symmetric_eigenvalues().max()).fold(0.0_f64, f64::max);
    if top > 0.0 && top.is_finite() {
        10.0 / top
    } else {
        1.0
    }
}

fn lower_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l()).ok_or_else(|| Error::InvalidModel(format!("{what} is not positive definite")))
}

/// `2 Lᵀ v` as affine rows over variables `v_start..v_start + n`.
fn scaled_factor_rows(l: &DMatrix<f64>, v_start: usize) -> Vec<AffineExpr> {
    let n = l.nrows();
    (0..n)
        .map(|k| {
            let mut row = AffineExpr::default();
            for j in 0..n {
                row.add_term(v_start + j, 2.0 * l[(j, k)]);
            }
            row
        })
        .collect()
}

pub fn assemble(model: &MjlsModel, tree: &ScenarioTree, x0: &[f64], controller: &Controller) -> Result<Assembled> {
    assemble_scaled(model, tree, x0, controller, cost_scale(model))
}

/// [`assemble`] with an explicit cost scale.
pub fn assemble_scaled(model: &MjlsModel, tree: &ScenarioTree, x0: &[f64], controller: &Controller, scale: f64) -> Result<Assembled> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("cost scale {scale} must be positive and finite")));
    }
    let (nx, nu, d) = (model.nx, model.nu, model.d);
    if tree.d != d {
        return Err(Error::InvalidModel(format!("tree branching {} differs from model modes {d}", tree.d)));
    }
    if x0.len() != nx {
        return Err(Error::InvalidInput(format!("initial state has {} entries, expected {nx}", x0.len())));
    }

    let l_q = lower_factor(&model.q, "Q")? * scale.sqrt();
    let l_r = lower_factor(&model.r, "R")? * scale.sqrt();
    let l_f = lower_factor(&model.qf, "Qf")? * scale.sqrt();
    let mut prog = ConicProgram::new();
    let n_nodes = tree.len();
    let mut layout = Layout { x: vec![], u: vec![], tau: vec![], xi: vec![] };
    for n in 0..n_nodes {
        layout.x.push(prog.add_vars(format!("x{n}"), nx).start);
        layout.u.push((!tree.is_leaf(n)).then(|| prog.add_vars(format!("u{n}"), nu).start));
        layout.tau.push(prog.add_vars(format!("tau{n}"), 1).start);
        layout.xi.push(prog.add_vars(format!("xi{n}"), 1).start);
    }
    prog.add_objective_term(layout.tau[0], 1.0);
    prog.add_objective_term(layout.xi[0], 1.0);

    // root state
    let root: Vec<AffineExpr> = (0..nx).map(|j| AffineExpr::var(layout.x[0] + j).plus_const(-x0[j])).collect();
    prog.add_block(Cone::Zero(nx), root)?;

    for n in 0..n_nodes {
        let (xs, tau, xi) = (layout.x[n], layout.tau[n], layout.xi[n]);
        let Some(us) = layout.u[n] else {
            // Vf(x) <= τ + ξ
            let s = AffineExpr::var(tau).with_term(xi, 1.0);
            let mut rows = vec![s.clone().plus_const(1.0), s.plus_const(-1.0)];
            rows.extend(scaled_factor_rows(&l_f, xs));
            prog.add_block(Cone::SecondOrder(2 + nx), rows)?;
            if let Some(eps) = model.eps_f {
                let eps = eps * scale;
                let mut rows = vec![AffineExpr::constant(eps + 1.0), AffineExpr::constant(eps - 1.0)];
                rows.extend(scaled_factor_rows(&l_f, xs));
                prog.add_block(Cone::SecondOrder(2 + nx), rows)?;
            }
            continue;
        };
        // ℓ(x, u) <= τ
        let mut rows = vec![AffineExpr::var(tau).plus_const(1.0), AffineExpr::var(tau).plus_const(-1.0)];
        rows.extend(scaled_factor_rows(&l_q, xs));
        rows.extend(scaled_factor_rows(&l_r, us));
        prog.add_block(Cone::SecondOrder(2 + nx + nu), rows)?;
        // input bounds
        let mut bounds = Vec::new();
        for j in 0..nu {
            if model.u_max[j].is_finite() {
                bounds.push(AffineExpr::term(us + j, -1.0).plus_const(model.u_max[j]));
            }
            if model.u_min[j].is_finite() {
                bounds.push(AffineExpr::var(us + j).plus_const(-model.u_min[j]));
            }
        }
        if !bounds.is_empty() {
            let k = bounds.len();
            prog.add_block(Cone::Nonneg(k), bounds)?;
        }
        // dynamics x⁺ = A(w⁺) x + B(w⁺) u
        for c in tree.children(n) {
            let w = tree.nodes[c].mode;
            let (a, b) = (&model.a[w], &model.b[w]);
            let rows = (0..nx)
                .map(|i| {
                    let mut row = AffineExpr::var(layout.x[c] + i);
                    for j in 0..nx {
                        row.add_term(xs + j, -a[(i, j)]);
                    }
                    for j in 0..nu {
                        row.add_term(us + j, -b[(i, j)]);
                    }
                    row
                })
                .collect();
            prog.add_block(Cone::Zero(nx), rows)?;
        }
        let risk = node_risk(model, tree, n, controller)?;
        // (τ⁺ + ξ⁺, ξ) ∈ epi ρ_cost
        let g: Vec<AffineExpr> = tree.children(n).map(|c| AffineExpr::var(layout.tau[c]).with_term(layout.xi[c], 1.0)).collect();
        risk.cost.add_epigraph(&mut prog, &g, &AffineExpr::var(xi), &format!("c{n}"))?;
        // (H_i x⁺ - h_i, 0) ∈ epi ρ_con
        for i in 0..model.n_g() {
            let g: Vec<AffineExpr> = tree
                .children(n)
                .map(|c| {
                    let mut row = AffineExpr::constant(-model.h[i]);
                    for j in 0..nx {
                        row.add_term(layout.x[c] + j, model.h_mat[(i, j)]);
                    }
                    row
                })
                .collect();
            risk.constraint.add_epigraph(&mut prog, &g, &AffineExpr::constant(0.0), &format!("g{n}_{i}"))?;
        }
    }
    Ok(Assembled { program: prog, layout, nx, nu, cost_scale: scale })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub status: SolveStatus,
    pub value: f64,
    /// First-stage input (empty unless optimal and `N >= 1`).
    pub u0: Vec<f64>,
    pub solve_time: f64,
    pub max_residual: f64,
    pub reduced_accuracy: bool,
    /// Node states and inputs of the optimal policy.
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
}

pub fn solve(assembled: &Assembled, backend: &mut dyn SolverBackend) -> Result<OcpSolution> {
    let sol = backend.solve(&assembled.program)?;
    let lay = &assembled.layout;
    let mut out = OcpSolution {
        status: sol.status,
        value: sol.value / assembled.cost_scale,
        u0: vec![],
        solve_time: sol.solve_time,
        max_residual: f64::NAN,
        reduced_accuracy: sol.reduced_accuracy,
        x: vec![],
        u: vec![],
        tau: vec![],
    };
    if sol.status == SolveStatus::Optimal {
        out.max_residual = assembled.program.max_violation(&sol.x);
        out.x = lay.x.iter().map(|&s| sol.x[s..s + assembled.nx].to_vec()).collect();
        out.u = lay.u.iter().map(|s| s.map_or(vec![], |s| sol.x[s..s + assembled.nu].to_vec())).collect();
        out.tau = lay.tau.iter().map(|&t| sol.x[t] / assembled.cost_scale).collect();
        out.u0 = out.u[0].clone();
    }
    Ok(out)
}

/// Builds the tree from the current learner and confidence, assembles and
/// solves; returns the value `V̂_N(z)` and the MPC law `u0`.
#[allow(clippy::too_many_arguments)]
pub fn value_and_law(
    model: &MjlsModel,
    horizon: usize,
    x0: &[f64],
    mode0: usize,
    learner: &LearnerState,
    conf: &ConfidenceSchedule,
    controller: &Controller,
    backend: &mut dyn SolverBackend,
) -> Result<OcpSolution> {
    let spec = match controller {
        Controller::Dr(spec) => spec.clone(),
        // parameters are unused by the baselines; TV keeps propagation cheap
        _ => RadiusSpec::new(crate::ambiguity::Divergence::tv()),
    };
    let tree = if controller.needs_learner() {
        ScenarioTree::build(model.d, horizon, mode0, learner, conf, &spec, DEFAULT_NODE_BUDGET)?
    } else {
        baseline_tree(model.d, horizon, mode0)?
    };
    solve_with_retries(model, &tree, x0, controller, backend)
}

/// Solves at the default cost scale; on a solver failure retries with a
/// scale normalized by `Vf(x0)` and then unscaled. Infeasibility verdicts are
/// returned as they come.
pub fn solve_with_retries(
    model: &MjlsModel,
    tree: &ScenarioTree,
    x0: &[f64],
    controller: &Controller,
    backend: &mut dyn SolverBackend,
) -> Result<OcpSolution> {
    let vf = model.terminal_cost(&DVector::from_column_slice(x0));
    let mut scales = vec![cost_scale(model)];
    if vf > 0.0 && vf.is_finite() {
        scales.push(10.0 / vf);
    }
    scales.push(1.0);
    let mut last = None;
    let mut elapsed = 0.0;
    for s in scales {
        let mut sol = solve(&assemble_scaled(model, tree, x0, controller, s)?, backend)?;
        elapsed += sol.solve_time;
        sol.solve_time = elapsed;
        if sol.status != SolveStatus::SolverError {
            return Ok(sol);
        }
        last = Some(sol);
    }
    Ok(last.expect("at least one scale is tried"))
}

/// Tree without meaningful learner parameters, for the baselines.
pub fn baseline_tree(d: usize, horizon: usize, mode0: usize) -> Result<ScenarioTree> {
    let s = LearnerState::init(d, 2)?;
    let c = ConfidenceSchedule::new(1.0, 2.0, 2, 0)?;
    let spec = RadiusSpec::new(crate::ambiguity::Divergence::tv());
    // learner propagation is skipped: only structure and modes are used
    ScenarioTree::build(d, horizon, mode0, &s, &c, &spec, DEFAULT_NODE_BUDGET).map(|mut t| {
        for p in &mut t.params {
            p.learner = s.clone();
        }
        t
    })
}

/// `V̂` and first input along the dynamics for checking purposes.
pub fn rollout_state(model: &MjlsModel, x: &[f64], u: &[f64], w_next: usize) -> Vec<f64> {
    let xn = model.step(&DVector::from_column_slice(x), &DVector::from_column_slice(u), w_next);
    xn.iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::Divergence;
    use crate::conic::ClarabelBackend;
    use crate::model::ModelConfig;
    use approx::assert_relative_eq;

    fn cyclic_kernel(d: usize) -> TransitionKernel {
        TransitionKernel::new((0..d).map(|i| (0..d).map(|j| if j == (i + 1) % d { 1.0 } else { 0.0 }).collect()).collect()).unwrap()
    }

    fn unconstrained(d: usize) -> MjlsModel {
        let mut c = ModelConfig::cooling(d);
        c.h_mat.clear();
        c.h.clear();
        c.u_min = None;
        c.u_max = None;
        c.eps_f = None;
        c.r = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        c.qf = vec![vec![5.0, 1.0], vec![1.0, 3.0]];
        c.b = (0..d).map(|w| vec![vec![1.0, 0.1 * w as f64], vec![0.0, 1.0]]).collect();
        MjlsModel::from_config(&c).unwrap()
    }

    /// Backward Riccati recursion along a single mode sequence `w_1..w_N`.
    fn riccati_value(m: &MjlsModel, modes: &[usize], x0: &[f64]) -> f64 {
        let mut p = m.qf.clone();
        for &w in modes.iter().rev() {
            let (a, b) = (&m.a[w], &m.b[w]);
            let btp = b.transpose() * &p;
            let gain = (&m.r + &btp * b).try_inverse().unwrap() * &btp * a;
            p = &m.q + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        }
        let x = DVector::from_column_slice(x0);
        (x.transpose() * p * x)[(0, 0)]
    }

    #[test]
    fn riccati_cross_check() {
        let m = unconstrained(3);
        let k = cyclic_kernel(3);
        let x0 = [0.5, -0.3];
        for horizon in [1usize, 3, 5] {
            let modes: Vec<usize> = (1..=horizon).map(|k| k % 3).collect();
            let tree = baseline_tree(3, horizon, 0).unwrap();
            let asm = assemble(&m, &tree, &x0, &Controller::Omniscient(k.clone())).unwrap();
            let sol = solve(&asm, &mut ClarabelBackend::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert_relative_eq!(sol.value, riccati_value(&m, &modes, &x0), max_relative = 1e-5);
        }
    }

    #[test]
    fn horizon_zero_is_terminal_cost_or_infeasible() {
        let m = MjlsModel::cooling(3);
        let tree = baseline_tree(3, 0, 0).unwrap();
        let x0 = [0.1, -0.2];
        let sol = solve(&assemble(&m, &tree, &x0, &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        let vf = m.terminal_cost(&DVector::from_column_slice(&x0));
        assert!(vf <= m.eps_f.unwrap());
        assert_relative_eq!(sol.value, vf, max_relative = 1e-6);
        let far = [2.0, 2.0];
        let sol = solve(&assemble(&m, &tree, &far, &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn origin_is_free() {
        let m = MjlsModel::cooling(3);
        let tree = baseline_tree(3, 3, 1).unwrap();
        let sol = solve(&assemble(&m, &tree, &[0.0, 0.0], &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // costs here are O(1e5) per unit state
        assert!(sol.value.abs() < 1e-4, "{}", sol.value);
        assert!(sol.u0.iter().all(|u| u.abs() < 1e-3), "{:?}", sol.u0);
    }

    #[test]
    fn robust_plan_satisfies_every_child() {
        let m = MjlsModel::cooling(3);
        let tree = baseline_tree(3, 3, 0).unwrap();
        let sol = solve(&assemble(&m, &tree, &[0.5, 0.5], &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for n in 1..tree.len() {
            let g = m.constraint_values(&DVector::from_column_slice(&sol.x[n]));
            assert!(g.iter().all(|v| *v <= 1e-6), "node {n}: {g:?}");
        }
        // the root stage-cost epigraph binds
        let l = m.stage_cost(&DVector::from_column_slice(&sol.x[0]), &DVector::from_column_slice(&sol.u0));
        assert!((sol.tau[0] - l).abs() <= 1e-6 * (1.0 + l), "{} vs {l}", sol.tau[0]);
    }

    #[test]
    fn dr_between_omniscient_and_robust() {
        let m = MjlsModel::cooling(3);
        let kernel = crate::markov::cooling_kernel(3).unwrap();
        let spec = RadiusSpec::new(Divergence::tv());
        let path = crate::markov::sample_path(&kernel, 0, 200, 17).unwrap();
        let conf = ConfidenceSchedule::new(0.19, 2.0, 2, 0).unwrap();
        let (s, c) = crate::learner::replay(&LearnerState::init(3, 2).unwrap(), &conf, &path.modes, &spec).unwrap();
        let x0 = [0.5, 0.5];
        let w0 = *path.modes.last().unwrap();
        let mut be = ClarabelBackend::default();
        let v = |ctrl: &Controller, be: &mut ClarabelBackend| value_and_law(&m, 3, &x0, w0, &s, &c, ctrl, be).unwrap();
        let omn = v(&Controller::Omniscient(kernel.clone()), &mut be);
        let dr = v(&Controller::Dr(spec), &mut be);
        let rob = v(&Controller::Robust, &mut be);
        assert!(omn.value <= dr.value * (1.0 + 1e-6), "{} {}", omn.value, dr.value);
        assert!(dr.value <= rob.value * (1.0 + 1e-6), "{} {}", dr.value, rob.value);
        // re-evaluate the root constraint risk at the returned input
        let tree = ScenarioTree::build(3, 3, w0, &s, &c, &RadiusSpec::new(Divergence::tv()), DEFAULT_NODE_BUDGET).unwrap();
        let risk = node_risk(&m, &tree, 0, &Controller::Dr(RadiusSpec::new(Divergence::tv()))).unwrap();
        for i in 0..m.n_g() {
            let g: Vec<f64> = (0..3)
                .map(|w| {
                    let xn = rollout_state(&m, &x0, &dr.u0, w);
                    m.h_mat.row(i).iter().zip(&xn).map(|(a, b)| a * b).sum::<f64>() - m.h[i]
                })
                .collect();
            let r = risk.constraint.evaluate(&g, &mut be).unwrap();
            assert!(r <= 1e-6, "row {i}: {r}");
        }
    }

    #[test]
    fn deterministic_given_inputs() {
        let m = MjlsModel::cooling(3);
        let tree = baseline_tree(3, 2, 0).unwrap();
        let a = solve(&assemble(&m, &tree, &[0.3, 0.2], &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        let b = solve(&assemble(&m, &tree, &[0.3, 0.2], &Controller::Robust).unwrap(), &mut ClarabelBackend::default()).unwrap();
        assert_eq!(a.u0, b.u0);
    }
}
