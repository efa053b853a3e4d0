//! DR value at a fixed `(x0, w0)` as the learner consumes one long chain
//! path, relative to the omniscient value.

use super::output::ConsistencyRow;
use super::ExperimentConfig;
use crate::ambiguity::DivergenceKind;
use crate::conic::{ClarabelBackend, SolveStatus};
use crate::drocp::{value_and_law, Controller};
use crate::error::{Error, Result};
use crate::learner::{update_learner, ConfidenceSchedule, LearnerState};
use crate::markov::sample_path;
use crate::mpc::map_cells;
use crate::rng::derive_seed;

/// Omniscient and robust values at the consistency point.
pub fn reference_values(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let c = &cfg.consistency;
    let s = LearnerState::init(model.d, 2)?;
    let conf = ConfidenceSchedule::new(cfg.beta_b, cfg.beta_q, 2, 0)?;
    let mut be = ClarabelBackend::default();
    let mut value = |ctrl: Controller| -> Result<f64> {
        let sol = value_and_law(&model, cfg.horizon, &c.x0, c.w0, &s, &conf, &ctrl, &mut be)?;
        match sol.status {
            SolveStatus::Optimal => Ok(sol.value),
            other => Err(Error::SolverFailure(format!("{} reference problem: {other:?}", ctrl.tag()))),
        }
    };
    Ok((value(Controller::Omniscient(kernel))?, value(Controller::Robust)?))
}

pub fn run(cfg: &ExperimentConfig, kinds: &[DivergenceKind], seed: u64) -> Result<Vec<ConsistencyRow>> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let c = &cfg.consistency;
    let mut grid = c.grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let len = grid.last().copied().unwrap_or(0) as usize;
    let path = sample_path(&kernel, c.w0, len, derive_seed(seed, 0))?.modes;
    let (v_star, v_robust) = reference_values(cfg)?;
    let robust_rel = (v_robust - v_star) / v_star;
    let per_div = map_cells(kinds, |&kind| -> Result<Vec<ConsistencyRow>> {
        let spec = cfg.radius_spec(kind, model.d);
        let ctrl = Controller::Dr(spec.clone());
        let mut s = LearnerState::init(model.d, 2)?;
        let mut conf = ConfidenceSchedule::new(cfg.beta_b, cfg.beta_q, 2, 0)?;
        let mut be = ClarabelBackend::default();
        let mut rows = Vec::with_capacity(grid.len());
        let mut seen = 0usize;
        for &t in &grid {
            while seen < t as usize {
                s = update_learner(&s, path[seen], path[seen + 1], &conf, &spec)?;
                conf = conf.advance();
                seen += 1;
            }
            let sol = value_and_law(&model, cfg.horizon, &c.x0, c.w0, &s, &conf, &ctrl, &mut be)?;
            let ok = sol.status == SolveStatus::Optimal;
            rows.push(ConsistencyRow {
                divergence: kind.to_string(),
                t,
                value: sol.value,
                v_star,
                v_robust,
                rel_subopt: if ok { (sol.value - v_star) / v_star } else { f64::NAN },
                robust_rel_subopt: robust_rel,
                status: format!("{:?}", sol.status),
            });
        }
        Ok(rows)
    })?;
    Ok(per_div.into_iter().flatten().collect())
}

/// Checks a single-divergence curve: robust level at the first size (within
/// `tol` relative), nonincreasing trend where each step may rise by at most
/// `noise` times the current value, and the last point at most `final_max`.
pub fn curve_ok(rows: &[ConsistencyRow], tol: f64, noise: f64, final_max: f64) -> std::result::Result<(), String> {
    let first = rows.first().ok_or("empty curve")?;
    if first.rel_subopt > first.robust_rel_subopt * (1.0 + tol) + tol {
        return Err(format!("t={}: {} above robust level {}", first.t, first.rel_subopt, first.robust_rel_subopt));
    }
    for w in rows.windows(2) {
        if w[1].rel_subopt > w[0].rel_subopt + noise * w[1].rel_subopt.abs() {
            return Err(format!("t={}: {} rises from {}", w[1].t, w[1].rel_subopt, w[0].rel_subopt));
        }
    }
    let last = rows.last().expect("nonempty");
    if !(last.rel_subopt <= final_max) {
        return Err(format!("t={}: {} exceeds {final_max}", last.t, last.rel_subopt));
    }
    Ok(())
}
