//! Solver times of the DR problem per divergence at random initial states.

use rand::Rng;

use super::output::{TimingRow, TimingSummaryRow};
use super::ExperimentConfig;
use crate::ambiguity::DivergenceKind;
use crate::conic::{ClarabelBackend, SolveStatus};
use crate::drocp::{value_and_law, Controller};
use crate::error::Result;
use crate::learner::{replay, ConfidenceSchedule, LearnerState};
use crate::markov::sample_path;
use crate::rng::{derive_seed, stream};

/// Initial states shared by every divergence.
pub fn sample_states(cfg: &ExperimentConfig, nx: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(derive_seed(seed, 1));
    let w = cfg.timing.box_half_width;
    (0..cfg.timing.samples).map(|_| (0..nx).map(|_| rng.gen_range(-w..=w)).collect()).collect()
}

/// Runs sequentially so timings do not compete for cores. One unrecorded
/// solve per divergence warms caches first.
pub fn run(cfg: &ExperimentConfig, kinds: &[DivergenceKind], seed: u64) -> Result<(Vec<TimingRow>, Vec<TimingSummaryRow>)> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let w0 = cfg.simulate.w0;
    let offline = sample_path(&kernel, w0, cfg.timing.warm_start, derive_seed(seed, 0))?.modes;
    let states = sample_states(cfg, model.nx, seed);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &kind in kinds {
        let spec = cfg.radius_spec(kind, model.d);
        let conf0 = ConfidenceSchedule::new(cfg.beta_b, cfg.beta_q, 2, 0)?;
        let (s, conf) = replay(&LearnerState::init(model.d, 2)?, &conf0, &offline, &spec)?;
        let ctrl = Controller::Dr(spec);
        let mut be = ClarabelBackend::default();
        let w_now = *offline.last().expect("path has its initial mode");
        value_and_law(&model, cfg.horizon, &cfg.simulate.x0, w_now, &s, &conf, &ctrl, &mut be)?;
        let mut times = Vec::new();
        let mut optimal = 0;
        for (i, x0) in states.iter().enumerate() {
            let sol = value_and_law(&model, cfg.horizon, x0, w_now, &s, &conf, &ctrl, &mut be)?;
            let ms = sol.solve_time * 1e3;
            optimal += (sol.status == SolveStatus::Optimal) as usize;
            times.push(ms);
            rows.push(TimingRow {
                divergence: kind.to_string(),
                sample: i,
                x0: x0.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"),
                solve_ms: ms,
                status: format!("{:?}", sol.status),
            });
        }
        summary.push(TimingSummaryRow {
            divergence: kind.to_string(),
            samples: times.len(),
            optimal,
            avg_ms: crate::mpc::mean(&times),
            max_ms: times.iter().cloned().fold(f64::NAN, f64::max),
        });
    }
    Ok((rows, summary))
}

/// `TV, W < Hellinger < JS, KL`, each comparison with relative `slack`.
pub fn ordering_ok(summary: &[TimingSummaryRow], slack: f64) -> std::result::Result<(), String> {
    let avg =
        |k: DivergenceKind| summary.iter().find(|r| r.divergence == k.to_string()).map(|r| r.avg_ms).ok_or_else(|| format!("missing {k}"));
    let (tv, w, h, js, kl) = (
        avg(DivergenceKind::Tv)?,
        avg(DivergenceKind::Wasserstein)?,
        avg(DivergenceKind::Hellinger)?,
        avg(DivergenceKind::Js)?,
        avg(DivergenceKind::Kl)?,
    );
    let lt = |a: f64, b: f64| a < b * (1.0 + slack);
    if !(lt(tv, h) && lt(w, h)) {
        return Err(format!("TV {tv:.1} / W {w:.1} not below Hellinger {h:.1}"));
    }
    if !(lt(h, js) && lt(h, kl)) {
        return Err(format!("Hellinger {h:.1} not below JS {js:.1} / KL {kl:.1}"));
    }
    Ok(())
}
