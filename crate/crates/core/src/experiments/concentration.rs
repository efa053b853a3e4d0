//! Radii versus sample size: empirical distance between the i.i.d. empirical
//! distribution and a uniform truth, against the learner's radius bound.

use rand::Rng;

use super::output::ConcentrationRow;
use super::ConcentrationConfig;
use crate::ambiguity::{divergence_eval, Divergence, DivergenceKind};
use crate::error::Result;
use crate::learner::{radius, ConfidenceSchedule};
use crate::mpc::{map_cells, mean, quantile};
use crate::rng::{derive_seed, stream};

/// Log-spaced sample sizes `1..=t_max`, deduplicated after rounding.
pub fn log_grid(t_max: u64, per_decade: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    let decades = (t_max as f64).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    for k in 0..=n {
        let t = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
        let t = t.min(t_max).max(1);
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// `D(p̂_t, p)` for every grid size and divergence along one sample stream.
fn one_run(cfg: &ConcentrationConfig, grid: &[u64], divs: &[Divergence], seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = cfg.d;
    let p = vec![1.0 / d as f64; d];
    let mut rng = stream(seed);
    let mut counts = vec![0u64; d];
    let mut drawn = 0u64;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        while drawn < t {
            counts[rng.gen_range(0..d)] += 1;
            drawn += 1;
        }
        let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / t as f64).collect();
        out.push(divs.iter().map(|dv| divergence_eval(dv, &p_hat, &p)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(out)
}

pub fn run(cfg: &ConcentrationConfig, kinds: &[DivergenceKind], sharp_kl: bool, seed: u64) -> Result<Vec<ConcentrationRow>> {
    let grid = log_grid(cfg.t_max, cfg.points_per_decade);
    let divs: Vec<Divergence> = kinds.iter().map(|&k| Divergence::default_for(k, cfg.d)).collect();
    // validates (b, q)
    ConfidenceSchedule::new(cfg.b, cfg.q, 1, 0)?;
    let runs: Vec<u64> = (0..cfg.runs as u64).collect();
    let samples = map_cells(&runs, |&r| one_run(cfg, &grid, &divs, derive_seed(seed, r)))?;
    let mut rows = Vec::new();
    for (di, dv) in divs.iter().enumerate() {
        for (gi, &t) in grid.iter().enumerate() {
            let beta = ConfidenceSchedule::closed_form(cfg.b, cfg.q, t);
            let vals: Vec<f64> = samples.iter().map(|s| s[gi][di]).collect();
            rows.push(ConcentrationRow {
                divergence: dv.kind.to_string(),
                t,
                beta,
                radius: radius(dv, t, beta, cfg.d, sharp_kl)?,
                q_lower: quantile(&vals, beta),
                q_upper: quantile(&vals, 1.0 - beta),
                median: quantile(&vals, 0.5),
                mean: mean(&vals),
            });
        }
    }
    Ok(rows)
}

/// Fraction of grid sizes whose upper quantile stays below the radius, per
/// divergence.
pub fn coverage(rows: &[ConcentrationRow]) -> Vec<(String, f64)> {
    let mut names: Vec<String> = rows.iter().map(|r| r.divergence.clone()).collect();
    names.dedup();
    names
        .into_iter()
        .map(|n| {
            let sel: Vec<&ConcentrationRow> = rows.iter().filter(|r| r.divergence == n).collect();
            let ok = sel.iter().filter(|r| r.q_upper <= r.radius).count();
            (n, ok as f64 / sel.len().max(1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_increasing_and_bounded() {
        let g = log_grid(10_000, 10);
        assert_eq!(g.first(), Some(&1));
        assert_eq!(g.last(), Some(&10_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_study_is_deterministic_and_covered() {
        let cfg = ConcentrationConfig { runs: 20, t_max: 100, points_per_decade: 3, ..Default::default() };
        let a = run(&cfg, &DivergenceKind::ALL, false, 1).unwrap();
        let b = run(&cfg, &DivergenceKind::ALL, false, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5 * log_grid(100, 3).len());
        for r in &a {
            assert!(r.q_lower <= r.median && r.median <= r.q_upper);
        }
        for (_, c) in coverage(&a) {
            assert!(c >= 0.95);
        }
    }
}
