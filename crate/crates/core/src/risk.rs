//! Average value-at-risk, its distributionally robust counterpart and the
//! dual epigraph `{(G, γ) : ∃y, Eᵀy = G, Fᵀy = 0, y ∈ C*, γ >= bᵀy}` used to
//! embed conic risk measures in larger programs.

use serde::{Deserialize, Serialize};

use crate::ambiguity::{conic_rep, worst_case_over_rep, AmbiguitySet, ConicRep};
use crate::conic::{dual_cone, AffineExpr, Cone, ConicProgram, SolverBackend};
use crate::error::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("risk level {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `AVaR_α^p[ξ]`, evaluated as `max { μᵀξ : Σμ = 1, 0 <= μ <= p/α }` by
/// greedily loading the largest outcomes; `α = 0` gives `max ξ`.
pub fn avar(p: &[f64], alpha: f64, xi: &[f64]) -> f64 {
    if alpha <= 0.0 {
        return xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    let mut order: Vec<usize> = (0..xi.len()).collect();
    order.sort_by(|&a, &b| xi[b].total_cmp(&xi[a]));
    let mut left = 1.0;
    let mut value = 0.0;
    for i in order {
        if left <= 0.0 {
            break;
        }
        let m = (p[i] / alpha).min(left);
        value += m * xi[i];
        left -= m;
    }
    value
}

/// `min_t t + E_p[ξ - t]₊ / α` by scanning the breakpoints `t ∈ {ξ_w}`.
pub fn avar_scan(p: &[f64], alpha: f64, xi: &[f64]) -> f64 {
    if alpha <= 0.0 {
        return xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    xi.iter().map(|&t| t + p.iter().zip(xi).map(|(pw, x)| pw * (x - t).max(0.0)).sum::<f64>() / alpha).fold(f64::INFINITY, f64::min)
}

/// The AVaR-inducing set `{μ : Σμ = 1, αμ <= p, μ >= 0}`.
///
/// Rows are `[1 - 1ᵀμ] ∈ {0}` followed by `[p - αμ; μ] ∈ R₊^{2d}`. Writing the
/// normalization as one equality (instead of the two opposing inequalities
/// `1ᵀμ <= 1`, `-1ᵀμ <= -1`) describes the same set but keeps the orthant
/// block strictly feasible, which interior-point solvers need.
pub fn avar_conic_rep(p: &[f64], alpha: f64) -> Result<ConicRep> {
    check_alpha(alpha)?;
    let d = p.len();
    let mut e = Vec::with_capacity(2 * d + 1);
    let mut b = Vec::with_capacity(2 * d + 1);
    e.push(vec![1.0; d]);
    b.push(1.0);
    for i in 0..d {
        let mut r = vec![0.0; d];
        r[i] = alpha;
        e.push(r);
        b.push(p[i]);
    }
    for i in 0..d {
        let mut r = vec![0.0; d];
        r[i] = -1.0;
        e.push(r);
        b.push(0.0);
    }
    let rep = ConicRep { d, aux_dim: 0, f: vec![vec![]; 2 * d + 1], e, b, cones: vec![Cone::Zero(1), Cone::Nonneg(2 * d)] };
    rep.validate()?;
    Ok(rep)
}

/// Representation of `max_{p ∈ A} AVaR_α^p`: variables `μ` with auxiliaries
/// `(p, ν)`, rows `[b'; b̄] - [E; 0] μ - [[-B, 0], [Ē, F̄]] (p, ν)` in
/// `{0} × R₊^{2d} × C̄`, where `B p` injects `p` into the `αμ <= p` rows.
pub fn robust_avar_rep(amb: &ConicRep, alpha: f64) -> Result<ConicRep> {
    amb.validate()?;
    let d = amb.d;
    let base = avar_conic_rep(&vec![0.0; d], alpha)?;
    let aux = d + amb.aux_dim;
    let mut e = Vec::new();
    let mut f = Vec::new();
    let mut b = Vec::new();
    for (r, row) in base.e.iter().enumerate() {
        e.push(row.clone());
        let mut fr = vec![0.0; aux];
        if (1..1 + d).contains(&r) {
            fr[r - 1] = -1.0;
        }
        f.push(fr);
        b.push(base.b[r]);
    }
    for r in 0..amb.n_rows() {
        e.push(vec![0.0; d]);
        let mut fr = amb.e[r].clone();
        fr.extend_from_slice(&amb.f[r]);
        f.push(fr);
        b.push(amb.b[r]);
    }
    let mut cones = base.cones;
    cones.extend_from_slice(&amb.cones);
    let rep = ConicRep { d, aux_dim: aux, e, f, b, cones };
    rep.validate()?;
    Ok(rep)
}

/// Least conservative tightened level `(α - β̄) / (1 - β̄)`.
pub fn tighten_alpha(alpha: f64, beta_bar: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(0.0..1.0).contains(&beta_bar) || beta_bar >= alpha {
        return Err(Error::BetaNotBelowAlpha { alpha, beta_bar });
    }
    Ok(((alpha - beta_bar) / (1.0 - beta_bar)).clamp(0.0, alpha))
}

/// A risk measure ready to be embedded: either a plain expectation (used for
/// singleton sets, where conic duality has no strictly feasible point) or a
/// worst case over a conic representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RiskMeasure {
    Expectation(Vec<f64>),
    Conic(ConicRep),
}

impl RiskMeasure {
    /// Ambiguous expectation over `set`.
    pub fn ambiguous_expectation(set: &AmbiguitySet) -> Result<Self> {
        if set.is_singleton() {
            Ok(RiskMeasure::Expectation(set.center.clone()))
        } else {
            Ok(RiskMeasure::Conic(conic_rep(set)?))
        }
    }

    /// Ambiguous AVaR `max_{p ∈ set} AVaR_α^p`.
    pub fn ambiguous_avar(set: &AmbiguitySet, alpha: f64) -> Result<Self> {
        if set.is_singleton() {
            Ok(RiskMeasure::Conic(avar_conic_rep(&set.center, alpha)?))
        } else {
            Ok(RiskMeasure::Conic(robust_avar_rep(&conic_rep(set)?, alpha)?))
        }
    }

    pub fn avar(p: &[f64], alpha: f64) -> Result<Self> {
        Ok(RiskMeasure::Conic(avar_conic_rep(p, alpha)?))
    }

    pub fn d(&self) -> usize {
        match self {
            RiskMeasure::Expectation(p) => p.len(),
            RiskMeasure::Conic(rep) => rep.d,
        }
    }

    /// Primal evaluation `ρ[ξ]`.
    pub fn evaluate(&self, xi: &[f64], backend: &mut dyn SolverBackend) -> Result<f64> {
        match self {
            RiskMeasure::Expectation(p) => Ok(p.iter().zip(xi).map(|(a, b)| a * b).sum()),
            RiskMeasure::Conic(rep) => Ok(worst_case_over_rep(rep, xi, backend)?.0),
        }
    }

    /// Adds `(G, γ) ∈ epi ρ` to `prog`; returns the number of new variables.
    pub fn add_epigraph(&self, prog: &mut ConicProgram, g: &[AffineExpr], gamma: &AffineExpr, tag: &str) -> Result<usize> {
        if g.len() != self.d() {
            return Err(Error::InvalidInput(format!("epigraph argument has {} entries, expected {}", g.len(), self.d())));
        }
        match self {
            RiskMeasure::Expectation(p) => {
                let mut row = gamma.clone();
                for (pw, gw) in p.iter().zip(g) {
                    if *pw != 0.0 {
                        row = row.plus(&gw.clone().scaled(-pw));
                    }
                }
                prog.add_block(Cone::Nonneg(1), vec![row])?;
                Ok(0)
            }
            RiskMeasure::Conic(rep) => epigraph_block(rep).add_to(prog, g, gamma, tag),
        }
    }
}

/// Dual description of `epi ρ` for `ρ[G] = max { Gᵀp : b - Ep - Fν ∈ C }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEpigraphBlock {
    pub rep: ConicRep,
    pub dual_cones: Vec<Cone>,
}

impl RiskEpigraphBlock {
    pub fn dual_dim(&self) -> usize {
        self.rep.n_rows()
    }

    pub fn add_to(&self, prog: &mut ConicProgram, g: &[AffineExpr], gamma: &AffineExpr, tag: &str) -> Result<usize> {
        let rep = &self.rep;
        let m = rep.n_rows();
        let y: Vec<usize> = prog.add_vars(format!("{tag}y"), m).collect();
        // Eᵀy = G, Fᵀy = 0
        let mut eq = Vec::with_capacity(rep.d + rep.aux_dim);
        for j in 0..rep.d {
            let mut row = g[j].clone().scaled(-1.0);
            for r in 0..m {
                row.add_term(y[r], rep.e[r][j]);
            }
            eq.push(row);
        }
        for k in 0..rep.aux_dim {
            let mut row = AffineExpr::default();
            for r in 0..m {
                row.add_term(y[r], rep.f[r][k]);
            }
            eq.push(row);
        }
        let n_eq = eq.len();
        prog.add_block(Cone::Zero(n_eq), eq)?;
        // y ∈ C*
        let mut start = 0;
        for cone in &self.dual_cones {
            let n = cone.dim();
            let rows = (start..start + n).map(|r| AffineExpr::var(y[r])).collect();
            prog.add_block(*cone, rows)?;
            start += n;
        }
        // γ >= bᵀy
        let mut row = gamma.clone();
        for r in 0..m {
            row.add_term(y[r], -rep.b[r]);
        }
        prog.add_block(Cone::Nonneg(1), vec![row])?;
        Ok(m)
    }
}

pub fn epigraph_block(rep: &ConicRep) -> RiskEpigraphBlock {
    RiskEpigraphBlock { rep: rep.clone(), dual_cones: rep.cones.iter().map(dual_cone).collect() }
}

/// Minimal `γ` with `(ξ, γ) ∈ epi ρ`, by solving the dual program.
pub fn epigraph_value(measure: &RiskMeasure, xi: &[f64], backend: &mut dyn SolverBackend) -> Result<f64> {
    let mut prog = ConicProgram::new();
    let gamma = prog.add_vars("gamma", 1).start;
    prog.add_objective_term(gamma, 1.0);
    let g: Vec<AffineExpr> = xi.iter().map(|&v| AffineExpr::constant(v)).collect();
    measure.add_epigraph(&mut prog, &g, &AffineExpr::var(gamma), "")?;
    let sol = backend.solve(&prog)?;
    if !sol.is_optimal() {
        return Err(Error::SolverFailure(format!("epigraph program: {}", sol.backend_status)));
    }
    Ok(sol.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::{Divergence, DivergenceKind};
    use crate::conic::{ClarabelBackend, ReferenceLp};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    #[test]
    fn avar_examples() {
        let xi = [0.3, -1.0, 2.0];
        let p = [0.2, 0.5, 0.3];
        assert_eq!(avar(&p, 0.0, &xi), 2.0);
        assert_abs_diff_eq!(avar(&p, 1.0, &xi), 0.06 - 0.5 + 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(avar(&[0.5, 0.5], 0.5, &[0.0, 1.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(avar_scan(&[0.5, 0.5], 0.5, &[0.0, 1.0]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn greedy_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let d = rng.gen_range(2..7);
            let p = random_simplex(&mut rng, d);
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = rng.gen_range(0.01..1.0);
            assert_abs_diff_eq!(avar(&p, a, &xi), avar_scan(&p, a, &xi), epsilon = 1e-12);
        }
    }

    #[test]
    fn conic_avar_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let d = rng.gen_range(2..6);
            let p = random_simplex(&mut rng, d);
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = rng.gen_range(0.0..=1.0);
            let rep = avar_conic_rep(&p, a).unwrap();
            let (v, _) = worst_case_over_rep(&rep, &xi, &mut ReferenceLp).unwrap();
            assert_abs_diff_eq!(v, avar_scan(&p, a, &xi), epsilon = 1e-9);
        }
    }

    #[test]
    fn tighten_examples() {
        assert_eq!(tighten_alpha(0.19, 0.0).unwrap(), 0.19);
        assert_abs_diff_eq!(tighten_alpha(0.19, 0.0475).unwrap(), 0.1425 / 0.9525, epsilon = 1e-15);
        assert_abs_diff_eq!(tighten_alpha(0.19, 0.0475).unwrap(), 0.149606, epsilon = 1e-6);
        assert_eq!(tighten_alpha(0.19, 0.19), Err(Error::BetaNotBelowAlpha { alpha: 0.19, beta_bar: 0.19 }));
        let (a, b) = (0.3, 0.1);
        let ah = tighten_alpha(a, b).unwrap();
        assert_abs_diff_eq!((1.0 - ah) * (1.0 - b), 1.0 - a, epsilon = 1e-15);
    }

    #[test]
    fn robust_avar_collapses() {
        let xi = [0.4, -0.2, 1.1];
        let full = robust_avar_rep(&ConicRep::simplex(3), 0.3).unwrap();
        let (v, _) = worst_case_over_rep(&full, &xi, &mut ReferenceLp).unwrap();
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-9);
        let c = vec![0.2, 0.5, 0.3];
        let set = AmbiguitySet::new(c.clone(), 0.0, Divergence::tv()).unwrap();
        let rep = robust_avar_rep(&conic_rep(&set).unwrap(), 0.3).unwrap();
        let (v, _) = worst_case_over_rep(&rep, &xi, &mut ReferenceLp).unwrap();
        assert_abs_diff_eq!(v, avar(&c, 0.3, &xi), epsilon = 1e-9);
    }

    #[test]
    fn epigraph_singleton_and_full() {
        let xi = [0.4, -0.2, 1.1];
        let c = vec![0.2, 0.5, 0.3];
        let single = RiskMeasure::Expectation(c.clone());
        let v = epigraph_value(&single, &xi, &mut ClarabelBackend::default()).unwrap();
        assert_abs_diff_eq!(v, 0.08 - 0.1 + 0.33, epsilon = 1e-7);
        let full = RiskMeasure::Conic(ConicRep::simplex(3));
        let v = epigraph_value(&full, &xi, &mut ClarabelBackend::default()).unwrap();
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-7);
    }

    #[test]
    fn dual_matches_primal_for_every_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut backend = ClarabelBackend::default();
        for kind in DivergenceKind::ALL {
            for _ in 0..10 {
                let c = random_simplex(&mut rng, 3);
                let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = rng.gen_range(0.05..0.6);
                let set = AmbiguitySet::new(c, r, Divergence::default_for(kind, 3)).unwrap();
                for m in [RiskMeasure::ambiguous_expectation(&set).unwrap(), RiskMeasure::ambiguous_avar(&set, 0.4).unwrap()] {
                    let primal = m.evaluate(&xi, &mut backend).unwrap();
                    let dual = epigraph_value(&m, &xi, &mut backend).unwrap();
                    assert_abs_diff_eq!(primal, dual, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn avar_bounds_chance() {
        // AVaR_α[ξ] <= 0 implies P[ξ > 0] <= α
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..2000 {
            let d = rng.gen_range(2..6);
            let p = random_simplex(&mut rng, d);
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..1.0)).collect();
            let a = rng.gen_range(0.01..1.0);
            if avar(&p, a, &xi) <= 0.0 {
                hits += 1;
                let prob: f64 = p.iter().zip(&xi).filter(|(_, x)| **x > 0.0).map(|(p, _)| p).sum();
                assert!(prob <= a + 1e-12);
            }
        }
        assert!(hits > 100);
    }
}
