//! Cone-tagged conic programs and the solver-backend contract.
//!
//! A program minimizes `c'x + c0` subject to blocks of affine rows, each block
//! required to lie in a cone:
//!
//! ```text
//! (a_1'x + k_1, ..., a_m'x + k_m) ∈ K
//! ```
//!
//! Supported cones are the zero cone, the nonnegative orthant, the second-order
//! cone `{(t, y) : t >= |y|}`, the exponential cone
//! `cl{(x1, x2, x3) : x2 > 0, x2 exp(x1 / x2) <= x3}` and its dual. `Free` rows
//! impose nothing and are dropped by backends.

mod clarabel;
mod simplex;

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::clarabel::ClarabelBackend;
pub use self::simplex::{solve_standard_form, LpOutcome, ReferenceLp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Free(usize),
    Zero(usize),
    Nonneg(usize),
    SecondOrder(usize),
    Exponential,
    DualExponential,
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Zero(n) | Cone::Nonneg(n) | Cone::SecondOrder(n) => n,
            Cone::Exponential | Cone::DualExponential => 3,
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        matches!(self, Cone::Free(_) | Cone::Zero(_) | Cone::Nonneg(_))
    }

    /// Distance-like violation of `v ∈ K` (0 when satisfied).
    pub fn violation(&self, v: &[f64]) -> f64 {
        match *self {
            Cone::Free(_) => 0.0,
            Cone::Zero(_) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Cone::Nonneg(_) => v.iter().fold(0.0, |m, x| m.max(-x)),
            Cone::SecondOrder(_) => {
                let norm = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm - v[0]).max(0.0)
            }
            Cone::Exponential => exp_cone_violation(v[0], v[1], v[2]),
            Cone::DualExponential => exp_cone_violation(v[0] - v[1], -v[0], v[2]),
        }
    }
}

fn exp_cone_violation(x1: f64, x2: f64, x3: f64) -> f64 {
    if x2 > 1e-12 {
        let lhs = x2 * (x1 / x2).min(700.0).exp();
        (lhs - x3).max(0.0)
    } else {
        // boundary piece {x1 <= 0, x2 = 0, x3 >= 0}
        x1.max(0.0) + (-x3).max(0.0) + (-x2).max(0.0)
    }
}

/// Dual of a cone: the zero cone dualizes to the whole space, the orthant and
/// the second-order cone are self-dual, and the exponential cone maps to
/// `{(u, v, w) : u < 0, w > 0, -u log(-u/w) + u - v <= 0}` plus its closure.
pub fn dual_cone(c: &Cone) -> Cone {
    match *c {
        Cone::Free(n) => Cone::Zero(n),
        Cone::Zero(n) => Cone::Free(n),
        Cone::Nonneg(n) => Cone::Nonneg(n),
        Cone::SecondOrder(n) => Cone::SecondOrder(n),
        Cone::Exponential => Cone::DualExponential,
        Cone::DualExponential => Cone::Exponential,
    }
}

/// Sparse affine form `Σ coef * x[idx] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        AffineExpr { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn term(i: usize, coef: f64) -> Self {
        AffineExpr { terms: vec![(i, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, i: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((i, coef));
        }
        self
    }

    pub fn with_term(mut self, i: usize, coef: f64) -> Self {
        self.add_term(i, coef);
        self
    }

    pub fn plus(mut self, other: &AffineExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBlock {
    pub cone: Cone,
    pub rows: Vec<AffineExpr>,
}

/// Named contiguous range of decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    n_vars: usize,
    objective: Vec<(usize, f64)>,
    objective_constant: f64,
    blocks: Vec<ConstraintBlock>,
    var_blocks: Vec<VarBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `n` free variables and returns their index range.
    pub fn add_vars(&mut self, name: impl Into<String>, n: usize) -> Range<usize> {
        let start = self.n_vars;
        self.n_vars += n;
        self.var_blocks.push(VarBlock { name: name.into(), start, len: n });
        start..self.n_vars
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn var_blocks(&self) -> &[VarBlock] {
        &self.var_blocks
    }

    pub fn var_block(&self, name: &str) -> Option<Range<usize>> {
        self.var_blocks.iter().find(|b| b.name == name).map(|b| b.start..b.start + b.len)
    }

    pub fn add_objective_term(&mut self, i: usize, coef: f64) {
        self.objective.push((i, coef));
    }

    pub fn set_objective_constant(&mut self, c: f64) {
        self.objective_constant = c;
    }

    /// Dense objective vector.
    pub fn objective(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_vars];
        for &(i, v) in &self.objective {
            c[i] += v;
        }
        c
    }

    pub fn objective_terms(&self) -> &[(usize, f64)] {
        &self.objective
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn add_block(&mut self, cone: Cone, rows: Vec<AffineExpr>) -> Result<()> {
        if rows.len() != cone.dim() {
            return Err(Error::InvalidInput(format!("cone {cone:?} expects {} rows, got {}", cone.dim(), rows.len())));
        }
        if let Cone::SecondOrder(n) = cone {
            if n < 2 {
                return Err(Error::InvalidInput("second-order cone needs dimension >= 2".into()));
            }
        }
        for r in &rows {
            if let Some(&(i, _)) = r.terms.iter().find(|&&(i, _)| i >= self.n_vars) {
                return Err(Error::InvalidInput(format!("row references unknown variable {i}")));
            }
        }
        if matches!(cone, Cone::Free(_)) {
            return Ok(());
        }
        self.blocks.push(ConstraintBlock { cone, rows });
        Ok(())
    }

    pub fn blocks(&self) -> &[ConstraintBlock] {
        &self.blocks
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Largest cone violation of the point `x` over all blocks.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let v: Vec<f64> = b.rows.iter().map(|r| r.eval(x)).collect();
                b.cone.violation(&v)
            })
            .fold(0.0, f64::max)
    }

    /// Plain-text sparse dump: header, objective, triplets and the cone list.
    ///
    /// ```text
    /// conic-program v1
    /// vars <n> rows <m> blocks <k>
    /// objective <nnz> <constant>
    /// <col> <value>            (nnz lines)
    /// constraints <nnz>
    /// <row> <col> <value>      (nnz lines, row value = Σ a x + k)
    /// constants
    /// <row> <k>                (one line per row)
    /// cones
    /// <kind> <dim>             (one line per block, in row order)
    /// ```
    pub fn to_sparse_text(&self) -> String {
        let mut out = String::new();
        let nnz: usize = self.blocks.iter().flat_map(|b| &b.rows).map(|r| r.terms.len()).sum();
        let _ = writeln!(out, "conic-program v1");
        let _ = writeln!(out, "vars {} rows {} blocks {}", self.n_vars, self.n_rows(), self.blocks.len());
        let _ = writeln!(out, "objective {} {:e}", self.objective.len(), self.objective_constant);
        for &(i, v) in &self.objective {
            let _ = writeln!(out, "{i} {v:e}");
        }
        let _ = writeln!(out, "constraints {nnz}");
        let mut row = 0;
        for b in &self.blocks {
            for r in &b.rows {
                for &(i, v) in &r.terms {
                    let _ = writeln!(out, "{row} {i} {v:e}");
                }
                row += 1;
            }
        }
        let _ = writeln!(out, "constants");
        row = 0;
        for b in &self.blocks {
            for r in &b.rows {
                let _ = writeln!(out, "{row} {:e}", r.constant);
                row += 1;
            }
        }
        let _ = writeln!(out, "cones");
        for b in &self.blocks {
            let kind = match b.cone {
                Cone::Free(_) => "free",
                Cone::Zero(_) => "zero",
                Cone::Nonneg(_) => "nonneg",
                Cone::SecondOrder(_) => "soc",
                Cone::Exponential => "exp",
                Cone::DualExponential => "dual_exp",
            };
            let _ = writeln!(out, "{kind} {}", b.cone.dim());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    SolverError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    /// Optimal value (NaN unless `Optimal`).
    pub value: f64,
    pub x: Vec<f64>,
    /// Wall-clock solve time in seconds.
    pub solve_time: f64,
    pub iterations: u32,
    /// Set when the backend only reached its reduced accuracy tolerances.
    pub reduced_accuracy: bool,
    pub backend_status: String,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solver backend. Each instance is owned by one caller at a time.
pub trait SolverBackend {
    fn name(&self) -> &'static str;
    fn solve(&mut self, program: &ConicProgram) -> Result<Solution>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_cones() {
        assert_eq!(dual_cone(&Cone::Nonneg(5)), Cone::Nonneg(5));
        assert_eq!(dual_cone(&Cone::SecondOrder(3)), Cone::SecondOrder(3));
        assert_eq!(dual_cone(&Cone::Zero(2)), Cone::Free(2));
        assert_eq!(dual_cone(&Cone::Exponential), Cone::DualExponential);
    }

    #[test]
    fn dual_exponential_membership() {
        // (u, v, w) with u < 0, w > 0 and -u log(-u/w) + u - v <= 0
        let member = |u: f64, v: f64, w: f64| -u * (-u / w).ln() + u - v <= 1e-12;
        for &(u, v, w) in &[(-1.0, 0.0, 1.0), (-1.0, -0.5, 1.0), (-0.5, 3.0, 0.1), (-2.0, -0.5, 4.0)] {
            let viol = Cone::DualExponential.violation(&[u, v, w]);
            assert_eq!(member(u, v, w), viol <= 1e-9, "({u},{v},{w}) viol {viol}");
        }
    }

    #[test]
    fn exp_cone_dual_pairing_is_nonnegative() {
        // <x, y> >= 0 for x in K_exp and y in K_exp^*
        let xs = [(0.0, 1.0, 1.0), (-1.0, 2.0, 1.3), (1.0, 1.0, 3.0)];
        let ys = [(-1.0, 0.0, 1.0), (-1.0, -1.0, 1.0), (-0.5, 3.0, 0.1)];
        for x in xs {
            assert!(Cone::Exponential.violation(&[x.0, x.1, x.2]) < 1e-12);
            for y in ys {
                assert!(Cone::DualExponential.violation(&[y.0, y.1, y.2]) < 1e-12);
                assert!(x.0 * y.0 + x.1 * y.1 + x.2 * y.2 >= -1e-12);
            }
        }
    }

    #[test]
    fn block_dimension_checked() {
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 2);
        assert!(p.add_block(Cone::Exponential, vec![AffineExpr::var(x.start)]).is_err());
        assert!(p.add_block(Cone::Nonneg(1), vec![AffineExpr::var(7)]).is_err());
        assert!(p.add_block(Cone::Nonneg(1), vec![AffineExpr::var(1)]).is_ok());
        assert_eq!(p.var_block("x"), Some(0..2));
    }

    #[test]
    fn sparse_text_layout() {
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 2);
        p.add_objective_term(x.start, 1.0);
        p.add_block(Cone::Zero(1), vec![AffineExpr::var(0).with_term(1, 2.0).plus_const(-1.0)]).unwrap();
        let text = p.to_sparse_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "conic-program v1");
        assert_eq!(lines[1], "vars 2 rows 1 blocks 1");
        assert!(text.contains("cones\nzero 1\n"));
    }
}
