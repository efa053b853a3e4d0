//! Dense two-phase simplex for small linear programs (Bland's rule).
//!
//! Used as an independent reference for the polyhedral instances (TV and
//! Wasserstein ambiguity sets, AVaR) and for exact Wasserstein distances.
//! Only zero and nonnegative cones are accepted.

use super::{Cone, ConicProgram, Solution, SolveStatus, SolverBackend};
use crate::error::{Error, Result};

const EPS: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { z: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, p: usize, q: usize) {
        let piv = self.t[p][q];
        for v in self.t[p].iter_mut() {
            *v /= piv;
        }
        let prow = self.t[p].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i != p {
                let f = row[q];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&prow) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.obj[q];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
        }
        self.basis[p] = q;
    }

    /// Runs simplex iterations over columns `< allowed`. Returns false if unbounded.
    fn run(&mut self, allowed: usize) -> bool {
        let rhs = self.ncols;
        loop {
            let Some(q) = (0..allowed).find(|&j| self.obj[j] < -1e-9) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][q];
                if a > EPS {
                    let ratio = self.t[i][rhs] / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((p, _)) => self.pivot(p, q),
            }
        }
    }
}

/// Solves `min c'z  s.t.  A z = b, z >= 0`.
pub fn solve_standard_form(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    let ncols = n + m;
    let mut t = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; ncols + 1];
        for j in 0..n {
            r[j] = sign * row[j];
        }
        r[n + i] = 1.0;
        r[ncols] = sign * b[i];
        t.push(r);
    }
    let mut obj = vec![0.0; ncols + 1];
    for row in &t {
        for j in 0..n {
            obj[j] -= row[j];
        }
        obj[ncols] -= row[ncols];
    }
    let mut tab = Tableau { t, obj, basis: (n..n + m).collect(), ncols };
    tab.run(n);
    let scale = 1.0 + b.iter().map(|v| v.abs()).sum::<f64>();
    if -tab.obj[ncols] > 1e-9 * scale {
        return LpOutcome::Infeasible;
    }
    // drive artificials out of the basis; drop redundant rows
    let mut i = 0;
    while i < tab.t.len() {
        if tab.basis[i] >= n {
            if let Some(q) = (0..n).find(|&j| tab.t[i][j].abs() > 1e-9) {
                tab.pivot(i, q);
            } else {
                tab.t.remove(i);
                tab.basis.remove(i);
                continue;
            }
        }
        i += 1;
    }
    let mut obj = vec![0.0; ncols + 1];
    obj[..n].copy_from_slice(c);
    for (i, &bi) in tab.basis.iter().enumerate() {
        let cb = c[bi];
        if cb != 0.0 {
            for (v, tv) in obj.iter_mut().zip(&tab.t[i]) {
                *v -= cb * tv;
            }
        }
    }
    tab.obj = obj;
    if !tab.run(n) {
        return LpOutcome::Unbounded;
    }
    let mut z = vec![0.0; n];
    for (i, &bi) in tab.basis.iter().enumerate() {
        z[bi] = tab.t[i][ncols];
    }
    let value = c.iter().zip(&z).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { z, value }
}

/// Reference LP backend over [`ConicProgram`]s with polyhedral cones only.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceLp;

impl SolverBackend for ReferenceLp {
    fn name(&self) -> &'static str {
        "reference-lp"
    }

    fn solve(&mut self, program: &ConicProgram) -> Result<Solution> {
        let n = program.n_vars();
        let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut ineq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for block in program.blocks() {
            let target = match block.cone {
                Cone::Free(_) => continue,
                Cone::Zero(_) => &mut eq_rows,
                Cone::Nonneg(_) => &mut ineq_rows,
                other => return Err(Error::SolverFailure(format!("reference LP cannot handle cone {other:?}"))),
            };
            for r in &block.rows {
                let mut a = vec![0.0; n];
                for &(j, c) in &r.terms {
                    a[j] += c;
                }
                target.push((a, r.constant));
            }
        }
        // z = [x+, x-, s]; a'x + k = 0 -> a'x = -k ; a'x + k - s = 0 -> a'x - s = -k
        let ns = ineq_rows.len();
        let width = 2 * n + ns;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (row, k) in &eq_rows {
            let mut r = vec![0.0; width];
            for j in 0..n {
                r[j] = row[j];
                r[n + j] = -row[j];
            }
            a.push(r);
            b.push(-k);
        }
        for (s, (row, k)) in ineq_rows.iter().enumerate() {
            let mut r = vec![0.0; width];
            for j in 0..n {
                r[j] = row[j];
                r[n + j] = -row[j];
            }
            r[2 * n + s] = -1.0;
            a.push(r);
            b.push(-k);
        }
        let c0 = program.objective();
        let mut c = vec![0.0; width];
        for j in 0..n {
            c[j] = c0[j];
            c[n + j] = -c0[j];
        }
        let outcome = solve_standard_form(&a, &b, &c);
        let (status, x, label) = match outcome {
            LpOutcome::Optimal { z, .. } => {
                let x: Vec<f64> = (0..n).map(|j| z[j] - z[n + j]).collect();
                (SolveStatus::Optimal, x, "optimal")
            }
            LpOutcome::Infeasible => (SolveStatus::Infeasible, vec![f64::NAN; n], "infeasible"),
            LpOutcome::Unbounded => (SolveStatus::SolverError, vec![f64::NAN; n], "unbounded"),
        };
        let value = if status == SolveStatus::Optimal { program.eval_objective(&x) } else { f64::NAN };
        Ok(Solution { status, value, x, solve_time: 0.0, iterations: 0, reduced_accuracy: false, backend_status: label.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::AffineExpr;
    use approx::assert_abs_diff_eq;

    #[test]
    fn textbook_lp() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let a = vec![vec![1.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 1.0, 0.0], vec![3.0, 2.0, 0.0, 0.0, 1.0]];
        let out = solve_standard_form(&a, &[4.0, 12.0, 18.0], &[-3.0, -5.0, 0.0, 0.0, 0.0]);
        match out {
            LpOutcome::Optimal { z, value } => {
                assert_abs_diff_eq!(value, -36.0, epsilon = 1e-10);
                assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-10);
                assert_abs_diff_eq!(z[1], 6.0, epsilon = 1e-10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        assert_eq!(solve_standard_form(&[vec![1.0, 1.0]], &[-1.0], &[0.0, 0.0]), LpOutcome::Infeasible);
        assert_eq!(solve_standard_form(&[vec![1.0, -1.0]], &[0.0], &[-1.0, 0.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_redundant_rows() {
        // duplicated equality row
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        match solve_standard_form(&a, &[1.0, 1.0], &[1.0, 2.0]) {
            LpOutcome::Optimal { value, .. } => assert_abs_diff_eq!(value, 1.0, epsilon = 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backend_handles_free_variables() {
        // min x s.t. x >= -3 (x free)
        let mut p = ConicProgram::new();
        p.add_vars("x", 1);
        p.add_objective_term(0, 1.0);
        p.add_block(Cone::Nonneg(1), vec![AffineExpr::var(0).plus_const(3.0)]).unwrap();
        let s = ReferenceLp.solve(&p).unwrap();
        assert_abs_diff_eq!(s.value, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_conic_blocks() {
        let mut p = ConicProgram::new();
        p.add_vars("x", 3);
        p.add_block(Cone::Exponential, (0..3).map(AffineExpr::var).collect()).unwrap();
        assert!(ReferenceLp.solve(&p).is_err());
    }
}
