//! Adapter onto the Clarabel interior-point solver.
//!
//! Clarabel solves `min c'x  s.t.  s = b - Ax ∈ K`, so a row `a'x + k ∈ K`
//! becomes `A = -a`, `b = k`. The exponential cone convention matches ours;
//! dual-exponential rows `(u, v, w)` are mapped to `(u - v, -u, w) ∈ K_exp`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{AffineExpr, Cone, ConicProgram, Solution, SolveStatus, SolverBackend};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ClarabelBackend {
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        ClarabelBackend { tol: 1e-8, max_iter: 200, verbose: false }
    }
}

impl ClarabelBackend {
    fn settings(&self) -> DefaultSettings<f64> {
        DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .build()
            .expect("static solver settings are valid")
    }
}

struct Lowered {
    rows: Vec<AffineExpr>,
    cones: Vec<SupportedConeT<f64>>,
}

fn lower(program: &ConicProgram) -> Lowered {
    let mut rows = Vec::with_capacity(program.n_rows());
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    for block in program.blocks() {
        match block.cone {
            Cone::Free(_) => continue,
            Cone::Zero(n) => {
                rows.extend(block.rows.iter().cloned());
                push_merged(&mut cones, SupportedConeT::ZeroConeT(n));
            }
            Cone::Nonneg(n) => {
                rows.extend(block.rows.iter().cloned());
                push_merged(&mut cones, SupportedConeT::NonnegativeConeT(n));
            }
            Cone::SecondOrder(n) => {
                rows.extend(block.rows.iter().cloned());
                cones.push(SupportedConeT::SecondOrderConeT(n));
            }
            Cone::Exponential => {
                rows.extend(block.rows.iter().cloned());
                cones.push(SupportedConeT::ExponentialConeT());
            }
            Cone::DualExponential => {
                let (u, v, w) = (&block.rows[0], &block.rows[1], &block.rows[2]);
                rows.push(u.clone().plus(&v.clone().scaled(-1.0)));
                rows.push(u.clone().scaled(-1.0));
                rows.push(w.clone());
                cones.push(SupportedConeT::ExponentialConeT());
            }
        }
    }
    Lowered { rows, cones }
}

fn push_merged(cones: &mut Vec<SupportedConeT<f64>>, cone: SupportedConeT<f64>) {
    match (cones.last_mut(), &cone) {
        (Some(SupportedConeT::ZeroConeT(a)), SupportedConeT::ZeroConeT(b))
        | (Some(SupportedConeT::NonnegativeConeT(a)), SupportedConeT::NonnegativeConeT(b)) => {
            *a += *b;
        }
        _ => cones.push(cone),
    }
}

impl SolverBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&mut self, program: &ConicProgram) -> Result<Solution> {
        let n = program.n_vars();
        let Lowered { rows, cones } = lower(program);
        let m = rows.len();
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        for (r, row) in rows.iter().enumerate() {
            for &(j, c) in &row.terms {
                ii.push(r);
                jj.push(j);
                vv.push(-c);
            }
            b.push(row.constant);
        }
        let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
        let p = CscMatrix::zeros((n, n));
        let q = program.objective();
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, self.settings()).map_err(|e| Error::SolverFailure(e.to_string()))?;
        solver.solve();
        let sol = &solver.solution;
        let (status, reduced) = match sol.status {
            SolverStatus::Solved => (SolveStatus::Optimal, false),
            SolverStatus::AlmostSolved => (SolveStatus::Optimal, true),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (SolveStatus::Infeasible, false),
            _ => (SolveStatus::SolverError, false),
        };
        let value = if status == SolveStatus::Optimal { program.eval_objective(&sol.x) } else { f64::NAN };
        Ok(Solution {
            status,
            value,
            x: sol.x.clone(),
            solve_time: sol.solve_time,
            iterations: sol.iterations,
            reduced_accuracy: reduced,
            backend_status: format!("{:?}", sol.status),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  ->  x=1.6, y=1.2
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 2);
        p.add_objective_term(v.start, -1.0);
        p.add_objective_term(v.start + 1, -1.0);
        p.add_block(
            Cone::Nonneg(4),
            vec![
                AffineExpr::constant(4.0).with_term(0, -1.0).with_term(1, -2.0),
                AffineExpr::constant(6.0).with_term(0, -3.0).with_term(1, -1.0),
                AffineExpr::var(0),
                AffineExpr::var(1),
            ],
        )
        .unwrap();
        let s = ClarabelBackend::default().solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.value, -2.8, epsilon = 1e-7);
        assert_abs_diff_eq!(s.x[0], 1.6, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_lp() {
        let mut p = ConicProgram::new();
        p.add_vars("x", 1);
        p.add_block(Cone::Nonneg(2), vec![AffineExpr::var(0).plus_const(-1.0), AffineExpr::term(0, -1.0)]).unwrap();
        let s = ClarabelBackend::default().solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn exp_cone_log() {
        // max t s.t. (t, 1, 2) ∈ K_exp  ->  t = ln 2
        let mut p = ConicProgram::new();
        p.add_vars("t", 1);
        p.add_objective_term(0, -1.0);
        p.add_block(Cone::Exponential, vec![AffineExpr::var(0), AffineExpr::constant(1.0), AffineExpr::constant(2.0)]).unwrap();
        let s = ClarabelBackend::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn dual_exp_cone() {
        // min v s.t. (-1, v, 1) ∈ K_exp^*  ->  v = -u log(-u/w) + u = -1
        let mut p = ConicProgram::new();
        p.add_vars("v", 1);
        p.add_objective_term(0, 1.0);
        p.add_block(Cone::DualExponential, vec![AffineExpr::constant(-1.0), AffineExpr::var(0), AffineExpr::constant(1.0)]).unwrap();
        let s = ClarabelBackend::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn second_order_cone() {
        // min t s.t. (t, x - 3, y + 4) ∈ SOC with x = y = 0  ->  t = 5
        let mut p = ConicProgram::new();
        p.add_vars("t", 1);
        p.add_objective_term(0, 1.0);
        p.add_block(Cone::SecondOrder(3), vec![AffineExpr::var(0), AffineExpr::constant(-3.0), AffineExpr::constant(4.0)]).unwrap();
        let s = ClarabelBackend::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.value, 5.0, epsilon = 1e-6);
    }
}
