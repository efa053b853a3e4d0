//! Verification of the terminal ingredients: robust Lyapunov decrease under
//! `u = Kx` and invariance/admissibility of the level set `{xᵀQf x <= ε}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MjlsModel;

pub const LYAPUNOV_TOL: f64 = 1e-8;

fn gain(model: &MjlsModel) -> Result<&DMatrix<f64>> {
    model.k.as_ref().ok_or_else(|| Error::InvalidModel("terminal gain K missing".into()))
}

fn max_sym_eigen(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().max()
}

/// Checks `(A+BK)ᵀQf(A+BK) - Qf + Q + KᵀRK ⪯ 0` for every mode; returns the
/// verdict and the largest eigenvalue over modes.
pub fn verify_lyapunov(model: &MjlsModel) -> Result<(bool, f64)> {
    let k = gain(model)?;
    let mut margin = f64::NEG_INFINITY;
    for w in 0..model.d {
        let acl = &model.a[w] + &model.b[w] * k;
        let m = acl.transpose() * &model.qf * &acl - &model.qf + &model.q + k.transpose() * &model.r * k;
        margin = margin.max(max_sym_eigen(&m));
    }
    Ok((margin <= LYAPUNOV_TOL, margin))
}

/// Linear rows `cᵀx <= bound` that the terminal set must respect under `u = Kx`.
fn stacked_rows(model: &MjlsModel) -> Result<Vec<(DVector<f64>, f64)>> {
    let k = gain(model)?;
    let mut rows = Vec::new();
    for w in 0..model.d {
        let acl = &model.a[w] + &model.b[w] * k;
        for i in 0..model.n_g() {
            let c = (model.h_mat.row(i) * &acl).transpose();
            rows.push((c, model.h[i]));
        }
    }
    for j in 0..model.nu {
        let kj = k.row(j).transpose();
        if model.u_max[j].is_finite() {
            rows.push((kj.clone(), model.u_max[j]));
        }
        if model.u_min[j].is_finite() {
            rows.push((-kj, -model.u_min[j]));
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalLevel {
    /// Largest `ε` with `{xᵀQf x <= ε}` inside every stacked row:
    /// `min h² / (cᵀQf⁻¹c)`.
    pub exact: f64,
    /// Literal `min h / (cᵀQf⁻¹c)` over the same rows.
    pub literal: f64,
    /// `true` when the two readings differ by more than 1e-9 relative.
    pub discrepancy: bool,
}

pub fn terminal_level(model: &MjlsModel) -> Result<TerminalLevel> {
    let qf_inv = model.qf.clone().try_inverse().ok_or_else(|| Error::InvalidModel("Qf is singular".into()))?;
    let mut exact = f64::INFINITY;
    let mut literal = f64::INFINITY;
    for (c, bound) in stacked_rows(model)? {
        let s = (c.transpose() * &qf_inv * &c)[(0, 0)];
        if s <= 0.0 {
            if bound < 0.0 {
                exact = 0.0;
                literal = 0.0;
            }
            continue;
        }
        if bound <= 0.0 {
            exact = 0.0;
            literal = 0.0;
            continue;
        }
        exact = exact.min(bound * bound / s);
        literal = literal.min(bound / s);
    }
    let discrepancy = (exact - literal).abs() > 1e-9 * exact.abs().max(literal.abs()).max(1e-300);
    Ok(TerminalLevel { exact, literal, discrepancy })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RciReport {
    pub ok: bool,
    /// Boundary point whose successor leaves the set or violates a constraint.
    pub witness: Option<Vec<f64>>,
    /// Largest `λ_max(Qf^{-1/2}(A+BK)ᵀQf(A+BK)Qf^{-1/2})` over modes.
    pub contraction: f64,
}

/// Robust control invariance of `{xᵀQf x <= ε}` under `u = Kx`: an exact
/// eigenvalue/support-function test plus a boundary sweep with `n_grid`
/// angles (two-dimensional states only).
pub fn verify_rci(model: &MjlsModel, eps: f64, n_grid: usize) -> Result<RciReport> {
    let k = gain(model)?;
    let chol = model.qf.clone().cholesky().ok_or_else(|| Error::InvalidModel("Qf is not positive definite".into()))?;
    // Qf = L Lᵀ; boundary points x = √ε L⁻ᵀ v with |v| = 1
    let l_inv_t = chol.l().try_inverse().expect("Cholesky factor is invertible").transpose();
    let mut contraction: f64 = 0.0;
    for w in 0..model.d {
        let acl = &model.a[w] + &model.b[w] * k;
        let m = l_inv_t.transpose() * acl.transpose() * &model.qf * &acl * &l_inv_t;
        contraction = contraction.max(max_sym_eigen(&m));
    }
    let level = terminal_level(model)?;
    let exact_ok = contraction <= 1.0 + 1e-12 && eps <= level.exact * (1.0 + 1e-12);

    let mut witness = None;
    if model.nx == 2 && n_grid > 0 {
        'sweep: for g in 0..n_grid {
            let th = 2.0 * std::f64::consts::PI * g as f64 / n_grid as f64;
            let v = DVector::from_vec(vec![th.cos(), th.sin()]);
            let x = (&l_inv_t * v) * eps.sqrt();
            let u = k * &x;
            let u_ok = (0..model.nu).all(|j| u[j] <= model.u_max[j] + 1e-9 && u[j] >= model.u_min[j] - 1e-9);
            for w in 0..model.d {
                let xn = model.step(&x, &u, w);
                let inside = model.terminal_cost(&xn) <= eps * (1.0 + 1e-9);
                let g_ok = model.constraint_values(&xn).iter().all(|v| *v <= 1e-9);
                if !(u_ok && inside && g_ok) {
                    witness = Some(x.iter().cloned().collect());
                    break 'sweep;
                }
            }
        }
    }
    Ok(RciReport { ok: exact_ok && witness.is_none(), witness, contraction })
}
