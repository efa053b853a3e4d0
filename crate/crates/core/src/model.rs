//! Markov jump linear system `x⁺ = A(w⁺) x + B(w⁺) u` with quadratic costs,
//! per-step linear chance constraints and an ellipsoidal terminal set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable model description; matrices are row-major nested arrays and
/// modes follow array order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub a: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<Vec<f64>>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Constraint rows `H`, possibly empty.
    #[serde(default)]
    pub h_mat: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default)]
    pub u_min: Option<Vec<f64>>,
    #[serde(default)]
    pub u_max: Option<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    /// Terminal level; `None` disables the terminal constraint.
    #[serde(default)]
    pub eps_f: Option<f64>,
    pub alpha: f64,
}

/// Offline terminal ingredients for the cooling example: robust Lyapunov
/// matrix and gain from a Kothare-type LMI (see `scripts/terminal_lmi.py`).
pub const COOLING_QF: [[f64; 2]; 2] = [[43799.21870443735, 49076.2038284205], [49076.2038284205, 145178.80676055676]];
pub const COOLING_K: [[f64; 2]; 2] = [[-1.0657990683855707, 0.1358660895877363], [-0.21603762318949501, -2.0020877472740146]];
/// Largest level set of `COOLING_QF` inside the stacked state and input
/// constraints under `u = Kx` (exact support-function value).
pub const COOLING_EPS_F: f64 = 49396.11632627073;

impl ModelConfig {
    /// Data-center cooling example: `d` servers' loads switch the heat gain
    /// of two coupled rooms.
    pub fn cooling(d: usize) -> Self {
        let a = (1..=d)
            .map(|w| {
                let s = (w as f64 - 1.0) / d as f64;
                vec![vec![1.0 + s, 0.01], vec![0.01, 1.0 + 2.5 * s]]
            })
            .collect();
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        ModelConfig {
            a,
            b: vec![eye.clone(); d],
            q: eye.clone(),
            r: vec![vec![1000.0, 0.0], vec![0.0, 1000.0]],
            h_mat: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            h: vec![1.0, 1.0, 0.5],
            u_min: Some(vec![-1.5, -1.5]),
            u_max: Some(vec![1.5, 1.5]),
            qf: COOLING_QF.iter().map(|r| r.to_vec()).collect(),
            k: Some(COOLING_K.iter().map(|r| r.to_vec()).collect()),
            eps_f: Some(COOLING_EPS_F),
            alpha: 0.19,
        }
    }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidModel(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-9 * (1.0 + m.amax()) && m.clone().cholesky().is_some()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MjlsModel {
    pub d: usize,
    pub nx: usize,
    pub nu: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub h_mat: DMatrix<f64>,
    pub h: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub qf: DMatrix<f64>,
    pub k: Option<DMatrix<f64>>,
    pub eps_f: Option<f64>,
    pub alpha: f64,
}

impl MjlsModel {
    pub fn from_config(c: &ModelConfig) -> Result<Self> {
        let d = c.a.len();
        if d < 2 || c.b.len() != d {
            return Err(Error::InvalidModel(format!("need matching A and B lists for at least 2 modes (got {} and {})", d, c.b.len())));
        }
        let a = c.a.iter().map(|m| to_matrix(m, "A")).collect::<Result<Vec<_>>>()?;
        let b = c.b.iter().map(|m| to_matrix(m, "B")).collect::<Result<Vec<_>>>()?;
        let nx = a[0].nrows();
        let nu = b[0].ncols();
        if a.iter().any(|m| m.shape() != (nx, nx)) || b.iter().any(|m| m.shape() != (nx, nu)) {
            return Err(Error::InvalidModel("inconsistent A/B dimensions".into()));
        }
        let q = to_matrix(&c.q, "Q")?;
        let r = to_matrix(&c.r, "R")?;
        let qf = to_matrix(&c.qf, "Qf")?;
        for (m, name, n) in [(&q, "Q", nx), (&r, "R", nu), (&qf, "Qf", nx)] {
            if m.shape() != (n, n) || !is_spd(m) {
                return Err(Error::InvalidModel(format!("{name} must be a symmetric positive definite {n}x{n} matrix")));
            }
        }
        let h_mat = if c.h_mat.is_empty() { DMatrix::zeros(0, nx) } else { to_matrix(&c.h_mat, "H")? };
        if h_mat.ncols() != nx || c.h.len() != h_mat.nrows() {
            return Err(Error::InvalidModel("H must be n_g x nx with matching h".into()));
        }
        let bound = |v: &Option<Vec<f64>>, fill: f64, name: &str| -> Result<DVector<f64>> {
            match v {
                None => Ok(DVector::from_element(nu, fill)),
                Some(v) if v.len() == nu => Ok(DVector::from_vec(v.clone())),
                Some(v) => Err(Error::InvalidModel(format!("{name} has {} entries, expected {nu}", v.len()))),
            }
        };
        let u_min = bound(&c.u_min, f64::NEG_INFINITY, "u_min")?;
        let u_max = bound(&c.u_max, f64::INFINITY, "u_max")?;
        if u_min.iter().zip(u_max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidModel("u_min exceeds u_max".into()));
        }
        let k = c.k.as_ref().map(|k| to_matrix(k, "K")).transpose()?;
        if let Some(k) = &k {
            if k.shape() != (nu, nx) {
                return Err(Error::InvalidModel(format!("K must be {nu}x{nx}")));
            }
        }
        if let Some(e) = c.eps_f {
            if !(e > 0.0) {
                return Err(Error::InvalidModel(format!("terminal level {e} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&c.alpha) {
            return Err(Error::InvalidModel(format!("violation rate {} outside [0, 1]", c.alpha)));
        }
        Ok(MjlsModel {
            d,
            nx,
            nu,
            a,
            b,
            q,
            r,
            h_mat,
            h: DVector::from_vec(c.h.clone()),
            u_min,
            u_max,
            qf,
            k,
            eps_f: c.eps_f,
            alpha: c.alpha,
        })
    }

    pub fn cooling(d: usize) -> Self {
        Self::from_config(&ModelConfig::cooling(d)).expect("built-in cooling model is valid")
    }

    pub fn n_g(&self) -> usize {
        self.h.len()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w_next: usize) -> DVector<f64> {
        &self.a[w_next] * x + &self.b[w_next] * u
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.qf * x)[(0, 0)]
    }

    /// `H x - h`.
    pub fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h_mat * x - &self.h
    }
}
