//! Divergence-based ambiguity sets `{p ∈ Δ_d : D(p̂, p) <= r}` and their conic
//! representations `{p : ∃ν, b - E p - F ν ∈ C}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conic::{solve_standard_form, AffineExpr, Cone, ConicProgram, LpOutcome, SolveStatus, SolverBackend};
use crate::error::{Error, Result};

/// Radii at or below this are treated as the singleton `{p̂}`.
pub const SINGLETON_RADIUS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Tv,
    Kl,
    Js,
    Hellinger,
    Wasserstein,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 5] =
        [DivergenceKind::Tv, DivergenceKind::Kl, DivergenceKind::Js, DivergenceKind::Hellinger, DivergenceKind::Wasserstein];

    pub fn as_str(&self) -> &'static str {
        match self {
            DivergenceKind::Tv => "tv",
            DivergenceKind::Kl => "kl",
            DivergenceKind::Js => "js",
            DivergenceKind::Hellinger => "hellinger",
            DivergenceKind::Wasserstein => "wasserstein",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tv" => Ok(DivergenceKind::Tv),
            "kl" => Ok(DivergenceKind::Kl),
            "js" => Ok(DivergenceKind::Js),
            "hellinger" | "h" => Ok(DivergenceKind::Hellinger),
            "wasserstein" | "w" => Ok(DivergenceKind::Wasserstein),
            other => Err(Error::InvalidInput(format!("unknown divergence '{other}'"))),
        }
    }
}

/// Symmetric transport-cost kernel with zero diagonal, already raised to the
/// Wasserstein exponent (`K̃ = K^q` elementwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DistanceKernel {
    d: usize,
    data: Vec<f64>,
}

impl DistanceKernel {
    pub fn new(rows: Vec<Vec<f64>>, exponent: f64) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidKernel("kernel must be square".into()));
        }
        if !(exponent > 0.0) {
            return Err(Error::InvalidKernel(format!("exponent {exponent} must be positive")));
        }
        for i in 0..d {
            if rows[i][i] != 0.0 {
                return Err(Error::InvalidKernel(format!("nonzero diagonal at {i}")));
            }
            for j in 0..d {
                let v = rows[i][j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidKernel(format!("bad entry {v} at ({i}, {j})")));
                }
                if (v - rows[j][i]).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::InvalidKernel(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let data = rows.iter().flatten().map(|v| v.powf(exponent)).collect();
        Ok(DistanceKernel { d, data })
    }

    /// `K_ij = (i - j)²`.
    pub fn quadratic(d: usize) -> Self {
        Self::from_fn(d, |i, j| (i as f64 - j as f64).powi(2))
    }

    /// `K_ij = |i - j|`.
    pub fn absolute(d: usize) -> Self {
        Self::from_fn(d, |i, j| (i as f64 - j as f64).abs())
    }

    fn from_fn(d: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        DistanceKernel { d, data }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for DistanceKernel {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DistanceKernel::new(rows, 1.0)
    }
}

impl From<DistanceKernel> for Vec<Vec<f64>> {
    fn from(k: DistanceKernel) -> Self {
        k.data.chunks(k.d).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<DistanceKernel>,
}

impl Divergence {
    pub fn new(kind: DivergenceKind, kernel: Option<DistanceKernel>) -> Result<Self> {
        if kind == DivergenceKind::Wasserstein && kernel.is_none() {
            return Err(Error::MissingKernel);
        }
        Ok(Divergence { kind, kernel })
    }

    pub fn tv() -> Self {
        Divergence { kind: DivergenceKind::Tv, kernel: None }
    }

    pub fn kl() -> Self {
        Divergence { kind: DivergenceKind::Kl, kernel: None }
    }

    pub fn js() -> Self {
        Divergence { kind: DivergenceKind::Js, kernel: None }
    }

    pub fn hellinger() -> Self {
        Divergence { kind: DivergenceKind::Hellinger, kernel: None }
    }

    pub fn wasserstein(kernel: DistanceKernel) -> Self {
        Divergence { kind: DivergenceKind::Wasserstein, kernel: Some(kernel) }
    }

    /// Default instance of each kind; Wasserstein gets the quadratic kernel.
    pub fn default_for(kind: DivergenceKind, d: usize) -> Self {
        match kind {
            DivergenceKind::Wasserstein => Self::wasserstein(DistanceKernel::quadratic(d)),
            _ => Divergence { kind, kernel: None },
        }
    }

    fn kernel_for(&self, d: usize) -> Result<&DistanceKernel> {
        let k = self.kernel.as_ref().ok_or(Error::MissingKernel)?;
        if k.d() != d {
            return Err(Error::InvalidKernel(format!("kernel is {}x{0}, expected {d}", k.d())));
        }
        Ok(k)
    }
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    // x log(x / y) with 0 log 0 = 0 and x log(x / 0) = ∞
    if x <= 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// `D(p̂, p)`. TV is the plain L1 distance; Hellinger is the squared distance
/// without the ½ factor; Wasserstein is the optimal transport cost under `K̃`.
pub fn divergence_eval(div: &Divergence, p_hat: &[f64], p: &[f64]) -> Result<f64> {
    if p_hat.len() != p.len() {
        return Err(Error::InvalidInput("distributions differ in length".into()));
    }
    let pairs = p_hat.iter().zip(p);
    Ok(match div.kind {
        DivergenceKind::Tv => pairs.map(|(a, b)| (a - b).abs()).sum(),
        DivergenceKind::Kl => pairs.map(|(&a, &b)| xlogy_ratio(a, b)).sum(),
        DivergenceKind::Js => {
            0.5 * pairs
                .map(|(&a, &b)| {
                    let m = 0.5 * (a + b);
                    xlogy_ratio(b, m) + xlogy_ratio(a, m)
                })
                .sum::<f64>()
        }
        DivergenceKind::Hellinger => pairs.map(|(a, b)| (b.sqrt() - a.sqrt()).powi(2)).sum(),
        DivergenceKind::Wasserstein => transport_cost(div.kernel_for(p.len())?, p, p_hat)?,
    })
}

/// `min Σ Π_ij K_ij  s.t.  Π 1 = p, Πᵀ 1 = p̂, Π >= 0`.
pub fn transport_cost(k: &DistanceKernel, p: &[f64], p_hat: &[f64]) -> Result<f64> {
    let d = p.len();
    let mut a = vec![vec![0.0; d * d]; 2 * d];
    for i in 0..d {
        for j in 0..d {
            a[i][i * d + j] = 1.0;
            a[d + j][i * d + j] = 1.0;
        }
    }
    let b: Vec<f64> = p.iter().chain(p_hat).cloned().collect();
    let c: Vec<f64> = (0..d * d).map(|ij| k.get(ij / d, ij % d)).collect();
    match solve_standard_form(&a, &b, &c) {
        LpOutcome::Optimal { value, .. } => Ok(value.max(0.0)),
        other => Err(Error::SolverFailure(format!("transport LP: {other:?}"))),
    }
}

/// Conic representation `b - E p - F ν ∈ C` of a subset of the simplex.
///
/// The first `d + 1` rows always encode `p ∈ Δ_d` (one zero row, `d`
/// nonnegative rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicRep {
    pub d: usize,
    pub aux_dim: usize,
    /// `rows x d`.
    pub e: Vec<Vec<f64>>,
    /// `rows x aux_dim`.
    pub f: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicRep {
    /// Just the simplex.
    pub fn simplex(d: usize) -> Self {
        let mut rep = ConicRep { d, aux_dim: 0, e: vec![], f: vec![], b: vec![], cones: vec![] };
        rep.push_simplex_rows();
        rep
    }

    fn empty(d: usize, aux_dim: usize) -> Self {
        ConicRep { d, aux_dim, e: vec![], f: vec![], b: vec![], cones: vec![] }
    }

    fn push_simplex_rows(&mut self) {
        let d = self.d;
        self.push_row(vec![1.0; d], vec![], 1.0);
        for i in 0..d {
            self.push_row(unit(d, i, -1.0), vec![], 0.0);
        }
        self.cones.push(Cone::Zero(1));
        self.cones.push(Cone::Nonneg(d));
    }

    /// Appends a row with sparse `E` and `F` entries given densely or empty.
    fn push_row(&mut self, mut e: Vec<f64>, mut f: Vec<f64>, b: f64) {
        e.resize(self.d, 0.0);
        f.resize(self.aux_dim, 0.0);
        self.e.push(e);
        self.f.push(f);
        self.b.push(b);
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_rows();
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        if self.e.len() != m || self.f.len() != m || cone_rows != m {
            return Err(Error::InvalidInput(format!("conic rep has {m} rows but cones cover {cone_rows}")));
        }
        if self.e.iter().any(|r| r.len() != self.d) || self.f.iter().any(|r| r.len() != self.aux_dim) {
            return Err(Error::InvalidInput("conic rep row widths inconsistent".into()));
        }
        Ok(())
    }

    /// Affine rows `b - E p - F ν` over program variables.
    pub fn affine_rows(&self, p: &[AffineExpr], nu: &[usize]) -> Vec<AffineExpr> {
        (0..self.n_rows())
            .map(|r| {
                let mut row = AffineExpr::constant(self.b[r]);
                for (j, &c) in self.e[r].iter().enumerate() {
                    if c != 0.0 {
                        row = row.plus(&p[j].clone().scaled(-c));
                    }
                }
                for (k, &c) in self.f[r].iter().enumerate() {
                    row.add_term(nu[k], -c);
                }
                row
            })
            .collect()
    }

    /// Adds the representation's rows (and fresh auxiliary variables) to `prog`.
    pub fn embed(&self, prog: &mut ConicProgram, p: &[AffineExpr], tag: &str) -> Result<Vec<usize>> {
        let nu: Vec<usize> = prog.add_vars(format!("{tag}nu"), self.aux_dim).collect();
        let rows = self.affine_rows(p, &nu);
        add_rows_by_cone(prog, &self.cones, rows)?;
        Ok(nu)
    }
}

pub(crate) fn add_rows_by_cone(prog: &mut ConicProgram, cones: &[Cone], rows: Vec<AffineExpr>) -> Result<()> {
    let mut it = rows.into_iter();
    for &cone in cones {
        let block: Vec<AffineExpr> = it.by_ref().take(cone.dim()).collect();
        prog.add_block(cone, block)?;
    }
    Ok(())
}

fn unit(d: usize, i: usize, v: f64) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = v;
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    pub center: Vec<f64>,
    /// Nonnegative, possibly `+∞` (full simplex).
    pub radius: f64,
    pub divergence: Divergence,
}

impl AmbiguitySet {
    pub fn new(center: Vec<f64>, radius: f64, divergence: Divergence) -> Result<Self> {
        let sum: f64 = center.iter().sum();
        if center.len() < 2 || center.iter().any(|v| !(*v >= -1e-12)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("center {center:?} is not in the simplex")));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput(format!("radius {radius} must be nonnegative")));
        }
        if divergence.kind == DivergenceKind::Wasserstein {
            divergence.kernel_for(center.len())?;
        }
        let center = center.iter().map(|v| v.max(0.0) / sum).collect();
        Ok(AmbiguitySet { center, radius, divergence })
    }

    pub fn d(&self) -> usize {
        self.center.len()
    }

    pub fn is_full_simplex(&self) -> bool {
        self.radius.is_infinite()
    }

    pub fn is_singleton(&self) -> bool {
        self.radius <= SINGLETON_RADIUS
    }

    pub fn contains(&self, p: &[f64]) -> Result<bool> {
        if self.is_full_simplex() {
            return Ok(true);
        }
        Ok(divergence_eval(&self.divergence, &self.center, p)? <= self.radius)
    }
}

/// Conic representation of an ambiguity set; infinite radius yields the
/// bare simplex.
pub fn conic_rep(set: &AmbiguitySet) -> Result<ConicRep> {
    let d = set.d();
    if set.is_full_simplex() {
        return Ok(ConicRep::simplex(d));
    }
    let (c, r) = (&set.center, set.radius);
    let rep = match set.divergence.kind {
        DivergenceKind::Tv => {
            let mut rep = ConicRep::empty(d, d);
            rep.push_simplex_rows();
            for i in 0..d {
                // ν_i - (p_i - p̂_i) >= 0 and ν_i + (p_i - p̂_i) >= 0
                rep.push_row(unit(d, i, 1.0), unit(d, i, -1.0), c[i]);
                rep.push_row(unit(d, i, -1.0), unit(d, i, -1.0), -c[i]);
            }
            rep.push_row(vec![], vec![1.0; d], r);
            rep.cones.push(Cone::Nonneg(2 * d + 1));
            rep
        }
        DivergenceKind::Kl => {
            let mut rep = ConicRep::empty(d, d);
            rep.push_simplex_rows();
            for i in (0..d).filter(|&i| c[i] > 0.0) {
                // (-ν_i, p̂_i, p_i) ∈ K_exp  <=>  ν_i >= p̂_i log(p̂_i / p_i)
                rep.push_row(vec![], unit(d, i, 1.0), 0.0);
                rep.push_row(vec![], vec![], c[i]);
                rep.push_row(unit(d, i, -1.0), vec![], 0.0);
                rep.cones.push(Cone::Exponential);
            }
            rep.push_row(vec![], vec![1.0; d], r);
            rep.cones.push(Cone::Nonneg(1));
            rep
        }
        DivergenceKind::Js => {
            let support: Vec<usize> = (0..d).filter(|&i| c[i] > 0.0).collect();
            let aux = d + support.len();
            let mut rep = ConicRep::empty(d, aux);
            rep.push_simplex_rows();
            for i in 0..d {
                // (-x_i, p_i, (p_i + p̂_i)/2) ∈ K_exp
                rep.push_row(vec![], unit(aux, i, 1.0), 0.0);
                rep.push_row(unit(d, i, -1.0), vec![], 0.0);
                rep.push_row(unit(d, i, -0.5), vec![], 0.5 * c[i]);
                rep.cones.push(Cone::Exponential);
            }
            for (k, &i) in support.iter().enumerate() {
                // (-y_i, p̂_i, (p_i + p̂_i)/2) ∈ K_exp
                rep.push_row(vec![], unit(aux, d + k, 1.0), 0.0);
                rep.push_row(vec![], vec![], c[i]);
                rep.push_row(unit(d, i, -0.5), vec![], 0.5 * c[i]);
                rep.cones.push(Cone::Exponential);
            }
            rep.push_row(vec![], vec![1.0; aux], 2.0 * r);
            rep.cones.push(Cone::Nonneg(1));
            rep
        }
        DivergenceKind::Hellinger => {
            let mut rep = ConicRep::empty(d, d);
            rep.push_simplex_rows();
            for i in 0..d {
                // (p_i + 1, 2ν_i, p_i - 1) ∈ SOC  <=>  ν_i² <= p_i
                rep.push_row(unit(d, i, -1.0), vec![], 1.0);
                rep.push_row(vec![], unit(d, i, -2.0), 0.0);
                rep.push_row(unit(d, i, -1.0), vec![], -1.0);
                rep.cones.push(Cone::SecondOrder(3));
            }
            // Σ √p̂_i ν_i >= 1 - r/2
            let f: Vec<f64> = c.iter().map(|v| -v.sqrt()).collect();
            rep.push_row(vec![], f, -(1.0 - 0.5 * r));
            rep.cones.push(Cone::Nonneg(1));
            rep
        }
        DivergenceKind::Wasserstein => {
            let k = set.divergence.kernel_for(d)?;
            let mut rep = ConicRep::empty(d, d * d);
            rep.push_simplex_rows();
            // Π 1 = p, Πᵀ 1 = p̂
            for i in 0..d {
                let f: Vec<f64> = (0..d * d).map(|ij| if ij / d == i { -1.0 } else { 0.0 }).collect();
                rep.push_row(unit(d, i, 1.0), f, 0.0);
            }
            for j in 0..d {
                let f: Vec<f64> = (0..d * d).map(|ij| if ij % d == j { -1.0 } else { 0.0 }).collect();
                rep.push_row(vec![], f, -c[j]);
            }
            rep.cones.push(Cone::Zero(2 * d));
            for ij in 0..d * d {
                rep.push_row(vec![], unit(d * d, ij, -1.0), 0.0);
            }
            let f: Vec<f64> = (0..d * d).map(|ij| k.get(ij / d, ij % d)).collect();
            rep.push_row(vec![], f, r);
            rep.cones.push(Cone::Nonneg(d * d + 1));
            rep
        }
    };
    rep.validate()?;
    Ok(rep)
}

/// `max_{p ∈ rep} ξᵀp` by solving the primal conic program.
pub fn worst_case_over_rep(rep: &ConicRep, xi: &[f64], backend: &mut dyn SolverBackend) -> Result<(f64, Vec<f64>)> {
    let d = rep.d;
    if xi.len() != d {
        return Err(Error::InvalidInput(format!("cost vector has {} entries, expected {d}", xi.len())));
    }
    let mut prog = ConicProgram::new();
    let p = prog.add_vars("p", d);
    for (j, &x) in xi.iter().enumerate() {
        prog.add_objective_term(p.start + j, -x);
    }
    let p_expr: Vec<AffineExpr> = p.clone().map(AffineExpr::var).collect();
    rep.embed(&mut prog, &p_expr, "")?;
    let sol = backend.solve(&prog)?;
    match sol.status {
        SolveStatus::Optimal => Ok((-sol.value, sol.x[p].to_vec())),
        SolveStatus::Infeasible => Err(Error::SolverFailure("ambiguity set is empty".into())),
        SolveStatus::SolverError => Err(Error::SolverFailure(sol.backend_status)),
    }
}

/// Ambiguous expectation `max_{p ∈ A} Σ p_w ξ_w` and a maximizer.
pub fn worst_case_expectation(set: &AmbiguitySet, xi: &[f64], backend: &mut dyn SolverBackend) -> Result<(f64, Vec<f64>)> {
    let d = set.d();
    if xi.len() != d {
        return Err(Error::InvalidInput(format!("cost vector has {} entries, expected {d}", xi.len())));
    }
    if set.is_singleton() {
        let v = set.center.iter().zip(xi).map(|(p, x)| p * x).sum();
        return Ok((v, set.center.clone()));
    }
    if set.is_full_simplex() {
        let (arg, &v) = xi.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty cost vector");
        return Ok((v, unit(d, arg, 1.0)));
    }
    worst_case_over_rep(&conic_rep(set)?, xi, backend)
}

/// Membership margin of a fixed `p`: minimal `t` such that the representation
/// holds after relaxing every non-simplex nonnegative row by `t`. `p` belongs
/// to the set iff the margin is `<= 0`; `None` when no relaxation helps
/// (e.g. a KL ball with `p_i = 0 < p̂_i`).
pub fn membership_margin(rep: &ConicRep, p: &[f64], backend: &mut dyn SolverBackend) -> Result<Option<f64>> {
    let mut prog = ConicProgram::new();
    let t = prog.add_vars("t", 1).start;
    prog.add_objective_term(t, 1.0);
    let p_expr: Vec<AffineExpr> = p.iter().map(|&v| AffineExpr::constant(v)).collect();
    let nu: Vec<usize> = prog.add_vars("nu", rep.aux_dim).collect();
    let mut rows = rep.affine_rows(&p_expr, &nu);
    let mut start = 0;
    for (bi, cone) in rep.cones.iter().enumerate() {
        // blocks 0 and 1 are the simplex rows
        if bi >= 2 {
            if let Cone::Nonneg(n) = cone {
                for row in &mut rows[start..start + n] {
                    row.add_term(t, 1.0);
                }
            }
        }
        start += cone.dim();
    }
    // simplex rows are constants here; check them directly
    let simplex_ok = p.iter().all(|&v| v >= -1e-12) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if !simplex_ok {
        return Ok(None);
    }
    let mut it = rows.into_iter();
    for (bi, &cone) in rep.cones.iter().enumerate() {
        let block: Vec<AffineExpr> = it.by_ref().take(cone.dim()).collect();
        if bi >= 2 {
            prog.add_block(cone, block)?;
        }
    }
    // keep the program bounded when nothing depends on t
    prog.add_block(Cone::Nonneg(1), vec![AffineExpr::var(t).plus_const(1e3)])?;
    let sol = backend.solve(&prog)?;
    Ok(match sol.status {
        SolveStatus::Optimal => Some(sol.value),
        _ => None,
    })
}
