//! Online learning system: empirical kernel estimate, confidence schedule and
//! concentration radii.

use serde::{Deserialize, Serialize};

use crate::ambiguity::{Divergence, DivergenceKind};
use crate::error::{Error, Result};

/// Summable confidence sequence `β_t = b (1 + t)^{-q}`, one identical value per
/// component (component 0 for the cost, component 1 for the constraints).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSchedule {
    pub b: f64,
    pub q: f64,
    pub t: u64,
    pub beta: Vec<f64>,
}

impl ConfidenceSchedule {
    pub fn new(b: f64, q: f64, n_beta: usize, t: u64) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidSchedule(format!("scale b = {b} must lie in (0, 1]")));
        }
        if !(q > 1.0) {
            return Err(Error::InvalidSchedule(format!("exponent q = {q} must exceed 1")));
        }
        if n_beta == 0 {
            return Err(Error::InvalidSchedule("need at least one confidence component".into()));
        }
        let v = Self::closed_form(b, q, t);
        Ok(ConfidenceSchedule { b, q, t, beta: vec![v; n_beta] })
    }

    pub fn closed_form(b: f64, q: f64, t: u64) -> f64 {
        b * (1.0 + t as f64).powf(-q)
    }

    /// One step of `β⁺ = b β (b^{1/q} + β^{1/q})^{-q}`.
    pub fn advance(&self) -> Self {
        let (b, q) = (self.b, self.q);
        let beta = self.beta.iter().map(|&x| b * x * (b.powf(1.0 / q) + x.powf(1.0 / q)).powf(-q)).collect();
        ConfidenceSchedule { b, q, t: self.t + 1, beta }
    }

    /// Value of the schedule `k` steps ahead (closed form).
    pub fn ahead(&self, k: u64) -> f64 {
        Self::closed_form(self.b, self.q, self.t + k)
    }

    pub fn cost_beta(&self) -> f64 {
        self.beta[0]
    }

    pub fn constraint_beta(&self) -> f64 {
        *self.beta.last().expect("nonempty confidence vector")
    }

    pub fn norm1(&self) -> f64 {
        self.beta.iter().sum()
    }
}

/// TV concentration bound on `(½‖p̂ − p‖₁)²`.
pub fn r_tv(m: u64, beta: f64, d: usize) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    (d as f64 * std::f64::consts::LN_2 - beta.ln()) / (2.0 * m as f64)
}

/// KL concentration bound; `sharp` replaces `d log m` by `log C(m+d-1, d-1)`.
pub fn r_kl(m: u64, beta: f64, d: usize, sharp: bool) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    let mf = m as f64;
    let lead = if sharp { ln_binomial(m + d as u64 - 1, d as u64 - 1) } else { d as f64 * mf.ln() };
    (lead - beta.ln()) / mf
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// Ball radius for the given divergence, `+∞` when no samples are available.
pub fn radius(div: &Divergence, m: u64, beta: f64, d: usize, sharp_kl: bool) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidInput(format!("confidence {beta} outside (0, 1]")));
    }
    let r = match div.kind {
        DivergenceKind::Tv => 2.0 * r_tv(m, beta, d).sqrt(),
        DivergenceKind::Kl | DivergenceKind::Hellinger => r_kl(m, beta, d, sharp_kl),
        DivergenceKind::Js => 0.5 * r_kl(m, beta, d, sharp_kl),
        DivergenceKind::Wasserstein => {
            let k = div.kernel.as_ref().ok_or(Error::MissingKernel)?;
            k.max_entry() * r_tv(m, beta, d).sqrt()
        }
    };
    Ok(r.max(0.0))
}

/// How the learner turns `(γ, β)` into radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSpec {
    pub divergence: Divergence,
    #[serde(default)]
    pub sharp_kl: bool,
}

impl RadiusSpec {
    pub fn new(divergence: Divergence) -> Self {
        RadiusSpec { divergence, sharp_kl: false }
    }

    pub fn radius(&self, m: u64, beta: f64, d: usize) -> Result<f64> {
        radius(&self.divergence, m, beta, d, self.sharp_kl)
    }
}

/// Empirical learner state: estimate `P̂`, inverse sample sizes `γ_i = 1/(t_i + 1)`
/// and per-mode, per-component radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    d: usize,
    /// Row-major `d x d`.
    p_hat: Vec<f64>,
    gamma: Vec<f64>,
    /// `d x n_beta`, `+∞` for unvisited modes (serialized as null).
    #[serde(with = "inf_as_null")]
    radii: Vec<Vec<f64>>,
    /// Number of observed transitions.
    t: u64,
}

impl LearnerState {
    /// Fresh learner: uniform rows, no samples, infinite radii.
    pub fn init(d: usize, n_beta: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 modes, got {d}")));
        }
        Ok(LearnerState { d, p_hat: vec![1.0 / d as f64; d * d], gamma: vec![1.0; d], radii: vec![vec![f64::INFINITY; n_beta]; d], t: 0 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn p_hat_row(&self, i: usize) -> &[f64] {
        &self.p_hat[i * self.d..(i + 1) * self.d]
    }

    pub fn p_hat(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.p_hat_row(i).to_vec()).collect()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Sample count `γ_i⁻¹ - 1` for mode `i`.
    pub fn samples(&self, i: usize) -> u64 {
        (1.0 / self.gamma[i] - 1.0).round().max(0.0) as u64
    }

    pub fn radii(&self, i: usize) -> &[f64] {
        &self.radii[i]
    }

    pub fn radius(&self, i: usize, component: usize) -> f64 {
        self.radii[i][component]
    }

    /// Recomputes every radius from the current `γ` and the given confidences.
    pub fn refresh_radii(&mut self, beta: &[f64], spec: &RadiusSpec) -> Result<()> {
        for i in 0..self.d {
            let m = self.samples(i);
            self.radii[i] = beta.iter().map(|&b| spec.radius(m, b, self.d)).collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// FNV-1a digest of the full state, for trace bookkeeping.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for v in self.p_hat.iter().chain(&self.gamma) {
            eat(v.to_bits());
        }
        for row in &self.radii {
            for v in row {
                eat(v.to_bits());
            }
        }
        eat(self.t);
        h
    }
}

/// One learner transition after observing `w_t -> w_next` (0-based).
///
/// Row `w_t` moves towards `e_{w_next}` with step `γ_{w_t}`; entry `w_next`
/// of `γ` shrinks as `γ / (1 + γ)`. Radii are recomputed with the confidence
/// of the next time step, `conf.advance()`.
pub fn update_learner(s: &LearnerState, w_t: usize, w_next: usize, conf: &ConfidenceSchedule, spec: &RadiusSpec) -> Result<LearnerState> {
    let d = s.d;
    for w in [w_t, w_next] {
        if w >= d {
            return Err(Error::ModeOutOfRange { mode: w + 1, d });
        }
    }
    let mut next = s.clone();
    let g = s.gamma[w_t];
    let row = &mut next.p_hat[w_t * d..(w_t + 1) * d];
    for (j, v) in row.iter_mut().enumerate() {
        *v = (1.0 - g) * *v + if j == w_next { g } else { 0.0 };
    }
    let gn = s.gamma[w_next];
    next.gamma[w_next] = gn / (1.0 + gn);
    next.t += 1;
    let beta_next = conf.advance().beta;
    next.refresh_radii(&beta_next, spec)?;
    Ok(next)
}

/// Feeds a whole mode path through the learner and the confidence schedule.
pub fn replay(
    s: &LearnerState,
    conf: &ConfidenceSchedule,
    modes: &[usize],
    spec: &RadiusSpec,
) -> Result<(LearnerState, ConfidenceSchedule)> {
    let mut s = s.clone();
    let mut c = conf.clone();
    for pair in modes.windows(2) {
        s = update_learner(&s, pair[0], pair[1], &c, spec)?;
        c = c.advance();
    }
    Ok((s, c))
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mapped: Vec<Vec<Option<f64>>> = v.iter().map(|r| r.iter().map(|x| x.is_finite().then_some(*x)).collect()).collect();
        mapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|r| r.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()).collect())
    }
}
