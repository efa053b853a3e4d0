//! Ground-truth Markov chain: transition kernels, ergodicity and path sampling.
//!
//! Modes are 0-based in this API. Serialized forms (configs, traces) use
//! 1-based modes; see [`ModePath::one_based`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on input row sums before renormalization.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic `d x d` matrix of mode-switching probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionKernel {
    d: usize,
    data: Vec<f64>,
}

impl TransitionKernel {
    /// Validates a square matrix of transition probabilities and renormalizes
    /// each row to unit sum.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d < 2 {
            return Err(Error::BadShape { rows: d, cols: rows.first().map_or(0, Vec::len) });
        }
        let mut data = Vec::with_capacity(d * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::BadShape { rows: d, cols: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0) {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::RowSumNotOne { row: i, sum });
            }
            data.extend(row.iter().map(|v| v / sum));
        }
        Ok(TransitionKernel { d, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.row(i).to_vec()).collect()
    }

    /// Matrix product `self * other`, renormalized rows are not enforced.
    fn matmul(&self, other: &TransitionKernel) -> TransitionKernel {
        let d = self.d;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        TransitionKernel { d, data }
    }

    /// `P^k` for `k >= 1`.
    pub fn power(&self, k: usize) -> TransitionKernel {
        assert!(k >= 1, "power requires k >= 1");
        let mut acc = self.clone();
        for _ in 1..k {
            acc = acc.matmul(self);
        }
        acc
    }

    /// Smallest `k <= k_max` with `P^k > 0` elementwise, if any.
    pub fn is_ergodic(&self, k_max: usize) -> Option<usize> {
        let mut acc = self.clone();
        for k in 1..=k_max {
            if k > 1 {
                acc = acc.matmul(self);
            }
            if acc.data.iter().all(|&v| v > 0.0) {
                return Some(k);
            }
        }
        None
    }

    /// Draws the successor of mode `from` given a uniform variate `u` in [0, 1).
    pub fn successor(&self, from: usize, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, &p) in self.row(from).iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the round-off gap above the cumulative sum
        self.row(from).iter().rposition(|&p| p > 0.0).unwrap_or(self.d - 1)
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionKernel {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionKernel::new(rows)
    }
}

impl From<TransitionKernel> for Vec<Vec<f64>> {
    fn from(k: TransitionKernel) -> Self {
        k.rows()
    }
}

/// Validates `rows` as a transition kernel.
pub fn validate_kernel(rows: Vec<Vec<f64>>) -> Result<TransitionKernel> {
    TransitionKernel::new(rows)
}

/// Kernel of the server-cooling example: `P_ij ∝ exp(-(j - i/2)^2)` over 1-based `i, j`.
pub fn cooling_kernel(d: usize) -> Result<TransitionKernel> {
    if d < 2 {
        return Err(Error::BadShape { rows: d, cols: d });
    }
    let rows = (1..=d)
        .map(|i| {
            let w: Vec<f64> = (1..=d).map(|j| (-(j as f64 - i as f64 / 2.0).powi(2)).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    TransitionKernel::new(rows)
}

/// A sampled mode sequence `w_0, ..., w_length` (0-based modes).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModePath {
    pub modes: Vec<usize>,
    pub seed: u64,
}

impl ModePath {
    pub fn one_based(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m + 1).collect()
    }

    /// Number of observed transitions `i -> j`.
    pub fn transition_counts(&self, d: usize) -> Vec<Vec<u64>> {
        let mut counts = vec![vec![0u64; d]; d];
        for w in self.modes.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        counts
    }
}

/// Samples `length` transitions starting from `w0`.
pub fn sample_path(kernel: &TransitionKernel, w0: usize, length: usize, seed: u64) -> Result<ModePath> {
    if w0 >= kernel.d() {
        return Err(Error::ModeOutOfRange { mode: w0 + 1, d: kernel.d() });
    }
    let mut rng = rng::stream(seed);
    let mut modes = Vec::with_capacity(length + 1);
    modes.push(w0);
    let mut w = w0;
    for _ in 0..length {
        w = kernel.successor(w, rng.gen::<f64>());
        modes.push(w);
    }
    Ok(ModePath { modes, seed })
}

/// Serde adapter storing a 0-based mode as its 1-based label.
pub mod one_based {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &usize, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*w as u64 + 1)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
        let w = u64::deserialize(d)?;
        if w == 0 {
            return Err(D::Error::custom("modes are numbered from 1"));
        }
        Ok(w as usize - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_valid_but_not_ergodic() {
        let k = validate_kernel(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(k.is_ergodic(10), None);
    }

    #[test]
    fn accepts_stochastic_rows() {
        let k = validate_kernel(vec![vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        assert_eq!(k.is_ergodic(10), Some(1));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(validate_kernel(vec![vec![0.5, 0.6], vec![0.3, 0.7]]), Err(Error::RowSumNotOne { row: 0, .. })));
        assert!(matches!(validate_kernel(vec![vec![1.2, -0.2], vec![0.3, 0.7]]), Err(Error::NegativeEntry { row: 0, col: 1, .. })));
        assert!(matches!(validate_kernel(vec![vec![1.0]]), Err(Error::BadShape { .. })));
        assert!(matches!(validate_kernel(vec![vec![1.0, 0.0], vec![1.0]]), Err(Error::BadShape { .. })));
    }

    #[test]
    fn small_round_off_is_renormalized() {
        let k = validate_kernel(vec![vec![0.5, 0.5 + 5e-10], vec![0.3, 0.7]]).unwrap();
        let s: f64 = k.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_chain_needs_k_two() {
        // 0 -> {0,1}, 1 -> 0 : P^2 > 0
        let k = validate_kernel(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert_eq!(k.is_ergodic(1), None);
        assert_eq!(k.is_ergodic(5), Some(2));
    }

    #[test]
    fn cooling_kernel_rows() {
        let k = cooling_kernel(3).unwrap();
        for i in 0..3 {
            let s: f64 = k.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // i = 2 (1-based): weights e^0, e^-1, e^-4
        let w = [1.0, (-1.0f64).exp(), (-4.0f64).exp()];
        let s: f64 = w.iter().sum();
        for j in 0..3 {
            assert!((k.get(1, j) - w[j] / s).abs() < 1e-15);
        }
        assert_eq!(k.is_ergodic(10), Some(1));
        let k5 = cooling_kernel(5).unwrap();
        assert!(k5.rows().iter().flatten().all(|&v| v > 0.0));
    }

    #[test]
    fn deterministic_chain_path() {
        let k = validate_kernel(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = sample_path(&k, 0, 4, 3).unwrap();
        assert_eq!(p.one_based(), vec![1, 2, 1, 2, 1]);
        let p0 = sample_path(&k, 1, 0, 3).unwrap();
        assert_eq!(p0.modes, vec![1]);
        assert!(sample_path(&k, 2, 4, 3).is_err());
    }

    #[test]
    fn powers_stay_stochastic() {
        let k = cooling_kernel(4).unwrap();
        for p in [2, 5, 17] {
            let m = k.power(p);
            for i in 0..4 {
                let s: f64 = m.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let k = cooling_kernel(3).unwrap();
        let a = sample_path(&k, 0, 1000, 42).unwrap();
        let b = sample_path(&k, 0, 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&k, 0, 1000, 43).unwrap();
        assert_ne!(a.modes, c.modes);
    }

    #[test]
    fn empirical_frequencies_match_kernel() {
        let k = cooling_kernel(3).unwrap();
        let path = sample_path(&k, 0, 100_000, 11).unwrap();
        let counts = path.transition_counts(3);
        for i in 0..3 {
            let n: u64 = counts[i].iter().sum();
            assert!(n > 0);
            let tv: f64 = (0..3).map(|j| (counts[i][j] as f64 / n as f64 - k.get(i, j)).abs()).sum();
            assert!(tv < 0.05, "row {i}: TV {tv}");
            for j in 0..3 {
                assert!((counts[i][j] as f64 / n as f64 - k.get(i, j)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let k = cooling_kernel(3).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.starts_with("[["));
        let back: TransitionKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        assert!(serde_json::from_str::<TransitionKernel>("[[0.5,0.6],[0.3,0.7]]").is_err());
    }
}
