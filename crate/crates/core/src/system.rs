//! Weighted particle systems, weight normalization and inverse-CDF selection.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Normalizes nonnegative raw weights so that they sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidConfig("empty weight vector".into()));
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidWeight { index, value });
        }
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    if !total.is_finite() {
        // rescale before summing to avoid overflow
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = raw.iter().map(|w| w / max).collect();
        return normalize_weights(&scaled);
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Cumulative weights `c_i = w_1 + ... + w_i`, summed left to right.
///
/// The entries from the last positive-weight particle onward are pinned to
/// exactly `1.0`, so every `u` in `(0, 1]` selects a particle and trailing
/// zero-weight particles are never selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    cumulative: Vec<f64>,
}

impl Cdf {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = weights.iter().rposition(|&w| w > 0.0) {
            for c in &mut cumulative[last..] {
                *c = 1.0;
            }
        }
        Self { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Left end of particle `i`'s interval `(c_{i-1}, c_i]`.
    #[inline]
    pub fn lower(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.cumulative[i - 1]
        }
    }

    /// The unique `i` (0-based) with `u` in `(c_{i-1}, c_i]`. `u` must lie in `(0, 1]`.
    #[inline]
    pub fn select(&self, u: f64) -> usize {
        debug_assert!(u > 0.0 && u <= 1.0);
        self.cumulative.partition_point(|&c| c < u)
    }

    /// Index selected just above `u`, i.e. the first `i` with `c_i > u`.
    #[inline]
    pub fn select_above(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u)
    }

    /// Lebesgue measure of `(a, b] ∩ (c_{i-1}, c_i]` for every particle hit,
    /// in index order. Zero-length pieces are skipped.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut i = self.select_above(a);
        while i < self.cumulative.len() {
            let lo = self.lower(i).max(a);
            if lo >= b {
                break;
            }
            let len = self.cumulative[i].min(b) - lo;
            if len > 0.0 {
                out.push((i, len));
            }
            i += 1;
        }
        out
    }
}

/// Inverse of the weight CDF: returns the 0-based index `i` with
/// `u` in `(w_1 + ... + w_{i-1}, w_1 + ... + w_i]`.
pub fn inverse_cdf(weights: &[f64], u: f64) -> Result<usize> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::OutOfRange(u));
    }
    if weights.is_empty() {
        return Err(Error::InvalidConfig("empty weight vector".into()));
    }
    Ok(Cdf::new(weights).select(u))
}

/// Particle positions (fixed-dimension real vectors) with normalized weights.
///
/// Particle order matters: stratified and systematic resampling depend on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleSystem {
    /// `positions` is row-major, `len * dim` entries. Weights are normalized here.
    pub fn new(dim: usize, positions: Vec<f64>, raw_weights: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("state dimension must be at least 1".into()));
        }
        if positions.len() != raw_weights.len() * dim {
            return Err(Error::InvalidConfig(format!(
                "{} position entries for {} particles of dimension {dim}",
                positions.len(),
                raw_weights.len()
            )));
        }
        let weights = normalize_weights(raw_weights)?;
        Ok(Self { dim, positions, weights })
    }

    pub fn scalar(positions: Vec<f64>, raw_weights: &[f64]) -> Result<Self> {
        Self::new(1, positions, raw_weights)
    }

    /// Equally weighted system.
    pub fn uniform(dim: usize, positions: Vec<f64>) -> Result<Self> {
        let m = positions.len() / dim.max(1);
        Self::new(dim, positions, &vec![1.0; m])
    }

    pub(crate) fn from_parts_unchecked(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(positions.len(), weights.len() * dim);
        Self { dim, positions, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_positions(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn cdf(&self) -> Cdf {
        Cdf::new(&self.weights)
    }

    /// Self-normalized estimate `sum_i w_i f(x_i)`.
    pub fn estimate(&self, f: &TestFunction) -> f64 {
        self.iter_positions().zip(&self.weights).map(|(x, w)| w * f.eval(x)).sum()
    }

    /// Effective sample size `1 / sum w_i^2`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// `true` when every weight is bitwise equal.
    pub fn is_equally_weighted(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    /// New system whose particle `j` is particle `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::InvalidConfig("permutation length mismatch".into()));
        }
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut weights = Vec::with_capacity(self.len());
        for &p in perm {
            if p >= self.len() {
                return Err(Error::IndexOutOfBounds { index: p, len: self.len() });
            }
            positions.extend_from_slice(self.position(p));
            weights.push(self.weights[p]);
        }
        Ok(Self { dim: self.dim, positions, weights })
    }
}

type Eval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A bounded real function of the state.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    bound: f64,
    eval: Eval,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), bound, eval: Arc::new(eval) }
    }

    /// First coordinate of the state. The bound is only meaningful on a
    /// bounded support, so the caller supplies it.
    pub fn coordinate(bound: f64) -> Self {
        Self::new("x", bound, |x| x[0])
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const_{c}"), c.abs(), move |_| c)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = (self.eval)(x);
        debug_assert!(v.is_finite(), "test function `{}` returned {v}", self.name);
        v
    }

    pub fn values(&self, system: &ParticleSystem) -> Vec<f64> {
        system.iter_positions().map(|x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[2.0, 2.0, 4.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(normalize_weights(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(normalize_weights(&[0.0, 0.0, 0.0]), Err(Error::DegenerateWeights));
    }

    #[test]
    fn normalize_rejects_bad_entries() {
        assert!(matches!(
            normalize_weights(&[1.0, -0.5]),
            Err(Error::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            normalize_weights(&[f64::NAN, 1.0]),
            Err(Error::InvalidWeight { index: 0, .. })
        ));
        assert!(normalize_weights(&[]).is_err());
    }

    #[test]
    fn normalize_survives_overflowing_sum() {
        let w = normalize_weights(&[f64::MAX, f64::MAX]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn inverse_cdf_examples() {
        // right-closed intervals: u on a boundary belongs to the left particle
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.5).unwrap(), 0);
        assert_eq!(inverse_cdf(&[1.0], 1e-300).unwrap(), 0);
        assert_eq!(inverse_cdf(&[1.0], 1.0).unwrap(), 0);
        assert_eq!(inverse_cdf(&[0.25, 0.25, 0.5], 0.7).unwrap(), 2);
        assert_eq!(inverse_cdf(&[0.25, 0.25, 0.5], 0.25).unwrap(), 0);
        assert_eq!(inverse_cdf(&[0.25, 0.25, 0.5], 0.2500001).unwrap(), 1);
    }

    #[test]
    fn inverse_cdf_rejects_out_of_range() {
        assert_eq!(inverse_cdf(&[1.0], 0.0), Err(Error::OutOfRange(0.0)));
        assert!(inverse_cdf(&[1.0], 1.0 + 1e-12).is_err());
        assert!(inverse_cdf(&[1.0], -0.3).is_err());
        assert!(inverse_cdf(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn zero_weight_particles_are_skipped() {
        let w = [0.0, 0.5, 0.0, 0.5, 0.0];
        assert_eq!(inverse_cdf(&w, 1e-12).unwrap(), 1);
        assert_eq!(inverse_cdf(&w, 0.5).unwrap(), 1);
        assert_eq!(inverse_cdf(&w, 0.5 + 1e-12).unwrap(), 3);
        assert_eq!(inverse_cdf(&w, 1.0).unwrap(), 3);
    }

    #[test]
    fn cdf_pins_last_positive_entry() {
        // 0.1 * 10 summed left to right is 0.9999999999999999
        let w = vec![0.1; 10];
        let cdf = Cdf::new(&w);
        assert_eq!(*cdf.cumulative().last().unwrap(), 1.0);
        assert_eq!(cdf.select(1.0), 9);
    }

    #[test]
    fn pieces_cover_interval() {
        let cdf = Cdf::new(&[0.25, 0.25, 0.5]);
        let p = cdf.pieces(0.2, 0.6);
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].0, 0);
        assert!((p[0].1 - 0.05).abs() < 1e-15);
        assert!((p[1].1 - 0.25).abs() < 1e-15);
        assert!((p[2].1 - 0.1).abs() < 1e-15);
        assert_eq!(cdf.pieces(0.0, 0.25), vec![(0, 0.25)]);
    }

    #[test]
    fn system_validation() {
        assert!(ParticleSystem::new(2, vec![0.0; 3], &[1.0, 1.0]).is_err());
        assert!(ParticleSystem::new(0, vec![], &[1.0]).is_err());
        let s = ParticleSystem::new(2, vec![0.0, 1.0, 2.0, 3.0], &[1.0, 3.0]).unwrap();
        assert_eq!(s.position(1), &[2.0, 3.0]);
        assert_eq!(s.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn ess_extremes() {
        let u = ParticleSystem::uniform(1, vec![0.0; 10]).unwrap();
        assert!((u.ess() - 10.0).abs() < 1e-12);
        let d = ParticleSystem::scalar(vec![0.0; 4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.ess(), 1.0);
    }

    fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..12)
            .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn normalized_sums_to_one(raw in weights_strategy()) {
            let w = normalize_weights(&raw).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn inverse_cdf_is_monotone(raw in weights_strategy(), a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
            let w = normalize_weights(&raw).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(inverse_cdf(&w, lo).unwrap() <= inverse_cdf(&w, hi).unwrap());
            prop_assert!(w[inverse_cdf(&w, hi).unwrap()] > 0.0);
        }

        // P(inverse_cdf(U) = i) = w_i, by integrating the piecewise-constant map.
        #[test]
        fn selection_probabilities_are_exact(raw in weights_strategy()) {
            let w = normalize_weights(&raw).unwrap();
            let cdf = Cdf::new(&w);
            let mut mass = vec![0.0; w.len()];
            for (i, len) in cdf.pieces(0.0, 1.0) {
                mass[i] += len;
            }
            for (m, wi) in mass.iter().zip(&w) {
                prop_assert!((m - wi).abs() < 1e-12);
            }
        }

        #[test]
        fn boundaries_select_left_particle(raw in weights_strategy()) {
            let w = normalize_weights(&raw).unwrap();
            let cdf = Cdf::new(&w);
            for (i, &c) in cdf.cumulative().iter().enumerate() {
                if w[i] > 1e-9 {
                    prop_assert_eq!(cdf.select(c), i);
                }
            }
        }
    }
}
