//! Unbiased resampling schemes.
//!
//! Every scheme maps a weighted [`ParticleSystem`] to `n` equally weighted
//! offspring whose duplication counts satisfy `E[N_i | system] = n w_i`.
//!
//! Each scheme is split into a deterministic map from uniforms to ancestor
//! indices (`*_from_uniforms`) and a thin wrapper that draws those uniforms
//! from a [`RandomStream`]. Uniform consumption per call:
//!
//! | scheme              | uniforms |
//! |---------------------|----------|
//! | multinomial         | `n`      |
//! | residual            | `n - R`  |
//! | stratified          | `n`      |
//! | systematic          | `1`      |
//! | residual-stratified | `n - R`  |
//!
//! where `R = sum_i floor(n w_i)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{uniform_draws, RandomStream};
use crate::system::{Cdf, ParticleSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    Multinomial,
    Residual,
    Stratified,
    Systematic,
    ResidualStratified,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Multinomial,
        SchemeId::Residual,
        SchemeId::Stratified,
        SchemeId::Systematic,
        SchemeId::ResidualStratified,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::Multinomial => "multinomial",
            SchemeId::Residual => "residual",
            SchemeId::Stratified => "stratified",
            SchemeId::Systematic => "systematic",
            SchemeId::ResidualStratified => "residual-stratified",
        }
    }

    /// Whether the offspring indices are conditionally independent given the system.
    pub fn conditionally_independent(&self) -> bool {
        !matches!(self, SchemeId::Systematic)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == key)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// Ancestor indices (0-based) and duplication counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleOutput {
    pub indices: Vec<usize>,
    pub counts: Vec<usize>,
}

impl ResampleOutput {
    pub fn from_indices(indices: Vec<usize>, m: usize) -> Self {
        let mut counts = vec![0; m];
        for &i in &indices {
            counts[i] += 1;
        }
        Self { indices, counts }
    }

    pub fn n(&self) -> usize {
        self.indices.len()
    }

    /// Mean of `values[ancestor]` over offspring, i.e. `n^-1 sum_j f(x~_j)`.
    pub fn offspring_mean(&self, values: &[f64]) -> f64 {
        let total: f64 = self.counts.iter().zip(values).map(|(&c, v)| c as f64 * v).sum();
        total / self.n() as f64
    }
}

/// `floor(n w_i)` copies plus the residual weights driving the random part.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDecomposition {
    pub deterministic: Vec<usize>,
    /// `R = sum_i floor(n w_i)`.
    pub r: usize,
    /// `(n w_i - floor(n w_i)) / (n - R)`; all zero when `R = n`.
    pub residual_weights: Vec<f64>,
}

impl ResidualDecomposition {
    pub fn new(weights: &[f64], n: usize) -> Self {
        let nf = n as f64;
        let mut deterministic: Vec<usize> = weights.iter().map(|w| (nf * w).floor() as usize).collect();
        let mut r: usize = deterministic.iter().sum();
        // Rounding in `n * w_i` can push R past n when the weights sum to 1 + eps;
        // drop copies from the particles closest to their floor.
        while r > n {
            let j = (0..weights.len())
                .filter(|&j| deterministic[j] > 0)
                .min_by(|&a, &b| (nf * weights[a]).fract().total_cmp(&(nf * weights[b]).fract()))
                .expect("r > 0");
            deterministic[j] -= 1;
            r -= 1;
        }
        let residual_weights = if r < n {
            let denom = (n - r) as f64;
            weights
                .iter()
                .zip(&deterministic)
                .map(|(w, &d)| ((nf * w - d as f64) / denom).max(0.0))
                .collect()
        } else {
            vec![0.0; weights.len()]
        };
        Self { deterministic, r, residual_weights }
    }

    pub fn random_draws(&self, n: usize) -> usize {
        n - self.r
    }

    /// Deterministic copies in ancestor-major order.
    fn deterministic_indices(&self, n: usize) -> Vec<usize> {
        let mut indices = Vec::with_capacity(n);
        for (i, &c) in self.deterministic.iter().enumerate() {
            indices.extend(std::iter::repeat_n(i, c));
        }
        indices
    }
}

/// Inverts an increasing sequence of points in `(0, 1]` by a single sweep.
fn select_sorted(cdf: &Cdf, points: impl Iterator<Item = f64>, out: &mut Vec<usize>) {
    let c = cdf.cumulative();
    let mut i = 0;
    for u in points {
        while c[i] < u {
            i += 1;
        }
        out.push(i);
    }
}

/// Stratum points `(j + v_j) / k` for `j = 0..k`.
fn stratum_points(v: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let k = v.len() as f64;
    v.iter().enumerate().map(move |(j, vj)| ((j as f64 + vj) / k).min(1.0))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("resample size n must be at least 1".into()));
    }
    Ok(())
}

fn cdf_of(weights: &[f64]) -> Result<Cdf> {
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidWeight { index, value });
    }
    Ok(Cdf::new(weights))
}

fn check_uniforms(us: &[f64]) -> Result<()> {
    match us.iter().find(|&&u| !(u > 0.0 && u <= 1.0)) {
        Some(&u) => Err(Error::OutOfRange(u)),
        None => Ok(()),
    }
}

/// `I_j = D^inv(u_j)`, one independent inversion per offspring.
pub fn multinomial_from_uniforms(weights: &[f64], us: &[f64]) -> Result<ResampleOutput> {
    check_uniforms(us)?;
    let cdf = cdf_of(weights)?;
    let indices = us.iter().map(|&u| cdf.select(u)).collect();
    Ok(ResampleOutput::from_indices(indices, weights.len()))
}

/// One uniform `v_j` on `(0, 1]` per stratum; offspring `j` inverts `(j + v_j) / n`.
pub fn stratified_from_uniforms(weights: &[f64], vs: &[f64]) -> Result<ResampleOutput> {
    check_uniforms(vs)?;
    let cdf = cdf_of(weights)?;
    let mut indices = Vec::with_capacity(vs.len());
    select_sorted(&cdf, stratum_points(vs), &mut indices);
    Ok(ResampleOutput::from_indices(indices, weights.len()))
}

/// Single uniform `v` on `(0, 1]`; offspring `j` inverts `(j + v) / n`.
pub fn systematic_from_uniform(weights: &[f64], n: usize, v: f64) -> Result<ResampleOutput> {
    check_n(n)?;
    check_uniforms(&[v])?;
    let cdf = cdf_of(weights)?;
    let nf = n as f64;
    let mut indices = Vec::with_capacity(n);
    select_sorted(&cdf, (0..n).map(|j| ((j as f64 + v) / nf).min(1.0)), &mut indices);
    Ok(ResampleOutput::from_indices(indices, weights.len()))
}

/// Residual resampling given the `n - R` uniforms for the multinomial part.
pub fn residual_from_uniforms(weights: &[f64], n: usize, us: &[f64]) -> Result<ResampleOutput> {
    residual_with(weights, n, us, false)
}

/// Residual resampling with the `n - R` residual offspring drawn by stratified sampling.
pub fn residual_stratified_from_uniforms(weights: &[f64], n: usize, vs: &[f64]) -> Result<ResampleOutput> {
    residual_with(weights, n, vs, true)
}

fn residual_with(weights: &[f64], n: usize, us: &[f64], stratified: bool) -> Result<ResampleOutput> {
    check_n(n)?;
    check_uniforms(us)?;
    cdf_of(weights)?;
    let dec = ResidualDecomposition::new(weights, n);
    let k = dec.random_draws(n);
    if us.len() != k {
        return Err(Error::InvalidConfig(format!("expected {k} uniforms, got {}", us.len())));
    }
    let mut indices = dec.deterministic_indices(n);
    if k > 0 {
        let cdf = Cdf::new(&dec.residual_weights);
        if stratified {
            select_sorted(&cdf, stratum_points(us), &mut indices);
        } else {
            indices.extend(us.iter().map(|&u| cdf.select(u)));
        }
    }
    Ok(ResampleOutput::from_indices(indices, weights.len()))
}

/// Number of uniforms `scheme` consumes for this system and `n`.
pub fn uniforms_needed(scheme: SchemeId, weights: &[f64], n: usize) -> usize {
    match scheme {
        SchemeId::Multinomial | SchemeId::Stratified => n,
        SchemeId::Systematic => 1,
        SchemeId::Residual | SchemeId::ResidualStratified => {
            ResidualDecomposition::new(weights, n).random_draws(n)
        }
    }
}

/// Runs `scheme` on explicitly supplied uniforms (see [`uniforms_needed`]).
pub fn resample_with_uniforms(scheme: SchemeId, weights: &[f64], n: usize, us: &[f64]) -> Result<ResampleOutput> {
    check_n(n)?;
    match scheme {
        SchemeId::Multinomial => {
            if us.len() != n {
                return Err(Error::InvalidConfig(format!("expected {n} uniforms, got {}", us.len())));
            }
            multinomial_from_uniforms(weights, us)
        }
        SchemeId::Stratified => {
            if us.len() != n {
                return Err(Error::InvalidConfig(format!("expected {n} uniforms, got {}", us.len())));
            }
            stratified_from_uniforms(weights, us)
        }
        SchemeId::Systematic => match us {
            [v] => systematic_from_uniform(weights, n, *v),
            _ => Err(Error::InvalidConfig(format!("expected 1 uniform, got {}", us.len()))),
        },
        SchemeId::Residual => residual_from_uniforms(weights, n, us),
        SchemeId::ResidualStratified => residual_stratified_from_uniforms(weights, n, us),
    }
}

pub fn resample(scheme: SchemeId, system: &ParticleSystem, n: usize, stream: &RandomStream) -> Result<ResampleOutput> {
    check_n(n)?;
    let w = system.weights();
    let us = uniform_draws(stream, uniforms_needed(scheme, w, n));
    resample_with_uniforms(scheme, w, n, &us)
}

pub fn multinomial_resample(system: &ParticleSystem, n: usize, stream: &RandomStream) -> Result<ResampleOutput> {
    resample(SchemeId::Multinomial, system, n, stream)
}

pub fn residual_resample(system: &ParticleSystem, n: usize, stream: &RandomStream) -> Result<ResampleOutput> {
    resample(SchemeId::Residual, system, n, stream)
}

pub fn stratified_resample(system: &ParticleSystem, n: usize, stream: &RandomStream) -> Result<ResampleOutput> {
    resample(SchemeId::Stratified, system, n, stream)
}

pub fn systematic_resample(system: &ParticleSystem, n: usize, stream: &RandomStream) -> Result<ResampleOutput> {
    resample(SchemeId::Systematic, system, n, stream)
}

pub fn residual_stratified_resample(
    system: &ParticleSystem,
    n: usize,
    stream: &RandomStream,
) -> Result<ResampleOutput> {
    resample(SchemeId::ResidualStratified, system, n, stream)
}

/// Copies ancestor positions in offspring order; every new weight is `1/n`.
pub fn apply_resample(system: &ParticleSystem, output: &ResampleOutput) -> Result<ParticleSystem> {
    let n = output.n();
    check_n(n)?;
    let mut positions = Vec::with_capacity(n * system.dim());
    for &i in &output.indices {
        if i >= system.len() {
            return Err(Error::IndexOutOfBounds { index: i, len: system.len() });
        }
        positions.extend_from_slice(system.position(i));
    }
    Ok(ParticleSystem::from_parts_unchecked(
        system.dim(),
        positions,
        vec![1.0 / n as f64; n],
    ))
}
