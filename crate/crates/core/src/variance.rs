//! Conditional variance of the resampled estimator `n^-1 sum_j f(x~_j)` given
//! the current particle system.
//!
//! Multinomial, residual, stratified and residual-stratified variances are
//! closed forms. The stratum integrals of `f o x o D^inv` are computed exactly
//! from the merged breakpoints `{c_i} ∪ {j/n}`, so no quadrature error enters.
//! Systematic resampling has no usable closed form; its variance is obtained
//! exactly by enumerating the segments of the single uniform on which the
//! estimator is constant.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resampling::{resample, ResidualDecomposition, SchemeId};
use crate::stats;
use crate::stream::RandomStream;
use crate::system::{Cdf, ParticleSystem, TestFunction};

/// Batches used for the Monte Carlo standard error.
pub const MC_BATCHES: usize = 100;

fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

fn weighted_second_moment(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v * v).sum()
}

/// `n^-1 { sum w f^2 - (sum w f)^2 }`.
pub fn multinomial_variance(weights: &[f64], values: &[f64], n: usize) -> f64 {
    let mean = weighted_mean(weights, values);
    let centred: f64 = weights.iter().zip(values).map(|(w, v)| w * (v - mean) * (v - mean)).sum();
    centred / n as f64
}

/// `n^-1 sum w f^2 - sum floor(n w)/n^2 f^2 - (n - R)/n^2 (sum wbar f)^2`; zero when `R = n`.
pub fn residual_variance(weights: &[f64], values: &[f64], n: usize) -> f64 {
    let dec = ResidualDecomposition::new(weights, n);
    if dec.r >= n {
        return 0.0;
    }
    let nf = n as f64;
    let first = weighted_second_moment(weights, values) / nf;
    let second: f64 = dec
        .deterministic
        .iter()
        .zip(values)
        .map(|(&d, v)| d as f64 * v * v)
        .sum::<f64>()
        / (nf * nf);
    let residual_mean = weighted_mean(&dec.residual_weights, values);
    let third = (n - dec.r) as f64 / (nf * nf) * residual_mean * residual_mean;
    first - second - third
}

/// `n^-2 sum_j Var[f(x_{D^inv(U_j)})]` with `U_j` uniform on the stratum `(j/n, (j+1)/n]`.
pub fn stratified_variance(weights: &[f64], values: &[f64], n: usize) -> f64 {
    let cdf = Cdf::new(weights);
    let nf = n as f64;
    let mut total = 0.0;
    for j in 0..n {
        let a = j as f64 / nf;
        let b = if j + 1 == n { 1.0 } else { (j + 1) as f64 / nf };
        let pieces = cdf.pieces(a, b);
        let mass: f64 = pieces.iter().map(|&(_, len)| len).sum();
        if pieces.len() < 2 || mass <= 0.0 {
            continue;
        }
        let mean = pieces.iter().map(|&(i, len)| len * values[i]).sum::<f64>() / mass;
        total += pieces
            .iter()
            .map(|&(i, len)| len / mass * (values[i] - mean) * (values[i] - mean))
            .sum::<f64>();
    }
    total / (nf * nf)
}

/// Deterministic `floor(n w)` copies plus `n - R` stratified draws on the
/// residual weights: `((n - R)/n)^2` times the stratified variance of the
/// residual system with `n - R` strata.
pub fn residual_stratified_variance(weights: &[f64], values: &[f64], n: usize) -> f64 {
    let dec = ResidualDecomposition::new(weights, n);
    if dec.r >= n {
        return 0.0;
    }
    let k = n - dec.r;
    let scale = k as f64 / n as f64;
    scale * scale * stratified_variance(&dec.residual_weights, values, k)
}

/// Neumaier-compensated running sums of `scale * w_i`.
fn compensated_cumsum(weights: &[f64], scale: f64) -> Vec<f64> {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    weights
        .iter()
        .map(|w| {
            let x = scale * w;
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
            sum + comp
        })
        .collect()
}

/// Segments of `v` in `(0, 1]` (offspring `j` inverts `(j + v)/n`) on which the
/// systematic estimator is constant, as `(segment length, estimator value)`.
///
/// Breakpoints are the fractional parts of the scaled cumulative weights
/// `S_i = n (w_1 + ... + w_i)`, accumulated with compensated summation: they
/// are differences of numbers of size `n`, and plain summation loses about
/// `n^2 eps` there.
pub fn systematic_segments(weights: &[f64], values: &[f64], n: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let positive: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let mut scaled = compensated_cumsum(weights, nf);
    if let Some(&last) = positive.last() {
        scaled[last] = nf;
    }

    // estimator as v -> 0+: offspring j sits just above the scaled point j
    let mut est0 = 0.0;
    let mut p = 0;
    for j in 0..n {
        while scaled[positive[p]] <= j as f64 {
            p += 1;
        }
        est0 += values[positive[p]];
    }
    est0 /= nf;

    // Offspring floor(S_i) crosses S_i at v = frac(S_i), moving from particle
    // i to the next positive-weight particle.
    let mut jumps: Vec<(f64, f64)> = positive
        .windows(2)
        .filter_map(|pair| {
            let v = scaled[pair[0]].fract();
            (v > 0.0).then(|| (v, (values[pair[1]] - values[pair[0]]) / nf))
        })
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut segments = Vec::with_capacity(jumps.len() + 1);
    let mut start = 0.0;
    let mut est = est0;
    for (v, delta) in jumps {
        if v > start {
            segments.push((v - start, est));
            start = v;
        }
        est += delta;
    }
    segments.push((1.0 - start, est));
    segments
}

/// Exact systematic conditional variance by segment enumeration.
pub fn systematic_variance_exact(weights: &[f64], values: &[f64], n: usize) -> f64 {
    let segments = systematic_segments(weights, values, n);
    let mean: f64 = segments.iter().map(|(len, e)| len * e).sum();
    segments.iter().map(|(len, e)| len * (e - mean) * (e - mean)).sum()
}

/// Closed form for the scheme, `None` for systematic.
pub fn closed_form_variance(scheme: SchemeId, weights: &[f64], values: &[f64], n: usize) -> Option<f64> {
    match scheme {
        SchemeId::Multinomial => Some(multinomial_variance(weights, values, n)),
        SchemeId::Residual => Some(residual_variance(weights, values, n)),
        SchemeId::Stratified => Some(stratified_variance(weights, values, n)),
        SchemeId::ResidualStratified => Some(residual_stratified_variance(weights, values, n)),
        SchemeId::Systematic => None,
    }
}

/// Exact conditional variance for every scheme (closed form or segment enumeration).
pub fn exact_variance(scheme: SchemeId, weights: &[f64], values: &[f64], n: usize) -> f64 {
    closed_form_variance(scheme, weights, values, n)
        .unwrap_or_else(|| systematic_variance_exact(weights, values, n))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    Ok(())
}

pub fn cond_var_multinomial(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(multinomial_variance(system.weights(), &f.values(system), n))
}

pub fn cond_var_residual(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(residual_variance(system.weights(), &f.values(system), n))
}

pub fn cond_var_stratified(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(stratified_variance(system.weights(), &f.values(system), n))
}

pub fn cond_var_residual_stratified(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(residual_stratified_variance(system.weights(), &f.values(system), n))
}

pub fn cond_var_systematic_exact(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(systematic_variance_exact(system.weights(), &f.values(system), n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub scheme: SchemeId,
    pub n: usize,
    pub closed_form: Option<f64>,
    pub exact_enumeration: Option<f64>,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub replicates: usize,
}

/// Offspring means `n^-1 sum_j f(x~_j)` for `replicates` independent
/// resamplings; replicate `r` uses `stream.offset(r)`.
///
/// Replicates run on the current rayon pool and are collected in index
/// order, so the result does not depend on the thread count.
pub fn resampled_means(
    scheme: SchemeId,
    weights: &[f64],
    values: &[f64],
    n: usize,
    replicates: usize,
    stream: &RandomStream,
) -> Result<Vec<f64>> {
    let system = ParticleSystem::scalar(values.to_vec(), weights)?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| Ok(resample(scheme, &system, n, &stream.offset(r))?.offspring_mean(values)))
        .collect()
}

/// Monte Carlo estimate of the conditional variance, with the exact values
/// attached for comparison.
pub fn cond_var_mc(
    scheme: SchemeId,
    system: &ParticleSystem,
    f: &TestFunction,
    n: usize,
    replicates: usize,
    stream: &RandomStream,
) -> Result<VarianceReport> {
    check_n(n)?;
    if replicates < 2 {
        return Err(Error::InvalidConfig("at least two replicates are required".into()));
    }
    let values = f.values(system);
    let weights = system.weights();
    let means = resampled_means(scheme, weights, &values, n, replicates, stream)?;
    let (mc_estimate, mc_stderr) = stats::batch_variance(&means, MC_BATCHES);
    let closed_form = closed_form_variance(scheme, weights, &values, n);
    let exact_enumeration = match scheme {
        SchemeId::Systematic => Some(systematic_variance_exact(weights, &values, n)),
        _ => None,
    };
    Ok(VarianceReport { scheme, n, closed_form, exact_enumeration, mc_estimate, mc_stderr, replicates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// `x0, x1, x0, x1, ...`
    Interleaved,
    /// `x0, ..., x0, x1, ..., x1`
    Blocked,
    /// Interleaved, then shuffled with the given seed.
    Permuted(u64),
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ordering::Interleaved => f.write_str("interleaved"),
            Ordering::Blocked => f.write_str("blocked"),
            Ordering::Permuted(seed) => write!(f, "permuted({seed})"),
        }
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "interleaved" => Ok(Ordering::Interleaved),
            "blocked" => Ok(Ordering::Blocked),
            _ => s
                .strip_prefix("permuted(")
                .and_then(|rest| rest.strip_suffix(')'))
                .and_then(|seed| seed.parse().ok())
                .map(Ordering::Permuted)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown ordering `{s}`"))),
        }
    }
}

/// Two-value system: `n/2` copies of `x1` with weight `2 omega/n` and `n/2`
/// copies of `x0` with weight `2(1 - omega)/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterExampleConfig {
    pub n: usize,
    pub omega: f64,
    pub x0: f64,
    pub x1: f64,
    pub f0: f64,
    pub f1: f64,
    pub ordering: Ordering,
}

impl CounterExampleConfig {
    pub fn new(n: usize, omega: f64) -> Self {
        Self { n, omega, x0: 0.0, x1: 1.0, f0: 0.0, f1: 1.0, ordering: Ordering::Interleaved }
    }

    pub fn with_ordering(mut self, ordering: Ordering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("n must be even and at least 2, got {}", self.n)));
        }
        if !(0.5..1.0).contains(&self.omega) {
            return Err(Error::InvalidConfig(format!("omega must lie in [1/2, 1), got {}", self.omega)));
        }
        if self.x0 == self.x1 {
            return Err(Error::InvalidConfig("x0 and x1 must differ".into()));
        }
        Ok(())
    }

    /// `|f(x1) - f(x0)|`.
    pub fn abs_f(&self) -> f64 {
        (self.f1 - self.f0).abs()
    }

    /// Maps `x1` to `f1` and everything else to `f0`.
    pub fn test_function(&self) -> TestFunction {
        let (x1, f0, f1) = (self.x1, self.f0, self.f1);
        TestFunction::new("counterexample", f0.abs().max(f1.abs()), move |x| if x[0] == x1 { f1 } else { f0 })
    }
}

impl FromStr for CounterExampleConfig {
    type Err = Error;

    /// `key=value` pairs separated by commas, e.g. `omega=0.75,n=4`.
    /// Keys: `n`, `omega`, `x0`, `x1`, `f0`, `f1`, `ordering`.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = CounterExampleConfig::new(0, f64::NAN);
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("bad value `{v}` for `{k}`"));
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{part}`")))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad(k, v));
            match k.trim() {
                "n" => cfg.n = v.trim().parse().map_err(|_| bad(k, v))?,
                "omega" => cfg.omega = num(v)?,
                "x0" => cfg.x0 = num(v)?,
                "x1" => cfg.x1 = num(v)?,
                "f0" => cfg.f0 = num(v)?,
                "f1" => cfg.f1 = num(v)?,
                "ordering" => cfg.ordering = v.parse()?,
                other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn make_counterexample(config: &CounterExampleConfig) -> Result<ParticleSystem> {
    config.validate()?;
    let n = config.n;
    let half = n / 2;
    let nf = n as f64;
    let w1 = 2.0 * config.omega / nf;
    let w0 = 2.0 * (1.0 - config.omega) / nf;
    let interleaved: Vec<(f64, f64)> = (0..n)
        .map(|i| if i % 2 == 0 { (config.x0, w0) } else { (config.x1, w1) })
        .collect();
    let particles = match config.ordering {
        Ordering::Interleaved => interleaved,
        Ordering::Blocked => std::iter::repeat_n((config.x0, w0), half)
            .chain(std::iter::repeat_n((config.x1, w1), half))
            .collect(),
        Ordering::Permuted(seed) => {
            let mut p = interleaved;
            p.shuffle(&mut RandomStream::new(seed, 0).rng());
            p
        }
    };
    let (positions, weights): (Vec<f64>, Vec<f64>) = particles.into_iter().unzip();
    ParticleSystem::scalar(positions, &weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterExampleVariances {
    /// `n^-1 (1 - omega) omega |f|^2`
    pub multinomial: f64,
    /// `n^-1 (2 omega - 1)(1 - omega) |f|^2`, shared by residual and stratified.
    pub residual_stratified: f64,
    /// `(omega - 1/2)(1 - omega) |f|^2`, independent of `n`.
    pub systematic: f64,
}

pub fn counterexample_analytic(config: &CounterExampleConfig) -> Result<CounterExampleVariances> {
    config.validate()?;
    if config.ordering != Ordering::Interleaved {
        return Err(Error::UnsupportedOrdering);
    }
    let w = config.omega;
    let f2 = config.abs_f() * config.abs_f();
    let nf = config.n as f64;
    Ok(CounterExampleVariances {
        multinomial: (1.0 - w) * w * f2 / nf,
        residual_stratified: (2.0 * w - 1.0) * (1.0 - w) * f2 / nf,
        systematic: (w - 0.5) * (1.0 - w) * f2,
    })
}
