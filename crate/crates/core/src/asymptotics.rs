//! Large-sample behaviour of residual resampling.
//!
//! The setting: `m` i.i.d. draws from a density `nu` carry self-normalized
//! weights proportional to `g = mu / nu`, and are resampled to `n ~ alpha m`
//! particles. Targets of the form `nu{h}` are computed by composite
//! Gauss-Legendre quadrature whose panels are split at the jumps of
//! `floor(alpha g)`, so the discontinuous integrands converge at the smooth
//! rate.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_filter, FilterConfig, StateSpaceModel};
use crate::resampling::SchemeId;
use crate::stats;
use crate::stream::{open_closed_uniform, RandomStream, StreamRng};
use crate::system::{ParticleSystem, TestFunction};
use crate::variance::exact_variance;

/// Distance to the nearest integer below which `alpha g(x)` counts as integer.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;
/// Largest admissible `mu`-mass of the near-integer set.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;
/// Draws used by the support check inside [`lemma1_experiment`].
pub const SUPPORT_SAMPLES: usize = 100_000;

pub const MIN_PANELS: usize = 1_000_000;
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;
const MAX_REFINEMENTS: u32 = 5;
const CHUNKS: usize = 1000;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Sampler = Arc<dyn Fn(&mut StreamRng) -> f64 + Send + Sync>;

/// A proposal density `nu` on a bounded interval together with the
/// likelihood ratio `g = mu / nu` and the limit `alpha = lim n / m`.
///
/// `g` need not integrate to one under `nu`; it is rescaled by
/// `Z = nu{g}` wherever the normalized ratio matters.
#[derive(Clone)]
pub struct DensityPair {
    name: String,
    domain: (f64, f64),
    alpha: f64,
    g_bound: f64,
    nu_density: ScalarFn,
    nu_sampler: Sampler,
    g: ScalarFn,
    normalizer: OnceLock<f64>,
}

impl std::fmt::Debug for DensityPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityPair")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("alpha", &self.alpha)
            .field("g_bound", &self.g_bound)
            .finish_non_exhaustive()
    }
}

impl DensityPair {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        nu_density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        nu_sampler: impl Fn(&mut StreamRng) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_bound: f64,
        alpha: f64,
    ) -> Result<Self> {
        if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
            return Err(Error::InvalidConfig(format!("bad domain {domain:?}")));
        }
        if !(g_bound > 0.0 && g_bound.is_finite()) {
            return Err(Error::InvalidConfig("g bound must be positive and finite".into()));
        }
        check_alpha(alpha)?;
        Ok(Self {
            name: name.into(),
            domain,
            alpha,
            g_bound,
            nu_density: Arc::new(nu_density),
            nu_sampler: Arc::new(nu_sampler),
            g: Arc::new(g),
            normalizer: OnceLock::new(),
        })
    }

    /// `nu` uniform on `(0, 1)`, `g(x) = 2x`.
    pub fn reference(alpha: f64) -> Result<Self> {
        Self::new("reference", (0.0, 1.0), |_| 1.0, open_closed_uniform, |x| 2.0 * x, 2.0, alpha)
    }

    /// `nu` uniform on `(0, 1)`, `g = 1`: `alpha g` is an integer everywhere
    /// when `alpha` is.
    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new("constant", (0.0, 1.0), |_| 1.0, open_closed_uniform, |_| 1.0, 1.0, alpha)
    }

    pub const NAMES: [&'static str; 2] = ["reference", "constant"];

    pub fn by_name(name: &str, alpha: f64) -> Result<Self> {
        match name {
            "reference" => Self::reference(alpha),
            "constant" => Self::constant(alpha),
            other => Err(Error::InvalidConfig(format!(
                "unknown density pair `{other}` (expected one of: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let mut pair = self.clone();
        pair.alpha = alpha;
        Ok(pair)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn g_bound(&self) -> f64 {
        self.g_bound
    }

    pub fn g(&self, x: f64) -> f64 {
        (self.g)(x)
    }

    pub fn nu_density(&self, x: f64) -> f64 {
        (self.nu_density)(x)
    }

    pub fn sample_nu(&self, rng: &mut StreamRng) -> f64 {
        (self.nu_sampler)(rng)
    }

    /// `Z = nu{g}`.
    pub fn normalizer(&self) -> f64 {
        *self.normalizer.get_or_init(|| refine(self, &|x| self.g(x), None))
    }

    /// `mu / nu = g / Z`.
    pub fn ratio(&self, x: f64) -> f64 {
        self.g(x) / self.normalizer()
    }

    /// `(1/alpha) floor(alpha mu/nu)`.
    pub fn floored_ratio(&self, x: f64) -> f64 {
        self.level(x) / self.alpha
    }

    fn level(&self, x: f64) -> f64 {
        (self.alpha * self.ratio(x)).floor()
    }

    fn near_integer(&self, x: f64, tolerance: f64) -> bool {
        let y = self.alpha * self.ratio(x);
        (y - y.round()).abs() < tolerance
    }

    /// `m` draws from `nu` weighted by `g`.
    pub fn weighted_sample(&self, m: usize, stream: &RandomStream) -> Result<ParticleSystem> {
        let mut rng = stream.rng();
        let xs: Vec<f64> = (0..m).map(|_| self.sample_nu(&mut rng)).collect();
        let gs: Vec<f64> = xs.iter().map(|&x| self.g(x)).collect();
        ParticleSystem::scalar(xs, &gs)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")))
    }
}

const GL_NODES: [f64; 5] =
    [-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] =
    [0.236_926_885_056_189_1, 0.478_628_670_499_366_5, 0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1];

type Integrand<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

fn gauss_legendre(h: Integrand, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * h(mid + half * x)).sum::<f64>() * half
}

/// One panel, split at every change of `level` between sample points.
fn panel(h: Integrand, level: Option<Integrand>, a: f64, b: f64) -> f64 {
    let Some(level) = level else {
        return gauss_legendre(h, a, b);
    };
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut probes = [a, 0.0, 0.0, 0.0, 0.0, 0.0, b];
    for (p, x) in probes[1..6].iter_mut().zip(GL_NODES) {
        *p = mid + half * x;
    }
    let mut total = 0.0;
    let mut start = a;
    let mut current = level(a);
    for pair in probes.windows(2) {
        let next = level(pair[1]);
        if next == current {
            continue;
        }
        let (mut lo, mut hi) = (pair[0], pair[1]);
        loop {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if level(m) == current {
                lo = m;
            } else {
                hi = m;
            }
        }
        total += gauss_legendre(h, start, hi);
        start = hi;
        current = next;
    }
    total + gauss_legendre(h, start, b)
}

fn composite(pair: &DensityPair, h: Integrand, level: Option<Integrand>, panels: usize) -> f64 {
    let (lo, hi) = pair.domain;
    let width = hi - lo;
    let edge = |i: usize| lo + width * (i as f64 / panels as f64);
    let weighted = |x: f64| pair.nu_density(x) * h(x);
    let per_chunk = panels.div_ceil(CHUNKS);
    let sums: Vec<f64> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * per_chunk).min(panels);
            (c * per_chunk..end).map(|i| panel(&weighted, level, edge(i), edge(i + 1))).sum::<f64>()
        })
        .collect();
    sums.iter().sum()
}

/// Doubles the panel count from [`MIN_PANELS`] until successive values
/// agree to [`QUADRATURE_TOLERANCE`].
fn refine(pair: &DensityPair, h: Integrand, level: Option<Integrand>) -> f64 {
    let mut panels = MIN_PANELS;
    let mut previous = composite(pair, h, level, panels);
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let value = composite(pair, h, level, panels);
        if (value - previous).abs() < QUADRATURE_TOLERANCE {
            return value;
        }
        previous = value;
    }
    previous
}

/// `nu{h}` over the pair's domain, with panels split where
/// `floor(alpha mu/nu)` jumps.
pub fn nu_integral(pair: &DensityPair, h: impl Fn(f64) -> f64 + Sync) -> f64 {
    let level = |x: f64| pair.level(x);
    refine(pair, &h, Some(&level))
}

fn scalar_eval(f: &TestFunction) -> impl Fn(f64) -> f64 + Sync + '_ {
    move |x| f.eval(&[x])
}

/// `nu{(1/alpha) floor(alpha mu/nu) f}`.
pub fn lemma1_target(pair: &DensityPair, f: &TestFunction) -> f64 {
    let f = scalar_eval(f);
    nu_integral(pair, |x| pair.floored_ratio(x) * f(x))
}

/// `mu(f^2) - mu(f)^2`.
pub fn multinomial_kappa(pair: &DensityPair, f: &TestFunction) -> f64 {
    let f = scalar_eval(f);
    let m2 = nu_integral(pair, |x| pair.ratio(x) * f(x) * f(x));
    let m1 = nu_integral(pair, |x| pair.ratio(x) * f(x));
    m2 - m1 * m1
}

/// `mu`-mass of `{x : dist(alpha mu/nu(x), N) < tolerance}` by a midpoint
/// rule on [`MIN_PANELS`] panels.
pub fn support_violation_quadrature(pair: &DensityPair, tolerance: f64) -> f64 {
    let (lo, hi) = pair.domain;
    let width = (hi - lo) / MIN_PANELS as f64;
    let sums: Vec<f64> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let per_chunk = MIN_PANELS / CHUNKS;
            (c * per_chunk..(c + 1) * per_chunk)
                .map(|i| {
                    let x = lo + (hi - lo) * ((i as f64 + 0.5) / MIN_PANELS as f64);
                    if pair.near_integer(x, tolerance) {
                        pair.nu_density(x) * pair.ratio(x) * width
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect();
    sums.iter().sum::<f64>().clamp(0.0, 1.0)
}

fn require_support(estimate: f64) -> Result<()> {
    if estimate > SUPPORT_THRESHOLD {
        Err(Error::SupportConditionViolated { estimate, threshold: SUPPORT_THRESHOLD })
    } else {
        Ok(())
    }
}

/// Asymptotic variance of `n` times the residual-resampling conditional
/// variance:
///
/// `kappa(f) = nu{(mu/nu - F) f^2} - nu{(mu/nu - F) f}^2 / (1 - nu{F})`
/// with `F = (1/alpha) floor(alpha mu/nu)`.
pub fn residual_kappa(pair: &DensityPair, f: &TestFunction) -> Result<f64> {
    require_support(support_violation_quadrature(pair, SUPPORT_TOLERANCE))?;
    residual_kappa_unchecked(pair, f)
}

/// [`residual_kappa`] without the support check.
pub fn residual_kappa_unchecked(pair: &DensityPair, f: &TestFunction) -> Result<f64> {
    let f = scalar_eval(f);
    let excess = |x: f64| pair.ratio(x) - pair.floored_ratio(x);
    let a = nu_integral(pair, |x| excess(x) * f(x) * f(x));
    let b = nu_integral(pair, |x| excess(x) * f(x));
    let denom = 1.0 - nu_integral(pair, |x| pair.floored_ratio(x));
    if denom <= 1e-12 {
        return Err(Error::DegenerateKappa);
    }
    Ok(a - b * b / denom)
}

/// Self-normalized importance-sampling estimate, from `samples` draws of
/// `nu`, of the `mu`-mass where `alpha mu/nu` is within `tolerance` of an
/// integer.
pub fn support_condition_estimate(
    pair: &DensityPair,
    samples: usize,
    tolerance: f64,
    stream: &RandomStream,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be at least 1".into()));
    }
    let mut rng = stream.rng();
    let (mut hit, mut total) = (0.0, 0.0);
    for _ in 0..samples {
        let x = pair.sample_nu(&mut rng);
        let g = pair.g(x);
        total += g;
        if pair.near_integer(x, tolerance) {
            hit += g;
        }
    }
    if total == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok((hit / total).clamp(0.0, 1.0))
}

/// `sum_i floor(n w_i) / n * f(x_i)`.
pub fn floor_weight_sum(system: &ParticleSystem, f: &TestFunction, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let nf = n as f64;
    Ok(system
        .weights()
        .iter()
        .zip(system.iter_positions())
        .map(|(w, x)| (nf * w).floor() / nf * f.eval(x))
        .sum())
}

pub fn coupled_n(alpha: f64, m: usize) -> usize {
    ((alpha * m as f64).round() as usize).max(1)
}

pub fn coupled_m(alpha: f64, n: usize) -> usize {
    ((n as f64 / alpha).round() as usize).max(1)
}

fn check_grid(grid: &[usize], what: &str) -> Result<()> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("{what} must be nonempty, positive and strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCheckResult {
    pub m_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    /// Replicate mean of the floor sum at each size.
    pub estimates: Vec<f64>,
    /// Interquartile range of the replicates at each size.
    pub iqrs: Vec<f64>,
    pub target: f64,
    pub support_violation_estimate: f64,
}

/// Floor sums over `replicates` weighted samples of each size `m`, with
/// `n = round(alpha m)`, against the quadrature target.
///
/// Replicate `r` at size `m` uses `stream.child(m).offset(r)`; the support
/// check uses `stream.child(u64::MAX)`.
pub fn lemma1_experiment(
    pair: &DensityPair,
    f: &TestFunction,
    m_grid: &[usize],
    replicates: usize,
    stream: &RandomStream,
) -> Result<LimitCheckResult> {
    check_grid(m_grid, "m grid")?;
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    let support =
        support_condition_estimate(pair, SUPPORT_SAMPLES, SUPPORT_TOLERANCE, &stream.child(u64::MAX))?;
    require_support(support)?;
    let target = lemma1_target(pair, f);
    let mut result = LimitCheckResult {
        m_grid: m_grid.to_vec(),
        n_grid: Vec::new(),
        estimates: Vec::new(),
        iqrs: Vec::new(),
        target,
        support_violation_estimate: support,
    };
    for &m in m_grid {
        let n = coupled_n(pair.alpha, m);
        let base = stream.child(m as u64);
        let sums = (0..replicates)
            .into_par_iter()
            .map(|r| floor_weight_sum(&pair.weighted_sample(m, &base.offset(r as u64))?, f, n))
            .collect::<Result<Vec<f64>>>()?;
        result.n_grid.push(n);
        result.estimates.push(stats::mean(&sums));
        result.iqrs.push(stats::iqr(&sums));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledVarRow {
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub scaled_var: f64,
    pub scaled_var_stderr: f64,
    pub target: Option<f64>,
}

/// Known limit of `n Var[. | G]` for `scheme`, if any.
pub fn kappa_target(scheme: SchemeId, pair: &DensityPair, f: &TestFunction) -> Result<Option<f64>> {
    match scheme {
        SchemeId::Multinomial => Ok(Some(multinomial_kappa(pair, f))),
        SchemeId::Residual => residual_kappa(pair, f).map(Some),
        _ => Ok(None),
    }
}

/// Replicate average of `n` times the exact conditional variance, each
/// replicate on a fresh weighted sample of size `m = round(n / alpha)`.
///
/// Replicate `r` at size `n` uses `stream.child(n).offset(r)`.
pub fn scaled_condvar_experiment(
    scheme: SchemeId,
    pair: &DensityPair,
    f: &TestFunction,
    n_grid: &[usize],
    replicates: usize,
    stream: &RandomStream,
) -> Result<Vec<ScaledVarRow>> {
    check_grid(n_grid, "n grid")?;
    if replicates < 2 {
        return Err(Error::InvalidConfig("at least 2 replicates are needed".into()));
    }
    let target = kappa_target(scheme, pair, f)?;
    n_grid
        .iter()
        .map(|&n| {
            let m = coupled_m(pair.alpha, n);
            let base = stream.child(n as u64);
            let scaled = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let system = pair.weighted_sample(m, &base.offset(r as u64))?;
                    let values = f.values(&system);
                    Ok(n as f64 * exact_variance(scheme, system.weights(), &values, n))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ScaledVarRow {
                n,
                m,
                replicates,
                scaled_var: stats::mean(&scaled),
                scaled_var_stderr: stats::mean_stderr(&scaled),
                target,
            })
        })
        .collect()
}

pub fn write_scaled_var_csv<W: Write>(rows: &[ScaledVarRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["n", "m", "replicates", "scaled_var", "scaled_var_stderr", "target"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            r.replicates.to_string(),
            r.scaled_var.to_string(),
            r.scaled_var_stderr.to_string(),
            r.target.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub n: usize,
    pub replicates: usize,
    /// Mean of the replicate estimates minus the reference value.
    pub bias: f64,
    /// `n` times the sample variance of the replicate estimates.
    pub scaled_var: f64,
    pub scaled_var_stderr: f64,
    /// Corrected Anderson-Darling statistic of the replicate estimates.
    pub anderson_darling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltResult {
    pub scheme: SchemeId,
    pub k: usize,
    pub reference: f64,
    pub rows: Vec<CltRow>,
}

impl CltResult {
    /// `scaled_var` at each grid size divided by the one before it.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].scaled_var / w[0].scaled_var).collect()
    }
}

/// Replicated filter runs with `m = n` particles, resampling at every step
/// with `scheme`; the estimate of `f` at time `k` is compared with
/// `reference`.
///
/// Replicate `r` at size `n` runs on `stream.child(n).offset(r)`, so two
/// schemes given the same stream share their initial draws.
#[allow(clippy::too_many_arguments)]
pub fn clt_experiment(
    scheme: SchemeId,
    model: &dyn StateSpaceModel,
    f: &TestFunction,
    k: usize,
    n_grid: &[usize],
    replicates: usize,
    reference: f64,
    stream: &RandomStream,
) -> Result<CltResult> {
    check_grid(n_grid, "n grid")?;
    if replicates < 3 {
        return Err(Error::InvalidConfig("at least 3 replicates are needed".into()));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let config = FilterConfig::new(n, n, scheme, k + 1);
        let base = stream.child(n as u64);
        let estimates = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let trace = run_filter(model, &config, std::slice::from_ref(f), &base.offset(r as u64))?;
                Ok(trace.rows[k].estimates[0])
            })
            .collect::<Result<Vec<f64>>>()?;
        let nf = n as f64;
        rows.push(CltRow {
            n,
            replicates,
            bias: stats::mean(&estimates) - reference,
            scaled_var: nf * stats::sample_variance(&estimates),
            scaled_var_stderr: nf * stats::variance_stderr(&estimates),
            anderson_darling: stats::anderson_darling_normal(&estimates),
        });
    }
    Ok(CltResult { scheme, k, reference, rows })
}
