//! Sequential importance sampling with resampling (SISR) and the bootstrap
//! filter, plus a scalar linear-Gaussian reference model with an exact
//! Kalman recursion.
//!
//! Observations never reach the engine directly: they enter only through
//! the model's likelihood `g_k(x)`.
//!
//! Random streams: for a run seeded with `base`, time index `k` uses
//! `step = base.child(k)`; particle moves (initial draw or propagation) use
//! `step.child(MOVE)` and resampling uses `step.child(RESAMPLE)`. Swapping the
//! resampling scheme therefore never perturbs the propagation draws.

use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resampling::{apply_resample, resample, SchemeId};
use crate::stream::{RandomStream, StreamRng};
use crate::system::{normalize_weights, ParticleSystem, TestFunction};

pub const MOVE: u64 = 0;
pub const RESAMPLE: u64 = 1;

/// A state-space model seen through the quantities SISR needs.
///
/// Time index `k` counts observations: `likelihood(x, k)` is `g_k(x)`.
pub trait StateSpaceModel: Sync {
    fn dim(&self) -> usize;

    /// Draw from the initial instrumental density `rho_0`.
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]);

    /// `nu(x) g_0(x) / rho_0(x)`.
    fn initial_weight(&self, x: &[f64]) -> f64;

    /// Draw `x_k` from the proposal `r(prev, .)`.
    fn propose(&self, prev: &[f64], k: usize, rng: &mut StreamRng, out: &mut [f64]);

    /// `q(prev, x) g_k(x) / r(prev, x)`.
    fn weight_ratio(&self, prev: &[f64], x: &[f64], k: usize) -> f64;

    /// `g_k(x)`.
    fn likelihood(&self, x: &[f64], k: usize) -> f64;

    /// Upper bound on `g_k`.
    fn likelihood_bound(&self) -> f64;

    /// Whether the proposal is the transition kernel (`r = q`).
    fn is_bootstrap(&self) -> bool;

    /// Number of time indices with a defined likelihood, if finite.
    fn horizon(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Particles drawn at initialization.
    pub m: usize,
    /// Particles after each resampling.
    pub n: usize,
    pub scheme: SchemeId,
    /// Resample after time indices `k` with `(k + 1) % every == 0`; `None` never resamples.
    pub resample_every: Option<usize>,
    /// Number of time indices filtered, `k = 0..horizon`.
    pub horizon: usize,
}

impl FilterConfig {
    pub fn new(m: usize, n: usize, scheme: SchemeId, horizon: usize) -> Self {
        Self { m, n, scheme, resample_every: Some(1), horizon }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("m and n must be at least 1".into()));
        }
        if self.resample_every == Some(0) {
            return Err(Error::InvalidConfig("resample_every must be positive".into()));
        }
        Ok(())
    }

    fn resamples_at(&self, k: usize) -> bool {
        self.resample_every.is_some_and(|every| (k + 1).is_multiple_of(every))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// `sum_i w_i f(x_i)` before resampling, one per registered function.
    pub estimates: Vec<f64>,
    pub ess: f64,
    /// `log sum_i w_{i,k-1} * ratio_i`, the log normalizing-constant increment.
    pub log_increment: f64,
    /// Population size the estimate was computed from.
    pub population: usize,
    pub resampled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl FilterTrace {
    /// `k,estimate_<name>...,ess,resampled`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend(self.names.iter().map(|n| format!("estimate_{n}")));
        header.extend(["ess".to_string(), "resampled".to_string()]);
        w.write_record(&header).map_err(data_err)?;
        for row in &self.rows {
            let mut rec = vec![row.k.to_string()];
            rec.extend(row.estimates.iter().map(|e| e.to_string()));
            rec.push(row.ess.to_string());
            rec.push(u8::from(row.resampled).to_string());
            w.write_record(&rec).map_err(data_err)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }

    /// Estimates of function `idx` over time.
    pub fn series(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimates[idx]).collect()
    }
}

fn data_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

fn weighted_system(dim: usize, positions: Vec<f64>, raw: &[f64]) -> Result<(ParticleSystem, f64)> {
    let total: f64 = raw.iter().sum();
    let system = ParticleSystem::new(dim, positions, raw)?;
    Ok((system, total.ln()))
}

fn init_weighted(model: &dyn StateSpaceModel, m: usize, stream: &RandomStream) -> Result<(ParticleSystem, f64)> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let dim = model.dim();
    let mut rng = stream.rng();
    let mut positions = vec![0.0; m * dim];
    for x in positions.chunks_exact_mut(dim) {
        model.sample_initial(&mut rng, x);
    }
    let raw: Vec<f64> = positions.chunks_exact(dim).map(|x| model.initial_weight(x)).collect();
    let (system, log_total) = weighted_system(dim, positions, &raw)?;
    Ok((system, log_total - (m as f64).ln()))
}

/// `m` draws from `rho_0` weighted by `nu g_0 / rho_0`, normalized.
pub fn sisr_init(model: &dyn StateSpaceModel, m: usize, stream: &RandomStream) -> Result<ParticleSystem> {
    init_weighted(model, m, stream).map(|(s, _)| s)
}

fn step_weighted(
    system: &ParticleSystem,
    model: &dyn StateSpaceModel,
    k: usize,
    stream: &RandomStream,
) -> Result<(ParticleSystem, f64)> {
    let dim = system.dim();
    let mut rng = stream.rng();
    let mut positions = vec![0.0; system.len() * dim];
    for (prev, x) in system.iter_positions().zip(positions.chunks_exact_mut(dim)) {
        model.propose(prev, k, &mut rng, x);
    }
    let ratios: Vec<f64> = system
        .iter_positions()
        .zip(positions.chunks_exact(dim))
        .map(|(prev, x)| model.weight_ratio(prev, x, k))
        .collect();
    // Equal incoming weights cancel under normalization; skipping the product
    // keeps the bootstrap weights exactly g_k(x_i) / sum_j g_k(x_j).
    if system.is_equally_weighted() {
        let (s, log_total) = weighted_system(dim, positions, &ratios)?;
        Ok((s, log_total - (system.len() as f64).ln()))
    } else {
        let raw: Vec<f64> = system.weights().iter().zip(&ratios).map(|(w, r)| w * r).collect();
        weighted_system(dim, positions, &raw)
    }
}

/// Propagates every particle through the proposal and multiplies its weight
/// by `q g_k / r`, then renormalizes.
pub fn sisr_step(
    system: &ParticleSystem,
    model: &dyn StateSpaceModel,
    k: usize,
    stream: &RandomStream,
) -> Result<ParticleSystem> {
    step_weighted(system, model, k, stream).map(|(s, _)| s)
}

fn row(system: &ParticleSystem, k: usize, functions: &[TestFunction], log_increment: f64) -> TraceRow {
    TraceRow {
        k,
        estimates: functions.iter().map(|f| system.estimate(f)).collect(),
        ess: system.ess(),
        log_increment,
        population: system.len(),
        resampled: false,
    }
}

/// One bootstrap iteration from an unweighted population: predict with the
/// transition kernel, weight by `g_k / sum g_k`, record, resample to `n`.
///
/// `stream` is the per-step stream; see the module docs for the derivation.
pub fn bootstrap_step(
    system: &ParticleSystem,
    model: &dyn StateSpaceModel,
    k: usize,
    n: usize,
    scheme: SchemeId,
    functions: &[TestFunction],
    stream: &RandomStream,
) -> Result<(ParticleSystem, TraceRow)> {
    if !model.is_bootstrap() {
        return Err(Error::InvalidConfig("bootstrap step needs a model with r = q".into()));
    }
    if !system.is_equally_weighted() {
        return Err(Error::InvalidConfig("bootstrap step expects an unweighted population".into()));
    }
    let at = |e| Error::AtStep { k, source: Box::new(e) };
    let (weighted, log_inc) = step_weighted(system, model, k, &stream.child(MOVE)).map_err(at)?;
    let mut r = row(&weighted, k, functions, log_inc);
    let out = resample(scheme, &weighted, n, &stream.child(RESAMPLE)).map_err(at)?;
    r.resampled = true;
    Ok((apply_resample(&weighted, &out).map_err(at)?, r))
}

/// Runs SISR for `config.horizon` time indices. Estimates are recorded
/// before resampling; errors carry the failing time index.
pub fn run_filter(
    model: &dyn StateSpaceModel,
    config: &FilterConfig,
    functions: &[TestFunction],
    stream: &RandomStream,
) -> Result<FilterTrace> {
    config.validate()?;
    if let Some(h) = model.horizon().filter(|&h| config.horizon > h) {
        return Err(Error::InvalidConfig(format!("horizon {} exceeds the {h} available observations", config.horizon)));
    }
    let names = functions.iter().map(|f| f.name().to_string()).collect();
    let mut rows = Vec::with_capacity(config.horizon);
    let mut current: Option<ParticleSystem> = None;
    for k in 0..config.horizon {
        let step = stream.child(k as u64);
        let at = |e| Error::AtStep { k, source: Box::new(e) };
        let (system, log_inc) = match &current {
            None => init_weighted(model, config.m, &step.child(MOVE)),
            Some(prev) => step_weighted(prev, model, k, &step.child(MOVE)),
        }
        .map_err(at)?;
        let mut r = row(&system, k, functions, log_inc);
        let next = if config.resamples_at(k) {
            r.resampled = true;
            let out = resample(config.scheme, &system, config.n, &step.child(RESAMPLE)).map_err(at)?;
            apply_resample(&system, &out).map_err(at)?
        } else {
            system
        };
        rows.push(r);
        current = Some(next);
    }
    Ok(FilterTrace { names, rows })
}

/// `x_{k+1} = a x_k + sigma_w W`, `y_k = x_k + sigma_v V`, `x_0 ~ N(m0, p0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianParams {
    pub a: f64,
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub m0: f64,
    pub p0: f64,
}

impl LinearGaussianParams {
    /// `a = 0.9`, `sigma_w = 0.6`, `sigma_v = 1.0`, prior `N(0, 1)`.
    pub const REFERENCE: Self = Self { a: 0.9, sigma_w: 0.6, sigma_v: 1.0, m0: 0.0, p0: 1.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0 && self.sigma_v > 0.0 && self.p0 > 0.0) {
            return Err(Error::InvalidConfig("noise variances must be positive".into()));
        }
        if !self.a.is_finite() || !self.m0.is_finite() {
            return Err(Error::InvalidConfig("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Hidden states and observations for `k = 0..horizon`.
    pub fn simulate(&self, horizon: usize, stream: &RandomStream) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream.rng();
        let mut states = Vec::with_capacity(horizon);
        let mut obs = Vec::with_capacity(horizon);
        let mut x = self.m0 + self.p0.sqrt() * std_normal(&mut rng);
        for k in 0..horizon {
            if k > 0 {
                x = self.a * x + self.sigma_w * std_normal(&mut rng);
            }
            states.push(x);
            obs.push(x + self.sigma_v * std_normal(&mut rng));
        }
        (states, obs)
    }
}

fn std_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Scalar linear-Gaussian model. With `proposal_inflation = 1` it is the
/// bootstrap filter; larger values propose from `N(a x, (c sigma_w)^2)` and
/// correct with `q / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub params: LinearGaussianParams,
    pub observations: Vec<f64>,
    pub proposal_inflation: f64,
}

/// Seeded 50-step observation record for [`LinearGaussianParams::REFERENCE`].
pub const REFERENCE_OBSERVATIONS_CSV: &str = include_str!("../data/lingauss_obs.csv");
/// Seed used to generate [`REFERENCE_OBSERVATIONS_CSV`].
pub const REFERENCE_OBSERVATIONS_SEED: RandomStream = RandomStream::new(20050915, 0);

impl LinearGaussian {
    pub fn new(params: LinearGaussianParams, observations: Vec<f64>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, observations, proposal_inflation: 1.0 })
    }

    pub fn reference() -> Self {
        let obs = read_observations(REFERENCE_OBSERVATIONS_CSV.as_bytes()).expect("bundled observation file");
        Self::new(LinearGaussianParams::REFERENCE, obs).expect("valid reference parameters")
    }

    pub fn with_proposal_inflation(mut self, c: f64) -> Self {
        self.proposal_inflation = c;
        self
    }

    fn obs(&self, k: usize) -> f64 {
        self.observations[k]
    }
}

impl StateSpaceModel for LinearGaussian {
    fn dim(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let z: f64 = StandardNormal.sample(rng);
        out[0] = self.params.m0 + self.params.p0.sqrt() * z;
    }

    fn initial_weight(&self, x: &[f64]) -> f64 {
        // rho_0 = nu
        self.likelihood(x, 0)
    }

    fn propose(&self, prev: &[f64], _k: usize, rng: &mut StreamRng, out: &mut [f64]) {
        let z: f64 = StandardNormal.sample(rng);
        out[0] = self.params.a * prev[0] + self.proposal_inflation * self.params.sigma_w * z;
    }

    fn weight_ratio(&self, prev: &[f64], x: &[f64], k: usize) -> f64 {
        let g = self.likelihood(x, k);
        if self.is_bootstrap() {
            return g;
        }
        let mean = self.params.a * prev[0];
        let q = gaussian_density(x[0], mean, self.params.sigma_w);
        let r = gaussian_density(x[0], mean, self.proposal_inflation * self.params.sigma_w);
        q * g / r
    }

    fn likelihood(&self, x: &[f64], k: usize) -> f64 {
        gaussian_density(self.obs(k), x[0], self.params.sigma_v)
    }

    fn likelihood_bound(&self) -> f64 {
        1.0 / (self.params.sigma_v * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn is_bootstrap(&self) -> bool {
        self.proposal_inflation == 1.0
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.observations.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrace {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Exact filtered means and variances `E[x_k | y_0..y_k]`, `Var[x_k | y_0..y_k]`.
pub fn kalman_oracle(params: &LinearGaussianParams, observations: &[f64]) -> Result<KalmanTrace> {
    params.validate()?;
    let r = params.sigma_v * params.sigma_v;
    let q = params.sigma_w * params.sigma_w;
    let (mut m, mut p) = (params.m0, params.p0);
    let mut means = Vec::with_capacity(observations.len());
    let mut variances = Vec::with_capacity(observations.len());
    for (k, &y) in observations.iter().enumerate() {
        if k > 0 {
            m *= params.a;
            p = params.a * params.a * p + q;
        }
        let gain = p / (p + r);
        m += gain * (y - m);
        p *= 1.0 - gain;
        means.push(m);
        variances.push(p);
    }
    Ok(KalmanTrace { means, variances })
}

/// Parses the `k,y` observation format; `k` must run `0, 1, 2, ...`.
pub fn read_observations<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(data_err)?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["k", "y"] {
        return Err(Error::Data(format!("expected header `k,y`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut ys = Vec::new();
    for (expected, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(data_err)?;
        let k: usize = rec[0].trim().parse().map_err(|_| Error::Data(format!("bad step `{}`", &rec[0])))?;
        if k != expected {
            return Err(Error::Data(format!("expected step {expected}, got {k}")));
        }
        let y: f64 = rec[1].trim().parse().map_err(|_| Error::Data(format!("bad observation `{}`", &rec[1])))?;
        if !y.is_finite() {
            return Err(Error::Data(format!("non-finite observation at step {k}")));
        }
        ys.push(y);
    }
    Ok(ys)
}

pub fn write_observations<W: Write>(observations: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "y"]).map_err(data_err)?;
    for (k, y) in observations.iter().enumerate() {
        w.write_record([k.to_string(), y.to_string()]).map_err(data_err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

/// Self-normalizes arbitrary nonnegative weights and returns `1 / sum w^2`.
pub fn effective_sample_size(raw: &[f64]) -> Result<f64> {
    let w = normalize_weights(raw)?;
    Ok(1.0 / w.iter().map(|x| x * x).sum::<f64>())
}
