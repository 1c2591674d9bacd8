//! Python bindings for `resample_lab`.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use resample_lab::asymptotics::{self, DensityPair};
use resample_lab::filter::{self as rfilter, FilterConfig, LinearGaussian};
use resample_lab::variance::{self, CounterExampleConfig};
use resample_lab::{Error, RandomStream, SchemeId, TestFunction};

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn scheme(name: &str) -> PyResult<SchemeId> {
    name.parse().map_err(to_py)
}

fn values_function() -> TestFunction {
    TestFunction::coordinate(f64::INFINITY)
}

/// Weighted particle population with scalar or vector states.
#[pyclass(name = "ParticleSystem", module = "resample_lab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParticleSystem {
    inner: resample_lab::ParticleSystem,
}

#[pymethods]
impl PyParticleSystem {
    /// `positions` is a flat row-major list of `len * dim` coordinates;
    /// `weights` are normalized on construction.
    #[new]
    #[pyo3(signature = (positions, weights, dim = 1))]
    fn new(positions: Vec<f64>, weights: Vec<f64>, dim: usize) -> PyResult<Self> {
        let inner = resample_lab::ParticleSystem::new(dim, positions, &weights).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.inner.positions().to_vec()
    }

    fn ess(&self) -> f64 {
        self.inner.ess()
    }

    /// Weighted mean of the first coordinate.
    fn mean(&self) -> f64 {
        self.inner.estimate(&values_function())
    }

    /// Resample to `n` equally weighted particles; returns
    /// `(new_system, indices, counts)`.
    #[pyo3(signature = (scheme, n, seed = 0, stream = 0))]
    fn resample(&self, scheme: &str, n: usize, seed: u64, stream: u64) -> PyResult<(Self, Vec<usize>, Vec<usize>)> {
        let out = resample_lab::resample(self::scheme(scheme)?, &self.inner, n, &RandomStream::new(seed, stream))
            .map_err(to_py)?;
        let next = resample_lab::apply_resample(&self.inner, &out).map_err(to_py)?;
        Ok((Self { inner: next }, out.indices, out.counts))
    }

    fn __repr__(&self) -> String {
        format!("ParticleSystem(len={}, dim={}, ess={:.3})", self.inner.len(), self.inner.dim(), self.inner.ess())
    }
}

/// Resample a weight vector; returns `(indices, counts)`.
#[pyfunction]
#[pyo3(signature = (scheme, weights, n, seed = 0, stream = 0))]
fn resample(scheme: &str, weights: Vec<f64>, n: usize, seed: u64, stream: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let positions = (0..weights.len()).map(|i| i as f64).collect();
    let system = resample_lab::ParticleSystem::scalar(positions, &weights).map_err(to_py)?;
    let out = resample_lab::resample(self::scheme(scheme)?, &system, n, &RandomStream::new(seed, stream))
        .map_err(to_py)?;
    Ok((out.indices, out.counts))
}

/// Exact conditional variance of the offspring mean of `values`.
#[pyfunction]
fn conditional_variance(scheme: &str, weights: Vec<f64>, values: Vec<f64>, n: usize) -> PyResult<f64> {
    if weights.len() != values.len() {
        return Err(PyValueError::new_err("weights and values differ in length"));
    }
    let w = resample_lab::normalize_weights(&weights).map_err(to_py)?;
    if n == 0 {
        return Err(PyValueError::new_err("n must be at least 1"));
    }
    Ok(variance::exact_variance(self::scheme(scheme)?, &w, &values, n))
}

/// Monte Carlo conditional variance with exact values attached, as a dict
/// with the `VarianceReport` fields.
#[pyfunction]
#[pyo3(signature = (scheme, weights, values, n, replicates, seed = 0))]
fn conditional_variance_mc<'py>(
    py: Python<'py>,
    scheme: &str,
    weights: Vec<f64>,
    values: Vec<f64>,
    n: usize,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let scheme = self::scheme(scheme)?;
    let system = resample_lab::ParticleSystem::scalar(values, &weights).map_err(to_py)?;
    let r = py
        .detach(|| {
            variance::cond_var_mc(
                scheme,
                &system,
                &values_function(),
                n,
                replicates,
                &RandomStream::new(seed, 0),
            )
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.as_str())?;
    d.set_item("n", r.n)?;
    d.set_item("closed_form", r.closed_form)?;
    d.set_item("exact_enumeration", r.exact_enumeration)?;
    d.set_item("mc_estimate", r.mc_estimate)?;
    d.set_item("mc_stderr", r.mc_stderr)?;
    d.set_item("replicates", r.replicates)?;
    Ok(d)
}

/// Closed-form variances on the interleaved two-value system:
/// `(multinomial, residual_or_stratified, systematic)`.
#[pyfunction]
#[pyo3(signature = (omega, n, abs_f = 1.0))]
fn counterexample_analytic(omega: f64, n: usize, abs_f: f64) -> PyResult<(f64, f64, f64)> {
    let mut cfg = CounterExampleConfig::new(n, omega);
    cfg.f1 = abs_f;
    let v = variance::counterexample_analytic(&cfg).map_err(to_py)?;
    Ok((v.multinomial, v.residual_stratified, v.systematic))
}

/// The two-value system as a `ParticleSystem`. `ordering` is
/// `interleaved`, `blocked` or `permuted(<seed>)`.
#[pyfunction]
#[pyo3(signature = (omega, n, ordering = "interleaved"))]
fn make_counterexample(omega: f64, n: usize, ordering: &str) -> PyResult<PyParticleSystem> {
    let cfg = CounterExampleConfig::new(n, omega).with_ordering(ordering.parse().map_err(to_py)?);
    Ok(PyParticleSystem { inner: variance::make_counterexample(&cfg).map_err(to_py)? })
}

/// The bundled 50-step observation record of the linear-Gaussian model.
#[pyfunction]
fn reference_observations() -> Vec<f64> {
    LinearGaussian::reference().observations
}

/// Kalman filtered means and variances for the reference linear-Gaussian
/// model on `observations` (default: the bundled record).
#[pyfunction]
#[pyo3(signature = (observations = None))]
fn kalman_oracle(observations: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let obs = observations.unwrap_or_else(reference_observations);
    let t = rfilter::kalman_oracle(&LinearGaussian::reference().params, &obs).map_err(to_py)?;
    Ok((t.means, t.variances))
}

/// Bootstrap filter on the reference linear-Gaussian model. Returns a list
/// of `(k, estimate, ess, resampled)` rows.
#[pyfunction]
#[pyo3(signature = (scheme, m, n = None, horizon = None, resample_every = 1, seed = 0, observations = None))]
#[allow(clippy::too_many_arguments)]
fn run_filter(
    py: Python<'_>,
    scheme: &str,
    m: usize,
    n: Option<usize>,
    horizon: Option<usize>,
    resample_every: usize,
    seed: u64,
    observations: Option<Vec<f64>>,
) -> PyResult<Vec<(usize, f64, f64, bool)>> {
    let base = LinearGaussian::reference();
    let model = match observations {
        Some(obs) => LinearGaussian::new(base.params, obs).map_err(to_py)?,
        None => base,
    };
    let config = FilterConfig {
        m,
        n: n.unwrap_or(m),
        scheme: self::scheme(scheme)?,
        resample_every: (resample_every > 0).then_some(resample_every),
        horizon: horizon.unwrap_or(model.observations.len()),
    };
    let trace = py
        .detach(|| rfilter::run_filter(&model, &config, &[values_function()], &RandomStream::new(seed, 0)))
        .map_err(to_py)?;
    Ok(trace.rows.into_iter().map(|r| (r.k, r.estimates[0], r.ess, r.resampled)).collect())
}

fn pair(name: &str, alpha: f64) -> PyResult<DensityPair> {
    DensityPair::by_name(name, alpha).map_err(to_py)
}

fn pair_function(name: &str) -> PyResult<TestFunction> {
    match name {
        "one" => Ok(TestFunction::constant(1.0)),
        "x" => Ok(TestFunction::coordinate(1.0)),
        other => Err(PyValueError::new_err(format!("unknown test function `{other}` (expected one, x)"))),
    }
}

/// `kappa(f)` for residual resampling on a named density pair.
#[pyfunction]
#[pyo3(signature = (pair_name = "reference", alpha = 1.0, f = "x"))]
fn residual_kappa(py: Python<'_>, pair_name: &str, alpha: f64, f: &str) -> PyResult<f64> {
    let (p, f) = (pair(pair_name, alpha)?, pair_function(f)?);
    py.detach(|| asymptotics::residual_kappa(&p, &f)).map_err(to_py)
}

/// Limit of the floor sums, `nu{(1/alpha) floor(alpha g) f}`.
#[pyfunction]
#[pyo3(signature = (pair_name = "reference", alpha = 1.0, f = "one"))]
fn lemma1_target(py: Python<'_>, pair_name: &str, alpha: f64, f: &str) -> PyResult<f64> {
    let (p, f) = (pair(pair_name, alpha)?, pair_function(f)?);
    Ok(py.detach(|| asymptotics::lemma1_target(&p, &f)))
}

#[pymodule]
fn resample_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMES", SchemeId::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    m.add_class::<PyParticleSystem>()?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_variance, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_variance_mc, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(make_counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(reference_observations, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_filter, m)?)?;
    m.add_function(wrap_pyfunction!(residual_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(lemma1_target, m)?)?;
    Ok(())
}
