use std::fs;
use std::path::Path;

use resample_lab::asymptotics::{
    clt_experiment, lemma1_experiment, multinomial_kappa, residual_kappa, scaled_condvar_experiment,
    support_condition_estimate, DensityPair, SUPPORT_THRESHOLD,
};
use resample_lab::filter::{kalman_oracle, read_observations, run_filter, FilterConfig, LinearGaussian};
use resample_lab::variance::{
    cond_var_mc, counterexample_analytic, exact_variance, make_counterexample, CounterExampleConfig, Ordering,
};
use resample_lab::{Error, ParticleSystem, RandomStream, SchemeId, TestFunction};
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{emit, Metadata, Table};
use crate::{CliError, CounterexampleArgs, FilterArgs, GlobalArgs, PairArgs, VarianceArgs, WeightArgs};

fn base_stream(global: &GlobalArgs) -> RandomStream {
    RandomStream::new(global.seed, 0)
}

fn finish(table: &Table, meta: &Metadata, global: &GlobalArgs) -> Result<(), CliError> {
    emit(table, meta, global.output.as_deref(), global.format)
}

/// One value per nonblank line.
fn read_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| CliError::Usage(format!("{}: bad number `{l}`", path.display()))))
        .collect()
}

fn load_weights(args: &WeightArgs) -> Result<Vec<f64>, CliError> {
    let w = match &args.weights_file {
        Some(path) => read_column(path)?,
        None => args.weights.clone(),
    };
    if w.is_empty() {
        return Err(CliError::Usage("supply --weights or --weights-file".into()));
    }
    Ok(w)
}

pub fn test_function(name: &str) -> Result<TestFunction, CliError> {
    Ok(match name {
        "one" => TestFunction::constant(1.0),
        "zero" => TestFunction::constant(0.0),
        "x" => TestFunction::coordinate(1.0),
        "x2" => TestFunction::new("x2", 1.0, |x| x[0] * x[0]),
        other => {
            return Err(CliError::Usage(format!("unknown test function `{other}` (expected one of: one, zero, x, x2)")))
        }
    })
}

#[derive(Serialize)]
struct ResampleConfig<'a> {
    scheme: SchemeId,
    n: usize,
    weights: &'a [f64],
}

pub fn resample(scheme: SchemeId, weights: &WeightArgs, n: usize, global: &GlobalArgs) -> Result<(), CliError> {
    let w = load_weights(weights)?;
    let positions = (0..w.len()).map(|i| i as f64).collect();
    let system = ParticleSystem::scalar(positions, &w)?;
    let out = resample_lab::resample(scheme, &system, n, &base_stream(global))?;
    let mut table = Table::new(&["ancestor", "weight", "count", "offspring"]);
    for (i, (&weight, &count)) in system.weights().iter().zip(&out.counts).enumerate() {
        let slots: Vec<String> =
            out.indices.iter().enumerate().filter(|&(_, &a)| a == i).map(|(j, _)| j.to_string()).collect();
        table.push(vec![json!(i), json!(weight), json!(count), json!(slots.join(" "))]);
    }
    let mut meta = Metadata::new("resample", global.seed, global.format, ResampleConfig { scheme, n, weights: &w })?;
    meta.result("indices", &out.indices)?;
    meta.result("counts", &out.counts)?;
    finish(&table, &meta, global)
}

#[derive(Serialize)]
struct VarianceConfig<'a> {
    n: usize,
    replicates: usize,
    weights: &'a [f64],
    f: &'a [f64],
    counterexample: Option<&'a CounterExampleConfig>,
}

pub fn variance(args: &VarianceArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let stream = base_stream(global);
    let (system, f, n) = match &args.counterexample {
        Some(cfg) => (make_counterexample(cfg)?, cfg.test_function(), cfg.n),
        None => {
            let w = load_weights(&args.weights)?;
            let values = match &args.f_file {
                Some(path) => read_column(path)?,
                None => args.f.clone(),
            };
            if values.len() != w.len() {
                return Err(CliError::Usage(format!("{} weights but {} f values", w.len(), values.len())));
            }
            let bound = values.iter().fold(0.0f64, |b, v| b.max(v.abs()));
            let system = ParticleSystem::scalar(values, &w)?;
            (system, TestFunction::new("f", bound, |x| x[0]), args.n.unwrap_or(w.len()))
        }
    };
    let reports = SchemeId::ALL
        .iter()
        .map(|&scheme| cond_var_mc(scheme, &system, &f, n, args.replicates, &stream))
        .collect::<Result<Vec<_>, Error>>()?;
    let table = Table::from_serialized(&reports)?;
    let values = f.values(&system);
    let config = VarianceConfig {
        n,
        replicates: args.replicates,
        weights: system.weights(),
        f: &values,
        counterexample: args.counterexample.as_ref(),
    };
    let mut meta = Metadata::new("variance", global.seed, global.format, config)?;
    if let Some(cfg) = &args.counterexample {
        meta.result("analytic", analytic_or_null(cfg)?)?;
    }
    finish(&table, &meta, global)
}

fn analytic_or_null(cfg: &CounterExampleConfig) -> Result<Value, CliError> {
    match counterexample_analytic(cfg) {
        Ok(v) => Ok(serde_json::to_value(v)?),
        Err(Error::UnsupportedOrdering) => Ok(Value::Null),
        Err(e) => Err(e.into()),
    }
}

pub fn counterexample(args: &CounterexampleArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let cfg = CounterExampleConfig {
        n: args.n,
        omega: args.omega,
        x0: args.x0,
        x1: args.x1,
        f0: args.f0,
        f1: args.f1,
        ordering: args.ordering,
    };
    let system = make_counterexample(&cfg)?;
    let f = cfg.test_function();
    let values = f.values(&system);
    let analytic = match cfg.ordering {
        Ordering::Interleaved => Some(counterexample_analytic(&cfg)?),
        _ => None,
    };
    let stream = base_stream(global);
    let mut table =
        Table::new(&["scheme", "analytic", "exact", "mc_estimate", "mc_stderr", "replicates"]);
    for scheme in SchemeId::ALL {
        let closed = analytic.and_then(|a| match scheme {
            SchemeId::Multinomial => Some(a.multinomial),
            SchemeId::Residual | SchemeId::Stratified => Some(a.residual_stratified),
            SchemeId::Systematic => Some(a.systematic),
            SchemeId::ResidualStratified => None,
        });
        let exact = exact_variance(scheme, system.weights(), &values, cfg.n);
        let mc = cond_var_mc(scheme, &system, &f, cfg.n, args.replicates, &stream)?;
        table.push(vec![
            json!(scheme.as_str()),
            json!(closed),
            json!(exact),
            json!(mc.mc_estimate),
            json!(mc.mc_stderr),
            json!(args.replicates),
        ]);
    }
    let mut meta = Metadata::new("counterexample", global.seed, global.format, args)?;
    meta.result("weights", system.weights())?;
    finish(&table, &meta, global)
}

fn filter_config(args: &FilterArgs, observations: usize) -> Result<FilterConfig, CliError> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        return Ok(serde_json::from_str(&text)?);
    }
    let m = args.m;
    Ok(FilterConfig {
        m,
        n: args.n.unwrap_or(m),
        scheme: args.scheme.unwrap_or(SchemeId::Multinomial),
        resample_every: (args.resample_every > 0).then_some(args.resample_every),
        horizon: args.horizon.unwrap_or(observations),
    })
}

fn lingauss(observations: Option<&Path>) -> Result<LinearGaussian, CliError> {
    let model = LinearGaussian::reference();
    match observations {
        None => Ok(model),
        Some(path) => {
            let obs = read_observations(fs::File::open(path)?)?;
            Ok(LinearGaussian::new(model.params, obs)?)
        }
    }
}

#[derive(Serialize)]
struct FilterEcho<'a> {
    model: &'a str,
    observations: &'a [f64],
    proposal_inflation: f64,
    filter: &'a FilterConfig,
}

pub fn filter(args: &FilterArgs, global: &GlobalArgs) -> Result<(), CliError> {
    if args.model != "lingauss" {
        return Err(CliError::Usage(format!("unknown model `{}` (expected one of: lingauss)", args.model)));
    }
    let model = lingauss(args.observations.as_deref())?.with_proposal_inflation(args.inflation);
    let config = filter_config(args, model.observations.len())?;
    let functions = [TestFunction::coordinate(f64::INFINITY)];
    let trace = run_filter(&model, &config, &functions, &base_stream(global))?;
    let mut table = Table::new(&["k", "estimate_x", "ess", "resampled"]);
    for row in &trace.rows {
        table.push(vec![json!(row.k), json!(row.estimates[0]), json!(row.ess), json!(row.resampled)]);
    }
    let echo = FilterEcho {
        model: &args.model,
        observations: &model.observations,
        proposal_inflation: args.inflation,
        filter: &config,
    };
    let mut meta = Metadata::new("filter", global.seed, global.format, echo)?;
    meta.result("log_likelihood", trace.rows.iter().fold(0.0, |acc, r| acc + r.log_increment))?;
    meta.result("population", trace.rows.iter().map(|r| r.population).collect::<Vec<_>>())?;
    let kalman = kalman_oracle(&model.params, &model.observations[..config.horizon.min(model.observations.len())])?;
    meta.result("kalman_mean", kalman.means)?;
    finish(&table, &meta, global)
}

fn pair(args: &PairArgs) -> Result<DensityPair, CliError> {
    Ok(DensityPair::by_name(&args.pair, args.alpha)?)
}

pub fn lemma1(
    pair_args: &PairArgs,
    f_name: &str,
    m_grid: &[usize],
    replicates: usize,
    global: &GlobalArgs,
) -> Result<(), CliError> {
    let pair = pair(pair_args)?;
    let f = test_function(f_name)?;
    let result = lemma1_experiment(&pair, &f, m_grid, replicates, &base_stream(global))?;
    let mut table = Table::new(&["m", "n", "replicates", "estimate", "iqr", "target"]);
    for i in 0..m_grid.len() {
        table.push(vec![
            json!(result.m_grid[i]),
            json!(result.n_grid[i]),
            json!(replicates),
            json!(result.estimates[i]),
            json!(result.iqrs[i]),
            json!(result.target),
        ]);
    }
    let config = json!({ "pair": pair_args, "f": f_name, "m_grid": m_grid, "replicates": replicates });
    let mut meta = Metadata::new("asymptotics lemma1", global.seed, global.format, config)?;
    meta.result("target", result.target)?;
    meta.result("support_violation_estimate", result.support_violation_estimate)?;
    finish(&table, &meta, global)
}

pub fn kappa(
    pair_args: &PairArgs,
    f_name: &str,
    scheme: SchemeId,
    n_grid: &[usize],
    replicates: usize,
    global: &GlobalArgs,
) -> Result<(), CliError> {
    let pair = pair(pair_args)?;
    let f = test_function(f_name)?;
    let residual = residual_kappa(&pair, &f)?;
    let multinomial = multinomial_kappa(&pair, &f);
    let rows = scaled_condvar_experiment(scheme, &pair, &f, n_grid, replicates, &base_stream(global))?;
    let table = Table::from_serialized(&rows)?;
    let config = json!({
        "pair": pair_args, "f": f_name, "scheme": scheme, "n_grid": n_grid, "replicates": replicates,
    });
    let mut meta = Metadata::new("asymptotics kappa", global.seed, global.format, config)?;
    meta.result("residual_kappa", residual)?;
    meta.result("multinomial_kappa", multinomial)?;
    finish(&table, &meta, global)
}

pub fn clt(scheme: SchemeId, k: usize, n_grid: &[usize], replicates: usize, global: &GlobalArgs) -> Result<(), CliError> {
    let model = LinearGaussian::reference();
    if k >= model.observations.len() {
        return Err(CliError::Usage(format!("k must be below {}", model.observations.len())));
    }
    let kalman = kalman_oracle(&model.params, &model.observations)?;
    let f = TestFunction::coordinate(f64::INFINITY);
    let result = clt_experiment(scheme, &model, &f, k, n_grid, replicates, kalman.means[k], &base_stream(global))?;
    let table = Table::from_serialized(&result.rows)?;
    let config = json!({
        "model": "lingauss", "f": "x", "scheme": scheme, "k": k, "n_grid": n_grid, "replicates": replicates,
    });
    let mut meta = Metadata::new("asymptotics clt", global.seed, global.format, config)?;
    meta.result("reference", result.reference)?;
    meta.result("ratios", result.ratios())?;
    finish(&table, &meta, global)
}

pub fn support(pair_args: &PairArgs, samples: usize, tolerance: f64, global: &GlobalArgs) -> Result<(), CliError> {
    let pair = pair(pair_args)?;
    let estimate = support_condition_estimate(&pair, samples, tolerance, &base_stream(global))?;
    let mut table = Table::new(&["pair", "alpha", "samples", "tolerance", "estimate", "threshold", "satisfied"]);
    table.push(vec![
        json!(pair.name()),
        json!(pair.alpha()),
        json!(samples),
        json!(tolerance),
        json!(estimate),
        json!(SUPPORT_THRESHOLD),
        json!(estimate <= SUPPORT_THRESHOLD),
    ]);
    let config = json!({ "pair": pair_args, "samples": samples, "tolerance": tolerance });
    let meta = Metadata::new("asymptotics support", global.seed, global.format, config)?;
    finish(&table, &meta, global)
}
