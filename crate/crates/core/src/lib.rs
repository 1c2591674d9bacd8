//! Particle-filter resampling: the multinomial, residual, stratified,
//! systematic and residual-stratified schemes, their exact conditional
//! variances, a bootstrap/SISR filter with a Kalman reference, and
//! large-sample experiments for residual resampling.

pub mod asymptotics;
pub mod error;
pub mod filter;
pub mod resampling;
pub mod stats;
pub mod stream;
pub mod system;
pub mod variance;

pub use asymptotics::{
    clt_experiment, floor_weight_sum, lemma1_experiment, residual_kappa, scaled_condvar_experiment,
    support_condition_estimate, CltResult, DensityPair, LimitCheckResult, ScaledVarRow,
};
pub use error::{Error, Result};
pub use filter::{
    bootstrap_step, kalman_oracle, run_filter, sisr_init, sisr_step, FilterConfig, FilterTrace, KalmanTrace, LinearGaussian,
    LinearGaussianParams, StateSpaceModel, TraceRow,
};
pub use resampling::{
    apply_resample, multinomial_resample, resample, residual_resample, residual_stratified_resample,
    stratified_resample, systematic_resample, ResampleOutput, ResidualDecomposition, SchemeId,
};
pub use stream::{uniform_draws, RandomStream};
pub use system::{inverse_cdf, normalize_weights, ParticleSystem, TestFunction};
pub use variance::{
    cond_var_mc, cond_var_multinomial, cond_var_residual, cond_var_residual_stratified, cond_var_stratified,
    cond_var_systematic_exact, counterexample_analytic, make_counterexample, CounterExampleConfig,
    CounterExampleVariances, Ordering, VarianceReport,
};
