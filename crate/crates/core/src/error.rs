use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("all weights are zero")]
    DegenerateWeights,

    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("value {0} is outside (0, 1]")]
    OutOfRange(f64),

    #[error("ancestor index {index} out of bounds for {len} particles")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("closed forms only hold for the interleaved ordering")]
    UnsupportedOrdering,

    #[error("unknown scheme `{0}` (valid: multinomial, residual, stratified, systematic, residual-stratified)")]
    UnknownScheme(String),

    #[error("support condition violated: estimated mass {estimate} exceeds {threshold}")]
    SupportConditionViolated { estimate: f64, threshold: f64 },

    #[error("kappa denominator vanishes (resampling is asymptotically deterministic)")]
    DegenerateKappa,

    #[error("at time index {k}: {source}")]
    AtStep {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Strips any `AtStep` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateWeights | Error::DegenerateKappa | Error::SupportConditionViolated { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
