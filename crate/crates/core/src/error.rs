use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("mode size mismatch: expected {expected:?}, found {found:?}")]
    ModeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("dense size {size} exceeds the cap of {cap} entries")]
    SizeCap { size: usize, cap: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("spectrum enclosure [{lower}, {upper}] is not contained in the positive half line")]
    SpectrumNotPositive { lower: f64, upper: f64 },

    #[error("spectrum [{lower}, {upper}] lies outside the exponential-sum interval [1, {r_cond}]")]
    IntervalViolation { lower: f64, upper: f64, r_cond: f64 },

    #[error("requested accuracy {requested:e} is below the attainable floor {attainable:e}")]
    AccuracyFloor { requested: f64, attainable: f64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("gamma {gamma} is below the exit-rate bound {bound}")]
    GammaTooSmall { gamma: f64, bound: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("iteration diverges: step {0} exceeded the bound of a contractive splitting")]
    Divergence(usize),

    #[error(
        "TT rank of the iteration matrix reached the cap {max_rank} with truncation error \
         {error:e}; try a larger gamma"
    )]
    RankExplosion { max_rank: usize, error: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the numerical method rather than by the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::SpectrumNotPositive { .. }
            | Error::IntervalViolation { .. }
            | Error::AccuracyFloor { .. }
            | Error::Singular(_)
            | Error::Divergence(_)
            | Error::RankExplosion { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
