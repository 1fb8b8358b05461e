use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the samkit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bid price must be nonnegative, got {0}")]
    NegativeBid(f64),

    #[error("predicted CVR must lie in [0, 1], got {0}")]
    CvrOutOfRange(f64),

    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },

    #[error("invalid {what}: {why}")]
    InvalidParameter { what: &'static str, why: String },

    #[error("dimension mismatch: {left} vs {right} ({context})")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("margin is undefined for campaign {campaign}: every repetition produced zero cost")]
    UndefinedMargin { campaign: String },

    #[error("correlation series must have at least 3 points, got {0}")]
    SeriesTooShort(usize),

    #[error("campaign {campaign} has no logged conversions in its training slice; cannot derive an eCPA payoff")]
    ZeroConversions { campaign: String },

    #[error("every campaign produced an undefined margin; nothing to select")]
    AllCampaignsUndefined,

    #[error("split leaves campaign {campaign} with an empty {side} slice")]
    EmptySplit { campaign: String, side: &'static str },

    #[error("log contains no valid records ({rejected} rejected)")]
    NoValidRecords { rejected: u64 },

    #[error("config field `{field}`: {why}")]
    Config { field: String, why: String },

    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what,
            why: why.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, why: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            why: why.into(),
        }
    }
}
