use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument fell outside its admissible interval.
    #[error("{what} = {value} is outside {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    /// A vector argument had the wrong number of entries.
    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid receiver model: {0}")]
    InvalidModel(String),

    #[error("invalid system configuration: {0}")]
    InvalidSystem(String),

    /// An operation was called outside its precondition (for example
    /// inverting the excess distribution when degree-one users exist).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A threshold search was given a bracket whose endpoints do not straddle
    /// the criterion boundary.
    #[error("bracket [{lo}, {hi}] does not straddle the criterion boundary: {reason}")]
    Bracket { lo: f64, hi: f64, reason: String },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// A configuration file failed to parse or validate.
    #[error("{}", config_message(.field, .line, .message))]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },
}

fn config_message(field: &str, line: &Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("config error at line {line} ({field}): {message}"),
        None => format!("config error ({field}): {message}"),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value,
            range: "[0, 1]",
        })
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
