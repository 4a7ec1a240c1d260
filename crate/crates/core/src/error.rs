use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the toolkit.
///
/// Guide, electrode and coupling indices carried by these variants are
/// 1-based, matching how the device is labelled.
#[derive(Debug, Error)]
pub enum Error {
    #[error("device spec: missing field `{0}`")]
    MissingField(&'static str),

    #[error("device spec: could not parse document: {0}")]
    Parse(String),

    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("electrode {electrode}: {value} V exceeds the ±{limit} V limit")]
    VoltageOutOfRange {
        electrode: usize,
        value: f64,
        limit: f64,
    },

    #[error("{what} index {index} out of range 1..={max}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power distribution sums to {sum}, expected 1")]
    Unnormalized { sum: f64 },

    #[error("degenerate splitting: cross-port powers vanish, reflectivity is indeterminate")]
    DegenerateSplitting,

    #[error("dip fit did not converge after {iterations} iterations (residual sum of squares {residual})")]
    FitFailure { iterations: usize, residual: f64 },

    #[error("reflectivity slice is flat (slope {slope})")]
    FlatCurve { slope: f64 },

    #[error("no lookup-map cell satisfies the leakage bound{}", describe_candidate(.best))]
    NoFeasibleCell { best: Option<Box<crate::calibration::VoltageSolution>> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_candidate(best: &Option<Box<crate::calibration::VoltageSolution>>) -> String {
    match best {
        Some(c) => format!(
            " (closest infeasible cell: v_a = {} V, v_b = {} V, eta = {}, max leakage = {}%)",
            c.v_a,
            c.v_b,
            c.eta,
            c.leakage_in1.max(c.leakage_in2)
        ),
        None => String::new(),
    }
}

impl Error {
    /// True for errors caused by malformed or out-of-contract inputs, as
    /// opposed to a computation that failed on valid inputs.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_)
                | Error::FitFailure { .. }
                | Error::DegenerateSplitting
                | Error::FlatCurve { .. }
                | Error::NoFeasibleCell { .. }
        )
    }
}
