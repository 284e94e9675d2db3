use thiserror::Error;

use crate::tape::TapeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("invalid box ({x}, {y}, {w}, {h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{spec} needs a running-mean tracker")]
    MissingTracker { spec: String },
    #[error("case {case}: non-finite gradient under {loss}")]
    NonFiniteGradient { case: usize, loss: String },
    #[error("unknown loss {name:?}; valid losses: {valid}")]
    UnknownLoss { name: String, valid: String },
    #[error("curves were produced with different simulation configs")]
    MismatchedConfigs,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    reason: &'static str,
) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}
