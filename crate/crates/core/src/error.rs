use thiserror::Error;

use crate::sdp::SdpCertificate;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("non-finite value in {component}")]
    NonFinite { component: String },

    #[error("point is outside the evaluable domain of {what}")]
    Domain { what: String },

    #[error("control {value} outside the admissible range |u| <= {bound}")]
    ControlRange { value: f64, bound: f64 },

    #[error("observer synthesis infeasible ({status}); worst margins {margins:?}")]
    Infeasible {
        status: String,
        margins: Vec<f64>,
        certificate: Box<SdpCertificate<f64>>,
    },

    #[error("P is numerically singular at gain recovery (condition number {condition:.3e})")]
    Conditioning { condition: f64 },

    #[error("recovered gains fail the direct matrix inequality check: max eigenvalue {max_eig:.3e} > {limit:.3e}")]
    Recovery { max_eig: f64, limit: f64 },

    #[error("critic state corrupted: {0}")]
    StateCorruption(String),

    #[error("simulation diverged at t = {time}: {component} is not finite")]
    Divergence { time: f64, component: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
