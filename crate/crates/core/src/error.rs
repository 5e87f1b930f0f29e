//! Error type shared by all solver modules.

use crate::nonlinear_bl::ContractionReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("compatibility violated: {0}")]
    Compatibility(String),
    #[error("horizon refused: {0}")]
    Horizon(String),
    #[error("picard iteration diverged after {} iterates", .0.iterates)]
    Divergence(Box<ContractionReport>),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
