//! Numerical laboratory for the inviscid boundary layer created by fast
//! internal waves in a stratified Boussinesq channel.
//!
//! * [`grids`]: horizontal Fourier transforms, η- and z-grids.
//! * [`linear_bulk`]: the linear fast-wave channel and its wall traces.
//! * [`linear_bl`]: the linear boundary layer, half-line and finite-depth forms.
//! * [`nonlinear_bl`]: the nonlinear layer by frozen-transport Picard iteration.
//! * [`analytic_norms`]: analytic norms, the radius schedule and the contraction metric.

pub mod analytic_norms;
pub mod error;
pub mod grids;
pub mod linear_bl;
pub mod linear_bulk;
pub mod nonlinear_bl;

pub use error::{Error, Result};
pub use grids::{GridSpec, SpectralField2D, C64};
