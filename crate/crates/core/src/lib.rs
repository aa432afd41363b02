//! Bethe-ansatz spectral engine for the one-particle function `g₁(k, ω)` of
//! the Lieb-Liniger gas, in thermal and post-quench stationary states.

pub mod bethe;
pub mod error;
pub mod form_factor;
pub mod linalg;
pub mod oracle;
pub mod qn;
pub mod quadrature;
pub mod sampler;
pub mod scan;
pub mod spectra;
pub mod tba;

pub use bethe::{solve_bethe, solve_bethe_from, BetheState, ModelParams};
pub use error::{Error, Result};
pub use qn::QnConfig;
