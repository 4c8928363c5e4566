//! Penalized regression splines, random effects and AR(1) errors for
//! Gaussian additive mixed models.

pub mod basis;
pub mod data_io;
pub mod error;
pub mod diagnostics;
pub mod fit;
pub mod inference;
pub(crate) mod linalg;
pub mod simulate;

pub use error::{GammError, Result};
