//! Numerical toolkit for one-dimensional diffusions dX = dB − q(X)dt whose
//! boundary at +∞ is an entrance boundary.
//!
//! Three independent routes are provided for the same quantities: overflow-safe
//! quadrature ([`quad`]), Euler–Maruyama simulation ([`sde`], [`stats`]) and a
//! Sturm–Liouville solve of the killed generator ([`spectral`]).

pub mod error;
pub(crate) mod hform;
pub mod model;
pub mod numerics;
pub mod quad;
pub mod sde;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use model::DriftModel;
pub use quad::{PotentialTables, TableOptions};
