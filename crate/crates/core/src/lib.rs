//! Free-vibration analysis of Reissner-Mindlin plates with PHT-spline fields on fixed NURBS
//! geometry, adaptive refinement driven by a hierarchical error estimator, and MAC/FEC mode
//! tracking over a frequency band.

pub mod assembly;
pub mod discretization;
pub mod eigen;
pub mod error;
pub mod estimate;
pub mod io;
pub mod multimode;
pub mod pht;
pub mod quadrature;
pub mod spline;
pub mod sweep;
pub mod tracking;

pub use error::{PlateError, Result};
