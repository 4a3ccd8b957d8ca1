//! Curvature-dimension conditions, optimal transport and Poincaré
//! certificates on finite metric measure spaces.

pub mod cd_verify;
pub mod entropy;
pub mod error;
pub mod examples;
pub mod geodesics;
pub mod poincare;
pub mod space;
pub mod space_file;
pub mod transport;
pub mod uniqueness;

pub use error::{Error, Result};
pub use space::FiniteMetricMeasureSpace;
