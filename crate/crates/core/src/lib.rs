//! Multi-objective physics-informed neural networks with ensemble Kalman
//! data assimilation.
//!
//! The numerical kernels are generic over [`scalar::Real`] (`f32` or
//! `f64`). The aliases below fix the scalar to `f64`, which is what the
//! experiment driver uses.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod autodiff;
pub mod driver;
pub mod enkf;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod nsga3;
pub mod observations;
pub mod problems;
pub mod scalar;

pub use error::{Error, Result};

pub type ParameterVector = autodiff::ParameterVector<f64>;
pub type ObjectiveVector = losses::ObjectiveVector<f64>;
pub type AdamState = adam::AdamState<f64>;
pub type Individual = nsga3::Individual<f64>;
pub type Population = nsga3::Population<f64>;
pub type EnsembleMatrix = enkf::EnsembleMatrix<f64>;
pub type AnalysisData = enkf::AnalysisData<f64>;
pub type ObservationErrorModel = enkf::ObservationErrorModel<f64>;
