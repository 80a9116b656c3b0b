//! Optimal linear interpolation of integral functionals of stationary vector processes
//! observed with noise outside a union of intervals, plus minimax-robust variants.

pub mod cache;
pub mod density;
pub mod error;
pub mod estimator;
pub mod family;
pub mod grid;
pub mod linalg;
pub mod minimax;
pub mod missing;
pub mod model;
pub mod operators;
mod par;
pub mod simulation;
pub mod transform;
pub mod weight;

pub use density::{validate_density, Interpolation, SpectralDensity, ValidationReport};
pub use error::{Error, Result};
pub use estimator::{
    cross_mse, estimate, spectral_characteristic, verify_orthogonality, EstimateOptions, EstimateSolution,
    Problem,
};
pub use family::DensitySpec;
pub use grid::FrequencyGrid;
pub use missing::{Interval, MissingSet, TimeStep};
pub use operators::{assemble_system, solve_c, Mode, OperatorSystem, Regularization, SolutionC};
pub use transform::{exponential_transform, minimality_check, MinimalityReport};
pub use weight::{WeightFunction, WeightSpec};
