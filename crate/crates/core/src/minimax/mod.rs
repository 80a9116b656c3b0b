//! Least favorable densities and minimax-robust characteristics over admissible classes.

pub mod class;
pub mod kkt;
pub mod linear;
pub mod saddle;

pub use class::{
    project_membership, ClassKind, ClassParams, ClassReferences, ClassSpec, ClassViolation, DensityClass,
    MembershipReport,
};
pub use kkt::{kkt_residuals, KktInput, KktResiduals};
pub use linear::{error_weights, linear_value, maximize_linear, maximize_linear_weights};
pub use saddle::{saddle_iterate, SaddleOptions, SaddlePoint, SaddleVerification};

#[cfg(test)]
mod tests;
