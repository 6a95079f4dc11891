//! Stable interior-exterior coupling for the time-domain Maxwell equations.
//!
//! The interior of a polyhedral domain is discretised with a centred-flux
//! discontinuous Galerkin method and advanced by the leapfrog scheme. The
//! exterior is represented exactly on the boundary by the Calderon operator,
//! discretised with boundary elements and BDF2 convolution quadrature.
//!
//! Modules follow the data flow: [`mesh`] builds the tetrahedral mesh,
//! [`dg`] assembles interior operators and the boundary space, [`bem`]
//! assembles the Laplace-domain Calderon matrix, [`cq`] turns it into
//! convolution weights, [`stepper`] runs the coupled scheme, and
//! [`harness`] holds the verification suites.

pub mod bem;
pub mod cq;
pub mod dg;
pub mod error;
pub mod export;
pub mod harness;
pub mod mesh;
pub mod quadrature;
pub mod report;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};

pub use nalgebra::Vector3;
pub use num_complex::Complex64;

/// Small 3-vector alias used throughout.
pub type Vec3 = Vector3<f64>;
