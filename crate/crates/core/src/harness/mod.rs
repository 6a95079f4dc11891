//! Verification harness: analytic oracles, interpolation operators and the
//! property studies (Calderon residual, transparency, convergence,
//! coercivity).

pub mod calderon;
pub mod coercivity;
pub mod convergence;
pub mod dipole;
pub mod energy;
pub mod interp;
pub mod transparency;
