//! Calderon projector residual with an analytic interior solution.
//!
//! For a field `u` solving the time-harmonic equations in `Omega` (source
//! outside), extended by zero, the traces `phi = gamma_N u`,
//! `psi = gamma_T u` satisfy
//! `V phi + K psi = 1/2 gamma_T u` and `K phi - eps mu V psi = 1/2 gamma_N u`.

use nalgebra::DVector;
use num_complex::Complex64;

use super::dipole::{dipole_trace_data, DipoleField};
use crate::bem::{assemble_blocks, ComplexFrequency, QuadratureConfig};
use crate::dg::{BoundarySpace, MaterialParams};
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize)]
pub struct CalderonResidual {
    pub dim: usize,
    /// Relative residual of the first (tangential) row.
    pub tangential: f64,
    /// Relative residual of the second (magnetic) row.
    pub magnetic: f64,
    /// Combined relative residual.
    pub total: f64,
    /// Relative L^2 interpolation error of the boundary data.
    pub projection_error: f64,
}

/// Residual of the Galerkin Calderon identities, measured in the discrete
/// dual norm `sqrt(r^* G^{-1} r)` (`G` the L^2 Gram matrix) relative to
/// the norm of the right-hand side.
pub fn calderon_projector_residual(
    bspace: &BoundarySpace,
    dipole: &DipoleField,
    quad: &QuadratureConfig,
) -> Result<CalderonResidual> {
    let material: MaterialParams = dipole.material;
    let s = ComplexFrequency::new(dipole.s)?;
    let data = dipole_trace_data(bspace, dipole)?;
    let blocks = assemble_blocks(s, bspace, quad, &material, true, true)?;
    let (v, k) = (blocks.v.expect("v"), blocks.k.expect("k"));
    let em = Complex64::from(material.epsilon * material.mu);
    let quarter = Complex64::from(0.25);
    let rhs1 = &data.load_u * quarter;
    let rhs2 = &data.load_curl * quarter;
    let r1 = &v * &data.phi + &k * &data.psi - &rhs1;
    let r2 = &k * &data.phi - &v * &data.psi * em - &rhs2;
    let gram = bspace.gram().to_dense().map(Complex64::from);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("boundary Gram matrix".into()))?;
    let dual = |r: &DVector<Complex64>| r.dotc(&chol.solve(r)).re.max(0.0).sqrt();
    let (n1, n2) = (dual(&rhs1), dual(&rhs2));
    let (e1, e2) = (dual(&r1), dual(&r2));
    let proj = data.phi_error.max(data.psi_error);
    let rel = |e: f64, n: f64| if n > 0.0 { e / n } else { e };
    Ok(CalderonResidual {
        dim: bspace.dim,
        tangential: rel(e1, n1),
        magnetic: rel(e2, n2),
        total: rel((e1 * e1 + e2 * e2).sqrt(), (n1 * n1 + n2 * n2).sqrt()),
        projection_error: proj,
    })
}
