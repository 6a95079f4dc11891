//! Sign checks of the Calderon operator in the Laplace domain and of its
//! convolution quadrature in time.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bem::{assemble_b, coercivity_probe, CoercivityProbe, ComplexFrequency, QuadratureConfig};
use crate::cq::{check_discrete_herglotz, ContourParams, HerglotzCheck};
use crate::dg::{BoundarySpace, MaterialParams};
use crate::stepper::boundary_weights;
use crate::Result;

/// Slack for quadrature and round-off in the sign checks.
pub const SIGN_TOL: f64 = 1e-8;

/// The default frequency samples.
pub fn default_frequencies() -> Vec<Complex64> {
    vec![Complex64::new(0.1, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 5.0), Complex64::new(10.0, 0.0)]
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TimeDiscreteConfig {
    pub dt: f64,
    /// Sequence length (steps `0..len`).
    pub len: usize,
    pub sequences: usize,
    /// Horizon `T` of the weight `exp(-2 t_n / T)`.
    pub horizon: f64,
}

impl Default for TimeDiscreteConfig {
    fn default() -> Self {
        TimeDiscreteConfig { dt: 0.1, len: 32, sequences: 20, horizon: 3.2 }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TimeDiscreteSample {
    pub support: usize,
    pub check: HerglotzCheck,
    /// `lhs / scale`.
    pub relative: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoercivityReport {
    pub material: MaterialParams,
    pub dim: usize,
    pub laplace: Vec<CoercivityProbe>,
    pub laplace_min: f64,
    pub time_discrete: Vec<TimeDiscreteSample>,
    pub time_discrete_min_relative: f64,
    pub passed: bool,
}

/// Laplace-domain probes over `frequencies` and the time-discrete check
/// over random sequences supported on a random prefix of `0..len`.
pub fn coercivity_report(
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
    frequencies: &[Complex64],
    trials: usize,
    seed: u64,
    td: &TimeDiscreteConfig,
) -> Result<CoercivityReport> {
    let mut laplace = Vec::new();
    for (i, &s) in frequencies.iter().enumerate() {
        let cm = assemble_b(ComplexFrequency::new(s)?, bspace, quad, material)?;
        laplace.push(coercivity_probe(&cm, trials, seed.wrapping_add(i as u64))?);
    }
    let laplace_min = laplace.iter().map(|p| p.min_quotient).fold(f64::INFINITY, f64::min);

    let n_steps = td.len.saturating_sub(1);
    let weights =
        boundary_weights(bspace, quad, material, td.dt, n_steps, &ContourParams::default_for(n_steps), usize::MAX)?;
    let dim = 2 * bspace.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7d15c);
    let mut time_discrete = Vec::new();
    for _ in 0..td.sequences {
        let support = rng.gen_range(1..=td.len);
        let seq: Vec<DVector<f64>> = (0..td.len)
            .map(|n| {
                if n < support {
                    DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))
                } else {
                    DVector::zeros(dim)
                }
            })
            .collect();
        let check = check_discrete_herglotz(&weights, &seq, td.horizon)?;
        time_discrete.push(TimeDiscreteSample { support, check, relative: check.lhs / check.scale });
    }
    let time_discrete_min_relative = time_discrete.iter().map(|t| t.relative).fold(f64::INFINITY, f64::min);
    let passed = laplace_min >= -SIGN_TOL && time_discrete_min_relative >= -SIGN_TOL;
    Ok(CoercivityReport {
        material: *material,
        dim: bspace.dim,
        laplace,
        laplace_min,
        time_discrete,
        time_discrete_min_relative,
        passed,
    })
}
