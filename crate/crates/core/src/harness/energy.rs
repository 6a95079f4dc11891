//! Energy boundedness of the coupled scheme from a compactly supported
//! initial pulse.

use nalgebra::DVector;

use crate::bem::QuadratureConfig;
use crate::cq::ContourParams;
use crate::dg::{BoundarySpace, DgSpace, MaterialParams, OperatorSet};
use crate::mesh::build_box_mesh;
use crate::stepper::{
    boundary_weights, bump, cfl_limit, run, BoundaryMode, CoupledState, EnergyRecord, SimulationConfig, Source,
};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct StabilityConfig {
    pub divisions: usize,
    pub n_steps: usize,
    /// `dt = dt_fraction * dt_max`; above 1 the CFL guard is disabled.
    pub dt_fraction: f64,
    pub alpha: f64,
    pub material: MaterialParams,
    pub pulse_center: [f64; 3],
    pub pulse_radius: f64,
    pub pulse_polarization: [f64; 3],
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            divisions: 2,
            n_steps: 200,
            dt_fraction: 0.9,
            alpha: 1.0,
            material: MaterialParams::default(),
            pulse_center: [0.5; 3],
            pulse_radius: 0.5,
            pulse_polarization: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityReport {
    pub dt: f64,
    pub dt_max: f64,
    pub n_steps: usize,
    pub cal_e0: f64,
    /// `max_n calE_n / calE_0`; infinite after a blow-up.
    pub max_ratio: f64,
    pub final_ratio: f64,
    /// Step at which the state became non-finite.
    pub blow_up_step: Option<usize>,
    pub energy: EnergyRecord,
}

/// Coupled run on the unit cube from `E_0 = p bump(x)`, `H_0 = 0`.
pub fn stability_run(cfg: &StabilityConfig, quad: &QuadratureConfig) -> Result<StabilityReport> {
    let space = DgSpace::new(build_box_mesh([1.0; 3], [cfg.divisions; 3])?)?;
    let bspace = BoundarySpace::new(&space.surface);
    let ops = OperatorSet::assemble(&space, &bspace, cfg.material)?;
    let cfl = cfl_limit(&ops, &cfg.material);
    let dt = cfg.dt_fraction * cfl.dt_max;
    let weights = boundary_weights(
        &bspace,
        quad,
        &cfg.material,
        dt,
        cfg.n_steps,
        &ContourParams::default_for(cfg.n_steps),
        usize::MAX,
    )?;
    let c = Vec3::from(cfg.pulse_center);
    let p = Vec3::from(cfg.pulse_polarization);
    let e0 = space.interpolate(|x| p * bump(x, c, cfg.pulse_radius));
    let sim = SimulationConfig {
        material: cfg.material,
        dt,
        n_steps: cfg.n_steps,
        alpha: cfg.alpha,
        cfl_safety: 1.0,
        allow_unstable: cfg.dt_fraction > 1.0,
        boundary: BoundaryMode::Coupled,
    };
    let st = CoupledState::new(&ops, e0.clone(), DVector::zeros(e0.len()), dt)?;
    let mut energy = EnergyRecord::default();
    let result = run(&sim, &ops, st, &Source::Zero, Some(&weights), Some(cfl), |s| energy.push(s, &ops, dt));
    let blow_up_step = match result {
        Ok(_) => None,
        Err(Error::NumericalAbort(n)) => Some(n),
        Err(e) => return Err(e),
    };
    let cal_e0 = energy.samples.first().map_or(0.0, |s| s.cal_e_n);
    let (max_ratio, final_ratio) = if blow_up_step.is_some() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (energy.max_ratio(), energy.samples.last().map_or(0.0, |s| s.cal_e_n) / cal_e0)
    };
    Ok(StabilityReport { dt, dt_max: cfl.dt_max, n_steps: cfg.n_steps, cal_e0, max_ratio, final_ratio, blow_up_step, energy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_stable_run_is_bounded() {
        let cfg = StabilityConfig { divisions: 1, n_steps: 20, pulse_radius: 1.0, ..Default::default() };
        let r = stability_run(&cfg, &QuadratureConfig::default()).unwrap();
        assert!(r.cal_e0 > 0.0);
        assert_eq!(r.energy.samples.len(), 21);
        assert!(r.max_ratio <= 1.05, "{}", r.max_ratio);
        assert!(r.blow_up_step.is_none());
    }
}
