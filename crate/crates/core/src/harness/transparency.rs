//! Transparency of the coupled boundary: the coupled run on a box is
//! compared with a plain dG run on an enlarged box, valid until waves
//! reflected at the outer boundary re-enter.

use nalgebra::DVector;
use std::collections::HashMap;

use crate::bem::QuadratureConfig;
use crate::cq::ContourParams;
use crate::dg::{dof, BoundarySpace, DgSpace, MaterialParams, OperatorSet};
use crate::mesh::build_box_mesh_at;
use crate::stepper::{
    boundary_weights, bump, cfl_limit, run, BoundaryMode, CoupledState, SimulationConfig, Source,
};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TransparencyConfig {
    /// `Omega = [0, 1]^3` with `divisions` cells per axis.
    pub divisions: usize,
    /// Extra cells on every side of the enlarged box; their width must
    /// exceed `t_obs / sqrt(eps mu)`.
    pub margin_cells: usize,
    pub material: MaterialParams,
    /// `dt = cfl_fraction * dt_max` (smaller of the two meshes).
    pub cfl_fraction: f64,
    pub t_obs: f64,
    pub alpha: f64,
    pub pulse_center: [f64; 3],
    pub pulse_radius: f64,
    pub pulse_polarization: [f64; 3],
}

impl Default for TransparencyConfig {
    fn default() -> Self {
        TransparencyConfig {
            divisions: 2,
            margin_cells: 2,
            material: MaterialParams::default(),
            cfl_fraction: 0.9,
            t_obs: 0.75,
            alpha: 1.0,
            pulse_center: [0.5; 3],
            pulse_radius: 0.5,
            pulse_polarization: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TransparencyReport {
    pub divisions: usize,
    pub h: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// `dist(Gamma, outer boundary) * sqrt(eps mu)`.
    pub causality_bound: f64,
    pub times: Vec<f64>,
    /// `||E_coupled - E_ref|| / ||E_ref||` on `Omega` per step.
    pub coupled_error: Vec<f64>,
    /// Same for the reflective closure `phi = psi = 0`.
    pub reflective_error: Vec<f64>,
    /// First step whose boundary solve returned nonzero data; `E^k` for
    /// `k <= contact_step` is untouched by the boundary.
    pub contact_step: Option<usize>,
    pub pre_contact_max_error: f64,
    pub post_contact_max_coupled: f64,
    pub post_contact_max_reflective: f64,
}

/// For every dof of `small`, the matching dof of `big` (same vertex
/// positions). Every tet of `small` must be a tet of `big`.
pub fn embed_dofs(small: &DgSpace, big: &DgSpace, tol: f64) -> Result<Vec<usize>> {
    let key = |x: Vec3| [x.x, x.y, x.z].map(|c| (c / tol).round() as i64);
    let mut vertex_of: HashMap<[i64; 3], usize> = HashMap::new();
    for (i, &v) in big.mesh.vertices.iter().enumerate() {
        vertex_of.insert(key(v), i);
    }
    let mut tet_of: HashMap<[usize; 4], usize> = HashMap::new();
    for (t, tet) in big.mesh.tets.iter().enumerate() {
        let mut s = *tet;
        s.sort_unstable();
        tet_of.insert(s, t);
    }
    let mut map = vec![0; small.total_dofs()];
    for (t, tet) in small.mesh.tets.iter().enumerate() {
        let verts = tet.map(|v| vertex_of.get(&key(small.mesh.vertices[v])).copied());
        if verts.iter().any(Option::is_none) {
            return Err(Error::Structure(format!("tet {t} of the inner mesh has a vertex missing from the outer mesh")));
        }
        let verts = verts.map(|v| v.expect("checked"));
        let mut s = verts;
        s.sort_unstable();
        let big_t = *tet_of
            .get(&s)
            .ok_or_else(|| Error::Structure(format!("tet {t} of the inner mesh is not a tet of the outer mesh")))?;
        for (a, &gv) in verts.iter().enumerate() {
            let b = big.local_index(big_t, gv).expect("vertex of matched tet");
            for c in 0..3 {
                map[dof(t, a, c)] = dof(big_t, b, c);
            }
        }
    }
    Ok(map)
}

fn initial_field(space: &DgSpace, cfg: &TransparencyConfig) -> DVector<f64> {
    let c = Vec3::from(cfg.pulse_center);
    let p = Vec3::from(cfg.pulse_polarization);
    space.interpolate(|x| p * bump(x, c, cfg.pulse_radius))
}

/// Coupled, reflective and enlarged-box runs with identical initial data
/// `E_0 = p bump(x)`, `H_0 = 0`.
pub fn transparency_test(cfg: &TransparencyConfig, quad: &QuadratureConfig) -> Result<TransparencyReport> {
    let n = cfg.divisions;
    if n == 0 || cfg.margin_cells == 0 {
        return Err(Error::InvalidArgument("divisions and margin_cells must be positive".into()));
    }
    let h = 1.0 / n as f64;
    let margin = cfg.margin_cells as f64 * h;
    let causality_bound = margin * (cfg.material.epsilon * cfg.material.mu).sqrt();
    if !(cfg.t_obs > 0.0) || cfg.t_obs >= causality_bound {
        return Err(Error::InvalidArgument(format!(
            "T_obs = {} must lie in (0, {causality_bound}) so that the reference stays free of outer reflections",
            cfg.t_obs
        )));
    }
    let c = Vec3::from(cfg.pulse_center);
    let small = DgSpace::new(build_box_mesh_at(Vec3::zeros(), [1.0; 3], [n; 3])?)?;
    if small.surface.contains(c) && small.surface.distance_to(c) + 1e-12 < cfg.pulse_radius {
        return Err(Error::InvalidArgument("the initial pulse must be supported inside the domain".into()));
    }
    let m = cfg.margin_cells;
    let big = DgSpace::new(build_box_mesh_at(Vec3::repeat(-margin), [1.0 + 2.0 * margin; 3], [n + 2 * m; 3])?)?;
    let bspace = BoundarySpace::new(&small.surface);
    let big_bspace = BoundarySpace::new(&big.surface);
    let ops = OperatorSet::assemble(&small, &bspace, cfg.material)?;
    let big_ops = OperatorSet::assemble(&big, &big_bspace, cfg.material)?;
    let (cfl_small, cfl_big) = (cfl_limit(&ops, &cfg.material), cfl_limit(&big_ops, &cfg.material));
    let dt_max = cfl_small.dt_max.min(cfl_big.dt_max);
    let n_steps = (cfg.t_obs / (cfg.cfl_fraction * dt_max)).ceil() as usize;
    let dt = cfg.t_obs / n_steps as f64;
    let embed = embed_dofs(&small, &big, 1e-9 * h)?;

    let e0 = initial_field(&small, cfg);
    let mut e0_big = DVector::zeros(big.total_dofs());
    for (i, &j) in embed.iter().enumerate() {
        e0_big[j] = e0[i];
    }
    let sim = SimulationConfig {
        material: cfg.material,
        dt,
        n_steps,
        alpha: cfg.alpha,
        cfl_safety: 1.0,
        allow_unstable: false,
        boundary: BoundaryMode::Reflective,
    };

    let mut reference: Vec<DVector<f64>> = Vec::with_capacity(n_steps + 1);
    let st = CoupledState::new(&big_ops, e0_big.clone(), DVector::zeros(e0_big.len()), dt)?;
    run(&sim, &big_ops, st, &Source::Zero, None, Some(cfl_big), |s| {
        reference.push(DVector::from_fn(embed.len(), |i, _| s.e[embed[i]]));
    })?;

    let mass = &ops.mass;
    let rel_error = |e: &DVector<f64>, k: usize| {
        let r = &reference[k];
        let nr = mass.norm_sq(r).max(0.0).sqrt();
        let d = mass.norm_sq(&(e - r)).max(0.0).sqrt();
        if nr > 0.0 {
            d / nr
        } else {
            d
        }
    };

    let weights = boundary_weights(
        &bspace,
        quad,
        &cfg.material,
        dt,
        n_steps,
        &ContourParams::default_for(n_steps),
        usize::MAX,
    )?;
    let mut coupled_error = Vec::with_capacity(n_steps + 1);
    let mut contact_step = None;
    let st = CoupledState::new(&ops, e0.clone(), DVector::zeros(e0.len()), dt)?;
    run(&SimulationConfig { boundary: BoundaryMode::Coupled, ..sim }, &ops, st, &Source::Zero, Some(&weights), Some(cfl_small), |s| {
        coupled_error.push(rel_error(&s.e, s.n));
        if contact_step.is_none() && s.n > 0 {
            let nonzero = |v: &DVector<f64>| v.iter().any(|&x| x != 0.0);
            if nonzero(&s.phi_history[s.n - 1]) || nonzero(s.psi()) {
                contact_step = Some(s.n - 1);
            }
        }
    })?;

    let mut reflective_error = Vec::with_capacity(n_steps + 1);
    let st = CoupledState::new(&ops, e0.clone(), DVector::zeros(e0.len()), dt)?;
    run(&sim, &ops, st, &Source::Zero, None, Some(cfl_small), |s| reflective_error.push(rel_error(&s.e, s.n)))?;

    let split = contact_step.map_or(n_steps + 1, |k| k + 1);
    let max = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);
    Ok(TransparencyReport {
        divisions: n,
        h,
        dt,
        n_steps,
        causality_bound,
        times: (0..=n_steps).map(|k| k as f64 * dt).collect(),
        pre_contact_max_error: max(&coupled_error[..split]),
        post_contact_max_coupled: max(&coupled_error[split..]),
        post_contact_max_reflective: max(&reflective_error[split..]),
        coupled_error,
        reflective_error,
        contact_step,
    })
}
