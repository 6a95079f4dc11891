//! Self-convergence studies of the coupled scheme in space, time or both:
//! each level is compared with a finer reference run at a common final
//! time, and the observed order is fitted on log-log data.

use nalgebra::DVector;

use crate::bem::QuadratureConfig;
use crate::cq::ContourParams;
use crate::dg::{BoundarySpace, DgSpace, MaterialParams, OperatorSet};
use crate::mesh::{barycentric, build_box_mesh, TetMesh};
use crate::quadrature::tet_rule_collapsed;
use crate::stepper::{boundary_weights, bump, cfl_limit, run, BoundaryMode, CoupledState, SimulationConfig, Source};
use crate::{Error, Result, Vec3};

/// Uniform bins over the bounding box for point location.
pub struct PointLocator<'a> {
    mesh: &'a TetMesh,
    lo: Vec3,
    cell: Vec3,
    dims: [usize; 3],
    bins: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a TetMesh) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &mesh.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let per_axis = ((mesh.n_tets() as f64).cbrt().ceil() as usize).max(1);
        let dims = [per_axis; 3];
        let cell = (hi - lo).map(|e| e.max(1e-300) / per_axis as f64);
        let mut bins = vec![Vec::new(); per_axis.pow(3)];
        let mut loc = PointLocator { mesh, lo, cell, dims, bins: Vec::new() };
        for t in 0..mesh.n_tets() {
            let p = mesh.tet_points(t);
            let (mut a, mut b) = (p[0], p[0]);
            for q in &p[1..] {
                a = a.inf(q);
                b = b.sup(q);
            }
            let (ia, ib) = (loc.bin_index(a), loc.bin_index(b));
            for k in ia[2]..=ib[2] {
                for j in ia[1]..=ib[1] {
                    for i in ia[0]..=ib[0] {
                        bins[(k * dims[1] + j) * dims[0] + i].push(t);
                    }
                }
            }
        }
        loc.bins = bins;
        loc
    }

    fn bin_index(&self, x: Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| (((x[a] - self.lo[a]) / self.cell[a]).floor().max(0.0) as usize).min(self.dims[a] - 1))
    }

    /// Tet containing `x` (barycentric coordinates `>= -tol`), preferring
    /// the one with the largest minimum coordinate.
    pub fn locate(&self, x: Vec3, tol: f64) -> Option<(usize, [f64; 4])> {
        let i = self.bin_index(x);
        let bin = &self.bins[(i[2] * self.dims[1] + i[1]) * self.dims[0] + i[0]];
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &t in bin {
            let l = barycentric(self.mesh.tet_points(t), x);
            let m = l.iter().cloned().fold(f64::INFINITY, f64::min);
            if m >= -tol && best.map_or(true, |b| m > b.2) {
                best = Some((t, l, m));
            }
        }
        best.map(|(t, l, _)| (t, l))
    }
}

/// `(E, H)` at a common time on some mesh.
pub struct FieldSnapshot<'a> {
    pub space: &'a DgSpace,
    pub e: DVector<f64>,
    pub h: DVector<f64>,
}

/// `sqrt(eps |E_a - E_b|^2 + mu |H_a - H_b|^2)` and the same norm of `b`,
/// integrated over the tets of `b`'s mesh (with `n^3` points each); `a` is
/// evaluated by point location when the meshes differ.
pub fn field_difference(a: &FieldSnapshot, b: &FieldSnapshot, material: &MaterialParams, n: usize) -> (f64, f64) {
    let (pts, wts) = tet_rule_collapsed(n);
    let same = std::ptr::eq(a.space, b.space);
    let locator = (!same).then(|| PointLocator::new(&a.space.mesh));
    let (mut diff, mut norm) = (0.0, 0.0);
    for t in 0..b.space.n_tets() {
        let p = b.space.mesh.tet_points(t);
        let vol = b.space.volume(t);
        for (l, w) in pts.iter().zip(&wts) {
            let (eb, hb) = (b.space.eval(&b.e, t, *l), b.space.eval(&b.h, t, *l));
            let (ea, ha) = match &locator {
                None => (a.space.eval(&a.e, t, *l), a.space.eval(&a.h, t, *l)),
                Some(loc) => {
                    let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2] + p[3] * l[3];
                    let (ta, la) = loc.locate(x, 1e-10).expect("point inside the coarse mesh");
                    (a.space.eval(&a.e, ta, la), a.space.eval(&a.h, ta, la))
                }
            };
            let wv = w * vol;
            diff += wv * (material.epsilon * (ea - eb).norm_squared() + material.mu * (ha - hb).norm_squared());
            norm += wv * (material.epsilon * eb.norm_squared() + material.mu * hb.norm_squared());
        }
    }
    (diff.sqrt(), norm.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Space,
    Time,
    Joint,
}

impl StudyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(StudyKind::Space),
            "time" => Ok(StudyKind::Time),
            "joint" => Ok(StudyKind::Joint),
            _ => Err(Error::InvalidArgument(format!("unknown study kind {s:?}; expected space, time or joint"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Space => "space",
            StudyKind::Time => "time",
            StudyKind::Joint => "joint",
        }
    }

    /// Expected order in unsquared field norms with tolerance.
    pub fn target(&self) -> (f64, f64) {
        match self {
            StudyKind::Time => (2.0, 0.3),
            StudyKind::Space | StudyKind::Joint => (1.0, 0.3),
        }
    }
}

/// Shape of the initial `E`, times the polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialProfile {
    /// `bump(x, center, radius)`.
    Bump,
    /// `(64 x(1-x) y(1-y) z(1-z))^2` on the unit cube, zero outside.
    Cube,
}

impl InitialProfile {
    pub fn eval(&self, x: Vec3, center: Vec3, radius: f64) -> f64 {
        match self {
            InitialProfile::Bump => bump(x, center, radius),
            InitialProfile::Cube => {
                let q = 64.0 * x.iter().map(|c| (c * (1.0 - c)).max(0.0)).product::<f64>();
                q * q
            }
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceConfig {
    pub kind: StudyKind,
    /// Space/joint: cube divisions per level. Time: step refinement factors
    /// (`dt = dt_0 / factor`).
    pub levels: Vec<usize>,
    /// Divisions or factor of the reference run.
    pub reference: usize,
    /// Cube divisions for the time study.
    pub divisions: usize,
    pub t_final: f64,
    pub cfl_fraction: f64,
    pub alpha: f64,
    pub material: MaterialParams,
    pub profile: InitialProfile,
    pub pulse_center: [f64; 3],
    pub pulse_radius: f64,
    pub pulse_polarization: [f64; 3],
    /// Bytes allowed for the convolution weights of one run.
    pub memory_cap: usize,
}

impl ConvergenceConfig {
    pub fn new(kind: StudyKind) -> Self {
        // a pulse kept off the boundary for the time study; the wide cube
        // profile is resolved on coarse meshes
        let (levels, reference, profile, radius) = match kind {
            StudyKind::Time => (vec![1, 2, 4], 8, InitialProfile::Bump, 0.25),
            StudyKind::Space | StudyKind::Joint => (vec![2, 3, 4], 6, InitialProfile::Cube, 0.5),
        };
        ConvergenceConfig {
            kind,
            levels,
            reference,
            divisions: 4,
            t_final: if kind == StudyKind::Time { 0.5 } else { 0.25 },
            cfl_fraction: 0.9,
            alpha: 1.0,
            material: MaterialParams::default(),
            profile,
            pulse_center: [0.5; 3],
            pulse_radius: radius,
            pulse_polarization: [0.0, 0.0, 1.0],
            memory_cap: 3 << 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub kind: StudyKind,
    /// `h` (space, joint) or `dt` (time) per level.
    pub params: Vec<f64>,
    /// Relative field error against the reference at `t_final`.
    pub errors: Vec<f64>,
    pub reference_param: f64,
    /// Slope of the least-squares line through `(log p, log e)`.
    pub fitted_order: f64,
    /// Order of the fit `e = C |p^q - p_ref^q|`, which accounts for the
    /// error of the reference itself; `None` when the data do not follow
    /// that model. Diagnostic only.
    pub reference_corrected_order: Option<f64>,
    pub target_order: f64,
    pub tolerance: f64,
    pub status: StudyStatus,
    pub note: String,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,error\n");
        for (p, e) in self.params.iter().zip(&self.errors) {
            s.push_str(&format!("{p:e},{e:e}\n"));
        }
        s
    }
}

/// Least-squares slope of `log e` against `log p`.
pub fn fit_order(params: &[f64], errors: &[f64]) -> f64 {
    let x: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Order `q` minimizing the log residual of `e = C |p^q - p_ref^q|`,
/// by golden-section search on `[0.05, 6]`; `None` if the minimum lies on
/// the edge of that range.
pub fn fit_order_with_reference(params: &[f64], errors: &[f64], p_ref: f64) -> Option<f64> {
    let cost = |q: f64| {
        let r: Vec<f64> = params
            .iter()
            .zip(errors)
            .map(|(p, e)| e.ln() - (p.powf(q) - p_ref.powf(q)).abs().ln())
            .collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    // coarse scan, then golden section around the best point
    let grid: Vec<f64> = (0..=119).map(|i| 0.05 + i as f64 * 0.05).collect();
    let best = grid.iter().cloned().min_by(|a, b| cost(*a).total_cmp(&cost(*b))).expect("grid");
    if best <= grid[0] || best >= grid[grid.len() - 1] {
        return None;
    }
    let (mut a, mut b) = ((best - 0.05).max(0.01), best + 0.05);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if cost(c) < cost(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Some(0.5 * (a + b))
}

struct LevelRun {
    space: DgSpace,
    e: DVector<f64>,
    h: DVector<f64>,
}

fn cube_space(n: usize) -> Result<(DgSpace, BoundarySpace)> {
    let space = DgSpace::new(build_box_mesh([1.0; 3], [n; 3])?)?;
    let bspace = BoundarySpace::new(&space.surface);
    Ok((space, bspace))
}

fn cfl_dt_max(n: usize, material: &MaterialParams) -> Result<f64> {
    let (space, bspace) = cube_space(n)?;
    let ops = OperatorSet::assemble(&space, &bspace, *material)?;
    Ok(cfl_limit(&ops, material).dt_max)
}

fn run_level(cfg: &ConvergenceConfig, quad: &QuadratureConfig, n: usize, n_steps: usize) -> Result<LevelRun> {
    let (space, bspace) = cube_space(n)?;
    let ops = OperatorSet::assemble(&space, &bspace, cfg.material)?;
    let dt = cfg.t_final / n_steps as f64;
    let weights =
        boundary_weights(&bspace, quad, &cfg.material, dt, n_steps, &ContourParams::default_for(n_steps), cfg.memory_cap)?;
    let c = Vec3::from(cfg.pulse_center);
    let p = Vec3::from(cfg.pulse_polarization);
    let e0 = space.interpolate(|x| p * cfg.profile.eval(x, c, cfg.pulse_radius));
    let sim = SimulationConfig {
        material: cfg.material,
        dt,
        n_steps,
        alpha: cfg.alpha,
        cfl_safety: 1.0,
        allow_unstable: false,
        boundary: BoundaryMode::Coupled,
    };
    let st = CoupledState::new(&ops, e0.clone(), DVector::zeros(e0.len()), dt)?;
    let out = run(&sim, &ops, st, &Source::Zero, Some(&weights), None, |_| {})?;
    let h = out.state.h_integer(&ops, dt);
    Ok(LevelRun { e: out.state.e, h, space })
}

fn at_level(level: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Resource(m) => Error::Resource(format!("level {level}: {m}")),
        other => other,
    }
}

fn check_levels(cfg: &ConvergenceConfig) -> Result<()> {
    if cfg.levels.len() < 3 {
        return Err(Error::InvalidArgument(format!("need >= 3 levels, got {}", cfg.levels.len())));
    }
    let mut all = cfg.levels.clone();
    all.push(cfg.reference);
    if all.iter().any(|&l| l == 0) {
        return Err(Error::InvalidArgument("levels must be positive".into()));
    }
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("degenerate levels: two consecutive levels coincide".into()));
    }
    if all.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("levels must increase towards the reference".into()));
    }
    if !(cfg.t_final > 0.0) || !(cfg.cfl_fraction > 0.0 && cfg.cfl_fraction <= 1.0) {
        return Err(Error::InvalidArgument("t_final must be positive and cfl_fraction in (0, 1]".into()));
    }
    Ok(())
}

/// Run the study. Every level ends at `t_final`; time steps are rounded so
/// that `t_final` is hit exactly.
pub fn convergence_study(cfg: &ConvergenceConfig, quad: &QuadratureConfig) -> Result<ConvergenceReport> {
    check_levels(cfg)?;
    let mut all = cfg.levels.clone();
    all.push(cfg.reference);
    let (params, runs): (Vec<f64>, Vec<LevelRun>) = match cfg.kind {
        StudyKind::Time => {
            let dt0 = cfg.cfl_fraction * cfl_dt_max(cfg.divisions, &cfg.material)?;
            let n0 = (cfg.t_final / dt0).ceil() as usize;
            let mut params = Vec::new();
            let mut runs = Vec::new();
            for &f in &all {
                params.push(cfg.t_final / (n0 * f) as f64);
                runs.push(run_level(cfg, quad, cfg.divisions, n0 * f).map_err(at_level(format!("dt factor {f}")))?);
            }
            (params, runs)
        }
        StudyKind::Space => {
            // the finest mesh fixes one dt for all levels
            let dt = cfg.cfl_fraction * cfl_dt_max(cfg.reference, &cfg.material)?;
            let n_steps = (cfg.t_final / dt).ceil() as usize;
            let mut params = Vec::new();
            let mut runs = Vec::new();
            for &n in &all {
                params.push(1.0 / n as f64);
                runs.push(run_level(cfg, quad, n, n_steps).map_err(at_level(format!("{n} divisions")))?);
            }
            (params, runs)
        }
        StudyKind::Joint => {
            let mut params = Vec::new();
            let mut runs = Vec::new();
            for &n in &all {
                let dt = cfg.cfl_fraction * cfl_dt_max(n, &cfg.material)?;
                params.push(1.0 / n as f64);
                runs.push(run_level(cfg, quad, n, (cfg.t_final / dt).ceil() as usize).map_err(at_level(format!("{n} divisions")))?);
            }
            (params, runs)
        }
    };
    let reference = runs.last().expect("reference run");
    let ref_snap = FieldSnapshot { space: &reference.space, e: reference.e.clone(), h: reference.h.clone() };
    let mut errors = Vec::new();
    for r in &runs[..runs.len() - 1] {
        let snap = FieldSnapshot {
            space: if cfg.kind == StudyKind::Time { &reference.space } else { &r.space },
            e: r.e.clone(),
            h: r.h.clone(),
        };
        let (d, norm) = field_difference(&snap, &ref_snap, &cfg.material, 3);
        errors.push(if norm > 0.0 { d / norm } else { d });
    }
    let p = &params[..params.len() - 1];
    let p_ref = *params.last().expect("reference");
    Ok(summarize(cfg.kind, p.to_vec(), errors, p_ref))
}

/// Fit and classify: non-monotone at the coarsest level gives
/// `Inconclusive`; any zero error is a degenerate study.
pub fn summarize(kind: StudyKind, params: Vec<f64>, errors: Vec<f64>, p_ref: f64) -> ConvergenceReport {
    let (target, tol) = kind.target();
    let mut note = String::new();
    let finite = errors.iter().all(|e| e.is_finite());
    let degenerate = errors.iter().any(|&e| e == 0.0);
    let (fitted, corrected) = if finite && !degenerate {
        (fit_order(&params, &errors), fit_order_with_reference(&params, &errors, p_ref))
    } else {
        (f64::NAN, None)
    };
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let status = if degenerate {
        note.push_str("degenerate levels: zero error");
        StudyStatus::Fail
    } else if !finite {
        note.push_str("non-finite errors");
        StudyStatus::Fail
    } else if !monotone {
        note.push_str("inconclusive: error sequence is not monotone");
        StudyStatus::Inconclusive
    } else if (fitted - target).abs() <= tol {
        StudyStatus::Pass
    } else {
        StudyStatus::Fail
    };
    ConvergenceReport {
        kind,
        params,
        errors,
        reference_param: p_ref,
        fitted_order: fitted,
        reference_corrected_order: corrected,
        target_order: target,
        tolerance: tol,
        status,
        note,
    }
}
