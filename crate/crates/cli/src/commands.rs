use std::path::{Path, PathBuf};

use emcouple::bem::QuadratureConfig;
use emcouple::cq::{cq_order_checks, ContourParams};
use emcouple::dg::{check_discrete_green, BoundarySpace, DgSpace, MaterialParams, OperatorSet};
use emcouple::harness::calderon::calderon_projector_residual;
use emcouple::harness::coercivity::{coercivity_report, default_frequencies, TimeDiscreteConfig};
use emcouple::harness::convergence::{convergence_study, ConvergenceConfig, StudyKind, StudyStatus};
use emcouple::harness::dipole::DipoleField;
use emcouple::harness::energy::{stability_run, StabilityConfig};
use emcouple::mesh::{build_box_mesh, build_l_shape_mesh, read_mesh, TetMesh};
use emcouple::report::{config_hash, Report, RunManifest};
use emcouple::stepper::{
    boundary_weights, bump, cfl_limit, run, CoupledState, PulseSource, SimulationConfig, Source,
};
use emcouple::{Complex64, Error, Vec3};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, MeshSpec, RunConfig, SourceKind};

pub const SUITES: &[&str] = &["green", "coercivity", "cq", "calderon", "energy"];

/// Failure with its exit code: 1 usage/config, 2 numerical, 3 resource.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalAbort(_)
            | Error::SingularStep(_)
            | Error::ImaginaryResidue { .. }
            | Error::NonFinite(..)
            | Error::NotPositiveDefinite(_)
            | Error::Symbol { .. } => 2,
            Error::Resource(_) => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type Outcome = Result<(), Failure>;

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn load_mesh(spec: &MeshSpec) -> Result<TetMesh, Failure> {
    match spec {
        MeshSpec::Path(p) => read_mesh(p).map_err(|e| Failure::usage(format!("cannot read mesh {}: {e}", p.display()))),
        MeshSpec::Cube { divisions } => Ok(build_box_mesh([1.0; 3], [*divisions; 3])?),
        MeshSpec::LShape { divisions } => Ok(build_l_shape_mesh(2.0, 1.0, *divisions)?),
    }
}

fn finish(manifest: &mut RunManifest, dir: &Path, outcome: Outcome) -> Outcome {
    if let Err(f) = &outcome {
        manifest.exit_code = f.code;
        manifest.message = Some(f.message.clone());
    }
    manifest.outputs.push("manifest.json".into());
    if let Err(e) = manifest.write(dir.join("manifest.json")) {
        eprintln!("warning: could not write manifest: {e}");
    }
    outcome
}

pub fn cmd_run(config_path: &Path) -> Outcome {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let cfg = parse_config(&text).map_err(|e| Failure::usage(format!("{}: {e}", config_path.display())))?;
    init_threads(cfg.threads);
    create_dir(&cfg.outputs_dir)?;
    let mut manifest = RunManifest::new("run");
    manifest.config_hash = config_hash(&cfg).map_err(Failure::from)?;
    manifest.seed = cfg.seed;
    let dir = cfg.outputs_dir.clone();
    let outcome = run_inner(&cfg, &mut manifest);
    finish(&mut manifest, &dir, outcome)
}

fn run_inner(cfg: &RunConfig, manifest: &mut RunManifest) -> Outcome {
    let material = MaterialParams::new(cfg.epsilon, cfg.mu)?;
    let mesh = load_mesh(&cfg.mesh)?;
    manifest.mesh_hash = mesh.hash();
    let (space, bspace, ops) = manifest.phase("assembly", || -> Result<_, Error> {
        let space = DgSpace::new(mesh)?;
        let bspace = BoundarySpace::new(&space.surface);
        let ops = OperatorSet::assemble(&space, &bspace, material)?;
        Ok((space, bspace, ops))
    })?;
    let cfl = manifest.phase("cfl", || cfl_limit(&ops, &material));
    let dt = cfg.dt.unwrap_or(cfg.cfl_safety * cfl.dt_max);
    let sim = SimulationConfig {
        material,
        dt,
        n_steps: cfg.n_steps,
        alpha: cfg.alpha,
        cfl_safety: cfg.cfl_safety,
        allow_unstable: cfg.allow_unstable,
        boundary: cfg.boundary,
    };
    sim.validate()?;
    if !cfg.allow_unstable && dt > cfg.cfl_safety * cfl.dt_max {
        return Err(Error::Cfl { dt, dt_max: cfg.cfl_safety * cfl.dt_max }.into());
    }

    let pulse = PulseSource {
        center: cfg.source.center,
        radius: cfg.source.radius,
        polarization: cfg.source.polarization,
        omega: cfg.source.omega,
        t0: cfg.source.t0,
        width: cfg.source.width,
    };
    let n = space.total_dofs();
    let (e0, source) = match cfg.source.kind {
        SourceKind::Zero => (DVector::zeros(n), Source::Zero),
        SourceKind::Current => (DVector::zeros(n), Source::pulse(&space, &ops, pulse)?),
        SourceKind::Pulse => {
            let c = Vec3::from(pulse.center);
            if !space.surface.contains(c) || space.surface.distance_to(c) + 1e-12 < pulse.radius {
                return Err(Failure::usage("the initial pulse must be supported inside the domain"));
            }
            let p = Vec3::from(pulse.polarization);
            (space.interpolate(|x| p * bump(x, c, pulse.radius)), Source::Zero)
        }
    };

    let weights = match cfg.boundary {
        emcouple::stepper::BoundaryMode::Reflective => None,
        emcouple::stepper::BoundaryMode::Coupled => {
            let points = cfg.contour_points.unwrap_or(2 * cfg.n_steps.max(1));
            let params = ContourParams::balanced(cfg.n_steps, points);
            let cap = cfg.memory_cap_mb.saturating_mul(1 << 20);
            Some(manifest.phase("weights", || {
                boundary_weights(&bspace, &QuadratureConfig::default(), &material, dt, cfg.n_steps, &params, cap)
            })?)
        }
    };
    let state = CoupledState::new(&ops, e0, DVector::zeros(n), dt)?;
    let out = manifest.phase("stepping", || run(&sim, &ops, state, &source, weights.as_ref(), Some(cfl), |_| {}))?;
    out.energy.write_csv(cfg.outputs_dir.join("energy.csv"))?;
    manifest.outputs.push("energy.csv".into());
    println!(
        "run: {} steps, dt = {dt:e} (dt_max {:e}), max calE_n / calE_0 = {}",
        cfg.n_steps,
        cfl.dt_max,
        out.energy.max_ratio()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct GreenBody {
    divisions: usize,
    pairs: usize,
    max_residual: f64,
    tolerance: f64,
}

#[derive(serde::Serialize)]
struct CalderonBody {
    divisions: Vec<usize>,
    residuals: Vec<f64>,
    factors: Vec<f64>,
    required_factor: f64,
}

#[derive(serde::Serialize)]
struct CqBody {
    checks: Vec<emcouple::cq::CqOrderCheck>,
    band: [f64; 2],
}

fn cube_spaces(n: usize) -> Result<(DgSpace, BoundarySpace), Failure> {
    let space = DgSpace::new(build_box_mesh([1.0; 3], [n; 3])?)?;
    let bspace = BoundarySpace::new(&space.surface);
    Ok((space, bspace))
}

fn write_report<T: serde::Serialize>(
    dir: &Path,
    manifest: &mut RunManifest,
    suite: &str,
    passed: bool,
    body: T,
) -> Result<(), Failure> {
    let report = Report {
        suite: suite.to_string(),
        passed,
        config_hash: manifest.config_hash.clone(),
        mesh_hash: manifest.mesh_hash.clone(),
        seed: manifest.seed,
        body,
    };
    let name = format!("report-{suite}.json");
    report.write(dir.join(&name))?;
    manifest.outputs.push(name);
    Ok(())
}

pub fn cmd_verify(suite: &str, out: &Path, seed: u64) -> Outcome {
    if !SUITES.contains(&suite) {
        return Err(Failure::usage(format!("unknown suite '{suite}'; valid suites: {}", SUITES.join(", "))));
    }
    create_dir(out)?;
    let mut manifest = RunManifest::new(&format!("verify {suite}"));
    manifest.seed = seed;
    manifest.config_hash = config_hash(&(suite, seed)).map_err(Failure::from)?;
    let outcome = verify_inner(suite, out, seed, &mut manifest);
    finish(&mut manifest, out, outcome)
}

fn verify_inner(suite: &str, out: &Path, seed: u64, manifest: &mut RunManifest) -> Outcome {
    let quad = QuadratureConfig::default();
    let material = MaterialParams::default();
    let passed = match suite {
        "green" => {
            let (space, _) = cube_spaces(2)?;
            manifest.mesh_hash = space.mesh.hash();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = space.total_dofs();
            let mut max_residual: f64 = 0.0;
            for _ in 0..10 {
                let u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                max_residual = max_residual.max(check_discrete_green(&space, &u, &w)?);
            }
            let body = GreenBody { divisions: 2, pairs: 10, max_residual, tolerance: 1e-10 };
            let passed = max_residual <= body.tolerance;
            println!("green: max residual {max_residual:e}");
            write_report(out, manifest, suite, passed, body)?;
            passed
        }
        "coercivity" => {
            let (space, bspace) = cube_spaces(2)?;
            manifest.mesh_hash = space.mesh.hash();
            let r = manifest.phase("coercivity", || {
                coercivity_report(&bspace, &quad, &material, &default_frequencies(), 50, seed, &TimeDiscreteConfig::default())
            })?;
            println!("coercivity: laplace min {:e}, time-discrete min {:e}", r.laplace_min, r.time_discrete_min_relative);
            let passed = r.passed;
            write_report(out, manifest, suite, passed, r)?;
            passed
        }
        "cq" => {
            let checks = cq_order_checks(&[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0])?;
            let band = [1.8, 2.2];
            let passed = checks.iter().all(|c| c.orders.iter().all(|p| (band[0]..=band[1]).contains(p)));
            for c in &checks {
                println!("cq: {}: orders {:?}", c.name, c.orders);
            }
            write_report(out, manifest, suite, passed, CqBody { checks, band })?;
            passed
        }
        "calderon" => {
            let dipole = DipoleField {
                source: Vec3::new(3.0, 0.0, 0.0),
                moment: Vec3::new(0.0, 0.0, 1.0),
                s: Complex64::new(2.0, 0.0),
                material,
            };
            let divisions = vec![1, 2, 4];
            let mut residuals = Vec::new();
            for &n in &divisions {
                let (space, bspace) = cube_spaces(n)?;
                manifest.mesh_hash = space.mesh.hash();
                residuals.push(calderon_projector_residual(&bspace, &dipole, &quad)?.total);
            }
            let factors: Vec<f64> = residuals.windows(2).map(|r| r[0] / r[1]).collect();
            println!("calderon: residuals {residuals:?}, factors {factors:?}");
            let passed = factors.iter().all(|&f| f >= 1.5);
            write_report(out, manifest, suite, passed, CalderonBody { divisions, residuals, factors, required_factor: 1.5 })?;
            passed
        }
        "energy" => {
            let cfg = StabilityConfig::default();
            manifest.mesh_hash = build_box_mesh([1.0; 3], [cfg.divisions; 3])?.hash();
            let r = manifest.phase("stepping", || stability_run(&cfg, &quad))?;
            r.energy.write_csv(out.join("energy.csv"))?;
            manifest.outputs.push("energy.csv".into());
            println!("energy: {} steps at dt = {:e}, max calE_n / calE_0 = {}", r.n_steps, r.dt, r.max_ratio);
            let passed = r.max_ratio <= 1.05;
            write_report(out, manifest, suite, passed, r)?;
            passed
        }
        _ => unreachable!("suite names checked"),
    };
    if passed {
        Ok(())
    } else {
        Err(Failure { code: 2, message: format!("verify {suite}: gated check failed") })
    }
}

/// `levels` is a count (`3`) or an explicit list whose last entry is the
/// reference (`2,3,4,6`).
pub fn parse_levels(kind: StudyKind, levels: &str) -> Result<(Vec<usize>, usize), Failure> {
    let bad = || Failure::usage(format!("--levels expects a count or a comma-separated list, got {levels:?}"));
    if levels.contains(',') {
        let v: Vec<usize> = levels.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let (reference, rest) = v.split_last().ok_or_else(bad)?;
        return Ok((rest.to_vec(), *reference));
    }
    let k: usize = levels.trim().parse().map_err(|_| bad())?;
    Ok(match kind {
        StudyKind::Time => ((0..k).map(|i| 1 << i).collect(), 1 << k),
        StudyKind::Space | StudyKind::Joint => ((2..k + 2).collect(), 2 * k),
    })
}

pub struct ConvergenceArgs {
    pub kind: String,
    pub levels: String,
    pub t_final: Option<f64>,
    pub divisions: Option<usize>,
    pub memory_cap_mb: Option<usize>,
    pub out: PathBuf,
}

pub fn cmd_convergence(args: &ConvergenceArgs) -> Outcome {
    let kind = StudyKind::parse(&args.kind).map_err(Failure::from)?;
    let mut cfg = ConvergenceConfig::new(kind);
    let (levels, reference) = parse_levels(kind, &args.levels)?;
    if levels.len() < 3 {
        return Err(Failure::usage(format!("need >= 3 levels, got {}", levels.len())));
    }
    cfg.levels = levels;
    cfg.reference = reference;
    if let Some(t) = args.t_final {
        cfg.t_final = t;
    }
    if let Some(d) = args.divisions {
        cfg.divisions = d;
    }
    if let Some(m) = args.memory_cap_mb {
        cfg.memory_cap = m.saturating_mul(1 << 20);
    }
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new(&format!("convergence {}", kind.name()));
    manifest.config_hash = config_hash(&cfg).map_err(Failure::from)?;
    let out = args.out.clone();
    let outcome = (|| {
        let r = manifest.phase("study", || convergence_study(&cfg, &QuadratureConfig::default()))?;
        let csv = format!("convergence-{}.csv", kind.name());
        std::fs::write(out.join(&csv), r.to_csv()).map_err(Error::from)?;
        manifest.outputs.push(csv);
        println!(
            "convergence {}: params {:?} errors {:?} fitted order {:.3} (target {} +- {}) {:?} {}",
            kind.name(),
            r.params,
            r.errors,
            r.fitted_order,
            r.target_order,
            r.tolerance,
            r.status,
            r.note
        );
        let status = r.status;
        write_report(&out, &mut manifest, &format!("convergence-{}", kind.name()), status != StudyStatus::Fail, r)?;
        match status {
            StudyStatus::Fail => Err(Failure { code: 2, message: "convergence order outside the target band".into() }),
            _ => Ok(()),
        }
    })();
    finish(&mut manifest, &out, outcome)
}
