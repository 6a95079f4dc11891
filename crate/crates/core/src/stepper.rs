//! Fully discrete coupled scheme: leapfrog in the interior, BDF2
//! convolution quadrature on the boundary, the stabilized step matrix
//! `B0 + dt G`, CFL estimation and energy bookkeeping.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::bem::{assemble_b, ComplexFrequency, QuadratureConfig};
use crate::cq::{compute_weights_matrix, ContourParams, CqWeights};
use crate::dg::{BoundarySpace, DgSpace, MaterialParams, OperatorSet};
use crate::{Error, Result, Vec3};

/// Result of the spectral-norm estimate behind the CFL bound
/// `dt ||M^{-1/2} D M^{-1/2}|| <= sqrt(eps mu)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CflEstimate {
    pub norm: f64,
    pub dt_max: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `D = 0`: no time-step restriction.
    pub unbounded: bool,
}

/// `S x` with `S = L^{-1} D L^{-T}`, `M = L L^T`.
fn apply_sym(ops: &OperatorSet, x: &DVector<f64>) -> DVector<f64> {
    ops.mass.l_solve(&ops.d.mul_vec(&ops.mass.lt_solve(x)))
}

/// Spectral norm of `S` by Lanczos iteration (three-term recurrence; the
/// extreme Ritz value stays a lower bound of the norm and converges first).
/// Stops when it changes by less than `1e-8` (relative) between checks
/// every 10 iterations, or after 500 iterations.
pub fn cfl_limit(ops: &OperatorSet, material: &MaterialParams) -> CflEstimate {
    cfl_limit_with(ops, material, 1e-8, 500)
}

pub fn cfl_limit_with(ops: &OperatorSet, material: &MaterialParams, tol: f64, max_iter: usize) -> CflEstimate {
    let n = ops.n_interior();
    let scale = (material.epsilon * material.mu).sqrt();
    let unbounded = CflEstimate { norm: 0.0, dt_max: f64::INFINITY, iterations: 0, converged: true, unbounded: true };
    if n == 0 || ops.d.triplets().all(|(_, _, v)| v == 0.0) {
        return unbounded;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    q /= q.norm();
    let mut q_prev = DVector::zeros(n);
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut beta = 0.0;
    let mut estimate = 0.0f64;
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut w = apply_sym(ops, &q);
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        w.axpy(-beta, &q_prev, 1.0);
        alphas.push(a);
        let b = w.norm();
        let exhausted = b <= 1e-14 * estimate.max(a.abs()).max(f64::MIN_POSITIVE);
        if exhausted || it % 10 == 0 || it == max_iter {
            let ritz = ritz_extreme(&alphas, &betas);
            let change = (ritz - estimate).abs();
            estimate = ritz;
            if exhausted || (it > 10 && change <= tol * ritz) {
                converged = true;
                break;
            }
        }
        betas.push(b);
        beta = b;
        q_prev = std::mem::replace(&mut q, w / b);
    }
    if estimate == 0.0 {
        return unbounded;
    }
    if !converged {
        eprintln!("warning: CFL norm estimate not converged after {it} iterations; using the current lower bound");
    }
    CflEstimate { norm: estimate, dt_max: scale / estimate, iterations: it, converged, unbounded: false }
}

/// Largest `|theta|` over the eigenvalues of the Lanczos tridiagonal.
fn ritz_extreme(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            0.0
        }
    });
    t.symmetric_eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Dense `S = L^{-1} D L^{-T}` for small meshes.
pub fn symmetric_curl_dense(ops: &OperatorSet) -> DMatrix<f64> {
    let n = ops.n_interior();
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        s.set_column(j, &apply_sym(ops, &e));
    }
    s
}

/// `P = C1^T M^{-1} C1`, exactly symmetric.
pub fn boundary_schur(ops: &OperatorSet) -> DMatrix<f64> {
    let (ni, nb) = (ops.n_interior(), ops.n_boundary());
    let c1t = ops.c1.transpose();
    let mut y = DMatrix::zeros(ni, nb);
    for k in 0..nb {
        let mut col = DVector::zeros(ni);
        for (i, v) in c1t.row(k) {
            col[i] = v;
        }
        y.set_column(k, &ops.mass.l_solve(&col));
    }
    let mut p = y.tr_mul(&y);
    for i in 0..nb {
        for j in 0..i {
            p[(i, j)] = p[(j, i)];
        }
    }
    p
}

/// `G = diag(eps^{-1} C0^T M^{-1} C0 / 2, 2 alpha mu^{-1} C1^T M^{-1} C1)`.
pub fn assemble_g(ops: &OperatorSet, material: &MaterialParams, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("stabilization alpha must be >= 0, got {alpha}")));
    }
    Ok(g_from_schur(&boundary_schur(ops), material, alpha))
}

fn g_from_schur(p: &DMatrix<f64>, material: &MaterialParams, alpha: f64) -> DMatrix<f64> {
    let nb = p.nrows();
    let mu = material.mu;
    let mut g = DMatrix::zeros(2 * nb, 2 * nb);
    // C0 = C1 / mu
    g.view_mut((0, 0), (nb, nb)).copy_from(&(p * (0.5 / (material.epsilon * mu * mu))));
    g.view_mut((nb, nb), (nb, nb)).copy_from(&(p * (2.0 * alpha / mu)));
    g
}

/// CQ weights of the Calderon matrix `B(s)` for `n_steps` steps.
pub fn boundary_weights(
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
    dt: f64,
    n_steps: usize,
    params: &ContourParams,
    memory_cap: usize,
) -> Result<CqWeights<DMatrix<f64>>> {
    let n = 2 * bspace.dim;
    compute_weights_matrix(
        |s| Ok(assemble_b(ComplexFrequency::new(s)?, bspace, quad, material)?.b),
        (n, n),
        dt,
        n_steps,
        params,
        memory_cap,
    )
}

/// Factorized step matrix `B0 + dt G`.
#[derive(Debug, Clone)]
pub struct StepOperator {
    pub b0: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub dt: f64,
    pub alpha: f64,
    /// `C1^T M^{-1} C1`, reused by the stabilizer.
    pub schur: DMatrix<f64>,
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Pivot-ratio threshold below which the step matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-14;

impl StepOperator {
    pub fn new(ops: &OperatorSet, b0: DMatrix<f64>, dt: f64, alpha: f64) -> Result<Self> {
        let nb = ops.n_boundary();
        if b0.shape() != (2 * nb, 2 * nb) {
            return Err(Error::Dimension { expected: 2 * nb, got: b0.nrows() });
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("stabilization alpha must be >= 0, got {alpha}")));
        }
        let schur = boundary_schur(ops);
        let g = g_from_schur(&schur, &ops.material, alpha);
        let matrix = &b0 + &g * dt;
        let lu = matrix.clone().lu();
        let u = lu.u();
        let d = u.diagonal().map(f64::abs);
        if d.len() > 0 {
            let (lo, hi) = (d.min(), d.max());
            if !(lo > SINGULAR_RATIO * hi) {
                return Err(Error::SingularStep(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
            }
        }
        Ok(StepOperator { b0, g, dt, alpha, schur, matrix, lu })
    }

    pub fn from_weights(ops: &OperatorSet, weights: &CqWeights<DMatrix<f64>>, alpha: f64) -> Result<Self> {
        Self::new(ops, weights.weights[0].clone(), weights.dt, alpha)
    }

    pub fn dim(&self) -> usize {
        self.b0.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu.solve(rhs).ok_or(Error::SingularStep(f64::INFINITY))
    }

    /// `||(B0 + dt G) x - b|| / ||b||`.
    pub fn residual(&self, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let r = &self.matrix * x - b;
        r.norm() / b.norm().max(f64::MIN_POSITIVE)
    }
}

/// State after `n` steps: `E^n`, `H^{n+1/2}`, `H^{n-1/2}` (for `n = 0` the
/// one-sided choice `H^{1/2}`), `psi^0..psi^n` and `phi^{1/2}..phi^{n-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub e: DVector<f64>,
    pub h_half: DVector<f64>,
    pub h_half_prev: DVector<f64>,
    pub phi_history: Vec<DVector<f64>>,
    pub psi_history: Vec<DVector<f64>>,
    pub n: usize,
    pub t: f64,
}

impl CoupledState {
    /// Start from `E^0`, `H^0` with zero boundary data.
    pub fn new(ops: &OperatorSet, e0: DVector<f64>, h0: DVector<f64>, dt: f64) -> Result<Self> {
        let ni = ops.n_interior();
        for v in [&e0, &h0] {
            if v.len() != ni {
                return Err(Error::Dimension { expected: ni, got: v.len() });
            }
        }
        let psi0 = DVector::zeros(ops.n_boundary());
        let h_half = leapfrog_halfstep_h(ops, &h0, &e0, &psi0, dt);
        Ok(CoupledState {
            e: e0,
            h_half_prev: h_half.clone(),
            h_half,
            phi_history: Vec::new(),
            psi_history: vec![psi0],
            n: 0,
            t: 0.0,
        })
    }

    pub fn zeros(ops: &OperatorSet, dt: f64) -> Self {
        let ni = ops.n_interior();
        Self::new(ops, DVector::zeros(ni), DVector::zeros(ni), dt).expect("consistent sizes")
    }

    pub fn psi(&self) -> &DVector<f64> {
        self.psi_history.last().expect("psi^0 always present")
    }

    /// `psibar^{j+1/2} = (psi^j + psi^{j+1}) / 2`.
    pub fn psibar(&self, j: usize) -> DVector<f64> {
        (&self.psi_history[j] + &self.psi_history[j + 1]) * 0.5
    }

    /// `H^n` recovered from `H^{n+1/2}`.
    pub fn h_integer(&self, ops: &OperatorSet, dt: f64) -> DVector<f64> {
        let mu = ops.material.mu;
        let f = ops.d.mul_vec(&self.e) - ops.c1.mul_vec(self.psi());
        &self.h_half - ops.mass.solve(&f) * (0.5 * dt / mu)
    }

    fn check_invariants(&self) {
        debug_assert_eq!(self.psi_history.len(), self.n + 1);
        debug_assert_eq!(self.phi_history.len(), self.n);
    }

    fn is_finite(&self) -> bool {
        self.e.iter().chain(self.h_half.iter()).chain(self.psi().iter()).all(|v| v.is_finite())
            && self.phi_history.last().map_or(true, |p| p.iter().all(|v| v.is_finite()))
    }
}

/// `mu M H' = mu M H + dt/2 (D E - C1 psi)`.
pub fn leapfrog_halfstep_h(
    ops: &OperatorSet,
    h: &DVector<f64>,
    e: &DVector<f64>,
    psi: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let f = ops.d.mul_vec(e) - ops.c1.mul_vec(psi);
    h + ops.mass.solve(&f) * (0.5 * dt / ops.material.mu)
}

/// `eps M E^{n+1} = eps M E^n - dt D H^{n+1/2} - dt C0 phi + dt MJ`, with
/// `mj` the load vector `M J^{n+1/2}`.
pub fn leapfrog_step_e(
    ops: &OperatorSet,
    e: &DVector<f64>,
    h_half: &DVector<f64>,
    phi: &DVector<f64>,
    mj: Option<&DVector<f64>>,
    dt: f64,
) -> DVector<f64> {
    let mut f = -(ops.d.mul_vec(h_half) + ops.c0.mul_vec(phi));
    if let Some(mj) = mj {
        f += mj;
    }
    e + ops.mass.solve(&f) * (dt / ops.material.epsilon)
}

/// `sum_{j<n} B_{n-j} (phi^{j+1/2}; psibar^{j+1/2})`.
pub fn history_convolution(state: &CoupledState, weights: &CqWeights<DMatrix<f64>>) -> Result<DVector<f64>> {
    let n = state.n;
    if n > weights.n_steps() {
        return Err(Error::InvalidArgument(format!(
            "step {n} beyond the {} computed convolution weights",
            weights.n_steps()
        )));
    }
    let nb = state.psi().len();
    let mut out = DVector::zeros(2 * nb);
    let mut x = DVector::zeros(2 * nb);
    for j in 0..n {
        x.rows_mut(0, nb).copy_from(&state.phi_history[j]);
        x.rows_mut(nb, nb).copy_from(&state.psibar(j));
        out.gemv(1.0, &weights.weights[n - j], &x, 1.0);
    }
    Ok(out)
}

/// Boundary unknowns of one step.
#[derive(Debug, Clone)]
pub struct BoundaryStep {
    pub phi: DVector<f64>,
    pub psibar: DVector<f64>,
    pub psi_next: DVector<f64>,
    /// Right-hand side of the solved system.
    pub rhs: DVector<f64>,
}

/// Solve the implicit boundary equation for `(phi^{n+1/2}, psibar^{n+1/2})`
/// with `E^{n+1}` eliminated; `state.h_half` must hold `H^{n+1/2}`.
pub fn boundary_step(
    state: &CoupledState,
    weights: &CqWeights<DMatrix<f64>>,
    stepop: &StepOperator,
    ops: &OperatorSet,
    mj: Option<&DVector<f64>>,
) -> Result<BoundaryStep> {
    let nb = ops.n_boundary();
    let dt = stepop.dt;
    let MaterialParams { epsilon, mu } = ops.material;
    let psi = state.psi();
    let mut w = -ops.d.mul_vec(&state.h_half);
    if let Some(mj) = mj {
        w += mj;
    }
    let e_pred = &state.e + ops.mass.solve(&w) * (0.5 * dt / epsilon);
    let conv = history_convolution(state, weights)?;
    let mut rhs = DVector::zeros(2 * nb);
    rhs.rows_mut(0, nb).copy_from(&ops.c0.tr_mul_vec(&e_pred));
    let bottom = ops.c1.tr_mul_vec(&state.h_half) + &stepop.schur * psi * (2.0 * stepop.alpha * dt / mu);
    rhs.rows_mut(nb, nb).copy_from(&bottom);
    rhs -= conv;
    let x = stepop.solve(&rhs)?;
    let phi = x.rows(0, nb).into_owned();
    let psibar = x.rows(nb, nb).into_owned();
    let psi_next = &psibar * 2.0 - psi;
    Ok(BoundaryStep { phi, psibar, psi_next, rhs })
}

/// Relative residual of the boundary equation at step `n`, re-evaluated
/// from the completed step: `[B(d_t)(phi; psibar)]^{n+1/2}` against
/// `(C0^T Ebar; C1^T H - alpha dt^2 mu^{-1} C1^T M^{-1} C1 psidot)` with
/// `Ebar = (E^n + E^{n+1}) / 2`, `psidot = (psi^{n+1} - psi^n) / dt`.
pub fn boundary_residual(
    before: &CoupledState,
    after: &CoupledState,
    weights: &CqWeights<DMatrix<f64>>,
    ops: &OperatorSet,
    alpha: f64,
) -> Result<f64> {
    let n = before.n;
    let nb = ops.n_boundary();
    let dt = weights.dt;
    if n > weights.n_steps() || after.n != n + 1 {
        return Err(Error::InvalidArgument("residual needs consecutive states within the weight range".into()));
    }
    let mut lhs = DVector::zeros(2 * nb);
    let mut x = DVector::zeros(2 * nb);
    for j in 0..=n {
        x.rows_mut(0, nb).copy_from(&after.phi_history[j]);
        x.rows_mut(nb, nb).copy_from(&after.psibar(j));
        lhs.gemv(1.0, &weights.weights[n - j], &x, 1.0);
    }
    let ebar = (&before.e + &after.e) * 0.5;
    let psidot = (&after.psi_history[n + 1] - &after.psi_history[n]) / dt;
    let schur = boundary_schur(ops);
    let mut rhs = DVector::zeros(2 * nb);
    rhs.rows_mut(0, nb).copy_from(&ops.c0.tr_mul_vec(&ebar));
    let bottom = ops.c1.tr_mul_vec(&before.h_half) - schur * psidot * (alpha * dt * dt / ops.material.mu);
    rhs.rows_mut(nb, nb).copy_from(&bottom);
    let scale = rhs.norm().max(lhs.norm()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).norm() / scale)
}

/// How the boundary closes the interior scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Convolution-quadrature boundary integral coupling.
    Coupled,
    /// `phi = psi = 0`: the bare dG scheme on `Omega`.
    Reflective,
}

/// One full step: H half step already in `state`, boundary solve, E step,
/// combined H step to `H^{n+3/2}`.
pub fn step(
    state: &mut CoupledState,
    ops: &OperatorSet,
    boundary: Option<(&CqWeights<DMatrix<f64>>, &StepOperator)>,
    mj: Option<&DVector<f64>>,
    dt: f64,
) -> Result<()> {
    state.check_invariants();
    let nb = ops.n_boundary();
    let (phi, psi_next) = match boundary {
        Some((w, op)) => {
            let b = boundary_step(state, w, op, ops, mj)?;
            (b.phi, b.psi_next)
        }
        None => (DVector::zeros(nb), DVector::zeros(nb)),
    };
    let e_next = leapfrog_step_e(ops, &state.e, &state.h_half, &phi, mj, dt);
    let f = ops.d.mul_vec(&e_next) - ops.c1.mul_vec(&psi_next);
    let h_next = &state.h_half + ops.mass.solve(&f) * (dt / ops.material.mu);
    state.e = e_next;
    state.h_half_prev = std::mem::replace(&mut state.h_half, h_next);
    state.phi_history.push(phi);
    state.psi_history.push(psi_next);
    state.n += 1;
    state.t = state.n as f64 * dt;
    Ok(())
}

/// `(calE, calE_n)`: `(eps ||E^n||^2 + mu ||H^n||^2) / 2` and
/// `eps/2 ||E^n||^2 + mu/4 (||H^{n+1/2}||^2 + ||H^{n-1/2}||^2)`, M-norms.
pub fn discrete_energy(state: &CoupledState, ops: &OperatorSet, dt: f64) -> (f64, f64) {
    let MaterialParams { epsilon, mu } = ops.material;
    let m = &ops.mass;
    let ee = m.norm_sq(&state.e);
    let hn = state.h_integer(ops, dt);
    let cal = 0.5 * (epsilon * ee + mu * m.norm_sq(&hn));
    let cal_n = 0.5 * epsilon * ee + 0.25 * mu * (m.norm_sq(&state.h_half) + m.norm_sq(&state.h_half_prev));
    (cal.max(0.0), cal_n.max(0.0))
}

/// One row of the energy time series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergySample {
    pub t: f64,
    pub cal_e: f64,
    pub cal_e_n: f64,
    pub norm_phi: f64,
    pub norm_psi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct EnergyRecord {
    pub samples: Vec<EnergySample>,
}

impl EnergyRecord {
    pub fn push(&mut self, state: &CoupledState, ops: &OperatorSet, dt: f64) {
        let (cal_e, cal_e_n) = discrete_energy(state, ops, dt);
        let l2 = |v: &DVector<f64>| v.dot(&ops.mg_l2.mul_vec(v)).max(0.0).sqrt();
        let norm_phi = state.phi_history.last().map_or(0.0, l2);
        let norm_psi = l2(state.psi());
        self.samples.push(EnergySample { t: state.t, cal_e, cal_e_n, norm_phi, norm_psi });
    }

    pub fn max_ratio(&self) -> f64 {
        let e0 = self.samples.first().map_or(0.0, |s| s.cal_e_n);
        let m = self.samples.iter().fold(0.0f64, |m, s| m.max(s.cal_e_n));
        if e0 > 0.0 {
            m / e0
        } else if m == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,calE,calE_n,norm_phi,norm_psi\n");
        for r in &self.samples {
            s.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", r.t, r.cal_e, r.cal_e_n, r.norm_phi, r.norm_psi));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Spatial profile `(1 - r^2/R^2)^4` on `r < R`.
pub fn bump(x: Vec3, center: Vec3, radius: f64) -> f64 {
    let q = (x - center).norm_squared() / (radius * radius);
    if q < 1.0 {
        (1.0 - q).powi(4)
    } else {
        0.0
    }
}

/// Interior current `J(x, t) = p bump(x) sin(omega (t - t0)) exp(-((t - t0)/w)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PulseSource {
    pub center: [f64; 3],
    pub radius: f64,
    pub polarization: [f64; 3],
    pub omega: f64,
    pub t0: f64,
    pub width: f64,
}

impl PulseSource {
    pub fn amplitude(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        (self.omega * tau).sin() * (-(tau / self.width).powi(2)).exp()
    }
}

/// Time-dependent interior load `M J(t)`.
#[derive(Debug, Clone)]
pub enum Source {
    Zero,
    Pulse { profile_load: DVector<f64>, pulse: PulseSource },
}

impl Source {
    /// Pulse whose spatial support keeps a positive distance to `Gamma`.
    pub fn pulse(space: &DgSpace, ops: &OperatorSet, pulse: PulseSource) -> Result<Self> {
        let c = Vec3::from(pulse.center);
        if !(pulse.radius > 0.0 && pulse.width > 0.0) {
            return Err(Error::InvalidArgument("pulse radius and width must be positive".into()));
        }
        // the closed support may touch the boundary, where bump vanishes
        // to fourth order
        if !space.surface.contains(c) || space.surface.distance_to(c) + 1e-12 < pulse.radius {
            return Err(Error::InvalidArgument(format!(
                "pulse support (radius {}) leaves the domain; distance from center to boundary is {}",
                pulse.radius,
                space.surface.distance_to(c)
            )));
        }
        let p = Vec3::from(pulse.polarization);
        let profile = space.interpolate(|x| p * bump(x, c, pulse.radius));
        Ok(Source::Pulse { profile_load: ops.mass.mul(&profile), pulse })
    }

    pub fn load(&self, t: f64) -> Option<DVector<f64>> {
        match self {
            Source::Zero => None,
            Source::Pulse { profile_load, pulse } => Some(profile_load * pulse.amplitude(t)),
        }
    }
}

/// Divergence-free initial field `curl(a bump(x))`, supported in the ball
/// of radius `radius` about `center`.
pub fn curl_bump(x: Vec3, center: Vec3, radius: f64, axis: Vec3) -> Vec3 {
    let d = x - center;
    let q = d.norm_squared() / (radius * radius);
    if q >= 1.0 {
        return Vec3::zeros();
    }
    let grad = d * (-8.0 * (1.0 - q).powi(3) / (radius * radius));
    grad.cross(&axis)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimulationConfig {
    pub material: MaterialParams,
    pub dt: f64,
    pub n_steps: usize,
    pub alpha: f64,
    pub cfl_safety: f64,
    /// Skip the CFL guard (blow-up demonstrations).
    pub allow_unstable: bool,
    pub boundary: BoundaryMode,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time.dt must be positive, got {}", self.dt)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("stabilization.alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("time.cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if self.boundary == BoundaryMode::Coupled && self.alpha < 1.0 && !self.allow_unstable {
            return Err(Error::InvalidArgument(format!(
                "stabilization.alpha = {} is below 1, outside the stability-guaranteed mode; set unsafe to run anyway",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: CoupledState,
    pub energy: EnergyRecord,
    pub cfl: CflEstimate,
}

/// Run `n_steps` of the coupled scheme from `state`. In coupled mode
/// `weights` must cover `state.n + n_steps` steps; `cfl` is computed when
/// not supplied.
pub fn run(
    config: &SimulationConfig,
    ops: &OperatorSet,
    mut state: CoupledState,
    source: &Source,
    weights: Option<&CqWeights<DMatrix<f64>>>,
    cfl: Option<CflEstimate>,
    mut observer: impl FnMut(&CoupledState),
) -> Result<RunOutput> {
    config.validate()?;
    let dt = config.dt;
    let cfl = cfl.unwrap_or_else(|| cfl_limit(ops, &config.material));
    if !config.allow_unstable && dt > config.cfl_safety * cfl.dt_max {
        return Err(Error::Cfl { dt, dt_max: cfl.dt_max });
    }
    let stepop = match config.boundary {
        BoundaryMode::Coupled => {
            let w = weights.ok_or_else(|| Error::InvalidArgument("coupled run needs convolution weights".into()))?;
            if (w.dt - dt).abs() > 1e-14 * dt {
                return Err(Error::InvalidArgument(format!("weights computed for dt = {}, run uses {dt}", w.dt)));
            }
            let needed = state.n + config.n_steps;
            if w.n_steps() + 1 < needed {
                return Err(Error::InvalidArgument(format!("weights cover {} steps, run needs {needed}", w.n_steps() + 1)));
            }
            Some((w, StepOperator::from_weights(ops, w, config.alpha)?))
        }
        BoundaryMode::Reflective => None,
    };
    let mut energy = EnergyRecord::default();
    energy.push(&state, ops, dt);
    observer(&state);
    for _ in 0..config.n_steps {
        let mj = source.load((state.n as f64 + 0.5) * dt);
        step(&mut state, ops, stepop.as_ref().map(|(w, op)| (*w, op)), mj.as_ref(), dt)?;
        if !state.is_finite() {
            return Err(Error::NumericalAbort(state.n));
        }
        energy.push(&state, ops, dt);
        observer(&state);
    }
    Ok(RunOutput { state, energy, cfl })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"EMCSTATE";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (little endian): magic `EMCSTATE`, version `u32`,
/// `n: u64`, `t: f64`, `n_interior: u64`, `n_boundary: u64`, then `E`,
/// `H^{n+1/2}`, `H^{n-1/2}`, `psi^0..psi^n`, `phi^{1/2}..phi^{n-1/2}` as
/// `f64` arrays.
pub fn save_checkpoint(state: &CoupledState, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(state.n as u64).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf.extend_from_slice(&(state.e.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(state.psi().len() as u64).to_le_bytes());
    let vecs = [&state.e, &state.h_half, &state.h_half_prev]
        .into_iter()
        .chain(state.psi_history.iter())
        .chain(state.phi_history.iter());
    for v in vecs {
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CoupledState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::InvalidArgument(format!("checkpoint: {m}"));
    if buf.len() < 44 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(8) != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", u32_at(8))));
    }
    let n = u64_at(12) as usize;
    let t = f64::from_bits(u64_at(20));
    let ni = u64_at(28) as usize;
    let nb = u64_at(36) as usize;
    let need = 44 + 8 * (3 * ni + (n + 1) * nb + n * nb);
    if buf.len() != need {
        return Err(bad(&format!("expected {need} bytes, found {}", buf.len())));
    }
    let mut off = 44;
    let mut take = |len: usize| {
        let v = DVector::from_fn(len, |i, _| f64::from_bits(u64_at(off + 8 * i)));
        off += 8 * len;
        v
    };
    let e = take(ni);
    let h_half = take(ni);
    let h_half_prev = take(ni);
    let psi_history = (0..=n).map(|_| take(nb)).collect();
    let phi_history = (0..n).map(|_| take(nb)).collect();
    Ok(CoupledState { e, h_half, h_half_prev, phi_history, psi_history, n, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use crate::sparse::TripletBuilder;

    struct Fixture {
        space: DgSpace,
        bspace: BoundarySpace,
        ops: OperatorSet,
    }

    fn fixture(n: usize, material: MaterialParams) -> Fixture {
        let space = DgSpace::new(build_box_mesh([1.0; 3], [n; 3]).unwrap()).unwrap();
        let bspace = BoundarySpace::new(&space.surface);
        let ops = OperatorSet::assemble(&space, &bspace, material).unwrap();
        Fixture { space, bspace, ops }
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn pulse_field(fx: &Fixture) -> DVector<f64> {
        fx.space.interpolate(|x| Vec3::new((2.0 * x.y).sin(), x.x * x.z.cos(), x.x * x.y - 0.3 * x.z))
    }

    fn weights(fx: &Fixture, dt: f64, n: usize) -> CqWeights<DMatrix<f64>> {
        let m = fx.ops.material;
        boundary_weights(&fx.bspace, &QuadratureConfig::default(), &m, dt, n, &ContourParams::default_for(n), 1 << 30)
            .unwrap()
    }

    #[test]
    fn cfl_unbounded_for_zero_curl() {
        let mut fx = fixture(1, MaterialParams::default());
        let n = fx.ops.n_interior();
        fx.ops.d = TripletBuilder::new(n, n).build();
        let c = cfl_limit(&fx.ops, &MaterialParams::default());
        assert!(c.unbounded && c.dt_max.is_infinite());
    }

    #[test]
    fn cfl_scales_with_sqrt_eps_mu() {
        let fx = fixture(1, MaterialParams::default());
        let a = cfl_limit(&fx.ops, &MaterialParams::new(1.0, 1.0).unwrap());
        let b = cfl_limit(&fx.ops, &MaterialParams::new(2.0, 1.0).unwrap());
        assert!((b.dt_max / a.dt_max - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cfl_matches_dense_eigenvalues() {
        let fx = fixture(2, MaterialParams::default());
        let c = cfl_limit(&fx.ops, &fx.ops.material);
        let s = symmetric_curl_dense(&fx.ops);
        assert!((&s - s.transpose()).amax() < 1e-12 * s.amax());
        let exact = s.symmetric_eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(c.converged);
        assert!((c.norm - exact).abs() <= 1e-6 * exact, "{} vs {exact}", c.norm);
        assert!((c.dt_max - 1.0 / exact).abs() <= 1e-6 / exact);
    }

    #[test]
    fn g_is_symmetric_psd_with_alpha_zero_block() {
        let fx = fixture(1, MaterialParams::new(2.0, 0.5).unwrap());
        let nb = fx.ops.n_boundary();
        let g0 = assemble_g(&fx.ops, &fx.ops.material, 0.0).unwrap();
        assert_eq!(g0.view((nb, nb), (nb, nb)).amax(), 0.0);
        let g = assemble_g(&fx.ops, &fx.ops.material, 1.5).unwrap();
        assert_eq!((&g - g.transpose()).amax(), 0.0);
        for seed in 0..100 {
            let x = random_vec(2 * nb, seed);
            assert!(x.dot(&(&g * &x)) >= -1e-14 * g.amax() * x.norm_squared());
        }
        // positive definite on the retained basis
        let min = g.symmetric_eigenvalues().min();
        assert!(min > 0.0, "{min}");
        assert!(assemble_g(&fx.ops, &fx.ops.material, -1.0).is_err());
    }

    #[test]
    fn g_blocks_match_definition() {
        let fx = fixture(1, MaterialParams::new(2.0, 0.5).unwrap());
        let nb = fx.ops.n_boundary();
        let minv = {
            let n = fx.ops.n_interior();
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                m.set_column(j, &fx.ops.mass.solve(&e));
            }
            m
        };
        let c0 = fx.ops.c0.to_dense();
        let c1 = fx.ops.c1.to_dense();
        let g = assemble_g(&fx.ops, &fx.ops.material, 1.5).unwrap();
        let top = c0.transpose() * &minv * &c0 * (0.5 / 2.0);
        let bottom = c1.transpose() * &minv * &c1 * (2.0 * 1.5 / 0.5);
        assert!((g.view((0, 0), (nb, nb)) - top).amax() < 1e-12 * g.amax());
        assert!((g.view((nb, nb), (nb, nb)) - bottom).amax() < 1e-12 * g.amax());
        assert_eq!(g.view((0, nb), (nb, nb)).amax(), 0.0);
    }

    #[test]
    fn h_halfstep_trivial_cases() {
        let fx = fixture(1, MaterialParams::default());
        let ni = fx.ops.n_interior();
        let nb = fx.ops.n_boundary();
        let h = random_vec(ni, 1);
        let out = leapfrog_halfstep_h(&fx.ops, &h, &DVector::zeros(ni), &DVector::zeros(nb), 0.1);
        assert_eq!(out, h);
        let out = leapfrog_halfstep_h(&fx.ops, &h, &random_vec(ni, 2), &random_vec(nb, 3), 0.0);
        assert_eq!(out, h);
    }

    #[test]
    fn combined_h_step_equals_two_half_steps() {
        let fx = fixture(1, MaterialParams::new(1.3, 0.7).unwrap());
        let (ni, nb) = (fx.ops.n_interior(), fx.ops.n_boundary());
        let (h, e, psi) = (random_vec(ni, 4), random_vec(ni, 5), random_vec(nb, 6));
        let dt = 0.03;
        let two = leapfrog_halfstep_h(&fx.ops, &leapfrog_halfstep_h(&fx.ops, &h, &e, &psi, dt), &e, &psi, dt);
        let f = fx.ops.d.mul_vec(&e) - fx.ops.c1.mul_vec(&psi);
        let one = &h + fx.ops.mass.solve(&f) * (dt / fx.ops.material.mu);
        assert!((two - one).amax() <= 1e-13 * h.amax().max(1.0));
    }

    #[test]
    fn e_step_trivial_cases() {
        let fx = fixture(1, MaterialParams::new(2.5, 1.0).unwrap());
        let (ni, nb) = (fx.ops.n_interior(), fx.ops.n_boundary());
        let e = random_vec(ni, 7);
        let zero_h = DVector::zeros(ni);
        let zero_phi = DVector::zeros(nb);
        assert_eq!(leapfrog_step_e(&fx.ops, &e, &zero_h, &zero_phi, None, 0.1), e);
        let j = random_vec(ni, 8);
        let mj = fx.ops.mass.mul(&j);
        let dt = 0.1;
        let out = leapfrog_step_e(&fx.ops, &e, &zero_h, &zero_phi, Some(&mj), dt);
        let expect = &e + &j * (dt / 2.5);
        assert!((out - expect).amax() < 1e-12);
    }

    #[test]
    fn boundary_step_zero_data_gives_zero() {
        let fx = fixture(1, MaterialParams::default());
        let dt = 0.05;
        let w = weights(&fx, dt, 4);
        let op = StepOperator::from_weights(&fx.ops, &w, 1.0).unwrap();
        let st = CoupledState::zeros(&fx.ops, dt);
        let b = boundary_step(&st, &w, &op, &fx.ops, None).unwrap();
        assert_eq!(b.phi.amax(), 0.0);
        assert_eq!(b.psibar.amax(), 0.0);
    }

    #[test]
    fn step_operator_factorization_residual() {
        let fx = fixture(1, MaterialParams::default());
        let w = weights(&fx, 0.05, 2);
        let op = StepOperator::from_weights(&fx.ops, &w, 1.0).unwrap();
        for seed in 0..5 {
            let b = random_vec(op.dim(), 100 + seed);
            let x = op.solve(&b).unwrap();
            assert!(op.residual(&x, &b) <= 1e-10);
        }
        let err = StepOperator::new(&fx.ops, DMatrix::zeros(op.dim(), op.dim()), 0.0, 0.0);
        assert!(matches!(err, Err(Error::SingularStep(_))));
    }

    #[test]
    fn completed_steps_satisfy_the_scheme() {
        let fx = fixture(1, MaterialParams::new(1.2, 0.9).unwrap());
        let dt = 0.8 * cfl_limit(&fx.ops, &fx.ops.material).dt_max;
        let n = 6;
        let w = weights(&fx, dt, n);
        let e0 = pulse_field(&fx);
        let mut last = Vec::new();
        for alpha in [1.0, 2.0] {
            let op = StepOperator::from_weights(&fx.ops, &w, alpha).unwrap();
            let mut st = CoupledState::new(&fx.ops, e0.clone(), DVector::zeros(e0.len()), dt).unwrap();
            for _ in 0..n {
                let before = st.clone();
                step(&mut st, &fx.ops, Some((&w, &op)), None, dt).unwrap();
                let r = boundary_residual(&before, &st, &w, &fx.ops, alpha).unwrap();
                assert!(r <= 1e-10, "alpha {alpha} step {}: {r}", before.n);
                // interior equations re-evaluated
                let m = &fx.ops.mass;
                let MaterialParams { epsilon, mu } = fx.ops.material;
                let phi = st.phi_history.last().unwrap();
                let lhs = m.mul(&(&st.e - &before.e)) * epsilon;
                let rhs = -(fx.ops.d.mul_vec(&before.h_half) + fx.ops.c0.mul_vec(phi)) * dt;
                assert!((&lhs - &rhs).norm() <= 1e-10 * rhs.norm().max(lhs.norm()).max(1e-300));
                let h_int = st.h_integer(&fx.ops, dt);
                let lhs = m.mul(&(&h_int - &before.h_half)) * mu;
                let rhs = (fx.ops.d.mul_vec(&st.e) - fx.ops.c1.mul_vec(st.psi())) * (0.5 * dt);
                assert!((&lhs - &rhs).norm() <= 1e-10 * rhs.norm().max(lhs.norm()).max(1e-300));
            }
            assert!(st.phi_history.iter().any(|p| p.amax() > 0.0));
            last.push(st.psi().clone());
        }
        assert!((&last[0] - &last[1]).amax() > 1e-8 * last[0].amax());
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let fx = fixture(1, MaterialParams::default());
        let dt = 0.5 * cfl_limit(&fx.ops, &fx.ops.material).dt_max;
        let w = weights(&fx, dt, 5);
        let cfg = SimulationConfig {
            material: fx.ops.material,
            dt,
            n_steps: 5,
            alpha: 1.0,
            cfl_safety: 1.0,
            allow_unstable: false,
            boundary: BoundaryMode::Coupled,
        };
        let out = run(&cfg, &fx.ops, CoupledState::zeros(&fx.ops, dt), &Source::Zero, Some(&w), None, |_| {}).unwrap();
        assert_eq!(out.state.n, 5);
        assert_eq!(out.state.e.amax(), 0.0);
        assert_eq!(out.state.h_half.amax(), 0.0);
        assert!(out.state.phi_history.iter().chain(&out.state.psi_history).all(|v| v.amax() == 0.0));
        assert!(out.energy.samples.iter().all(|s| s.cal_e == 0.0 && s.cal_e_n == 0.0));
    }

    #[test]
    fn run_guards() {
        let fx = fixture(1, MaterialParams::default());
        let cfl = cfl_limit(&fx.ops, &fx.ops.material);
        let cfg = SimulationConfig {
            material: fx.ops.material,
            dt: 1.2 * cfl.dt_max,
            n_steps: 3,
            alpha: 1.0,
            cfl_safety: 1.0,
            allow_unstable: false,
            boundary: BoundaryMode::Reflective,
        };
        let st = CoupledState::zeros(&fx.ops, cfg.dt);
        match run(&cfg, &fx.ops, st.clone(), &Source::Zero, None, None, |_| {}) {
            Err(Error::Cfl { dt_max, .. }) => assert!((dt_max - cfl.dt_max).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let cfg = SimulationConfig { dt: 0.5 * cfl.dt_max, ..cfg };
        let mut bad = CoupledState::zeros(&fx.ops, cfg.dt);
        bad.e[0] = f64::NAN;
        assert!(matches!(run(&cfg, &fx.ops, bad, &Source::Zero, None, None, |_| {}), Err(Error::NumericalAbort(1))));
        let coupled = SimulationConfig { boundary: BoundaryMode::Coupled, ..cfg };
        assert!(run(&coupled, &fx.ops, st, &Source::Zero, None, None, |_| {}).is_err());
        let weak = SimulationConfig { alpha: 0.5, ..coupled };
        assert!(weak.validate().unwrap_err().to_string().contains("below 1"));
        assert!(SimulationConfig { allow_unstable: true, ..weak }.validate().is_ok());
        assert!(SimulationConfig { boundary: BoundaryMode::Reflective, ..weak }.validate().is_ok());
    }

    #[test]
    fn energy_identities() {
        let fx = fixture(1, MaterialParams::new(2.0, 3.0).unwrap());
        let dt = 0.01;
        let st = CoupledState::zeros(&fx.ops, dt);
        assert_eq!(discrete_energy(&st, &fx.ops, dt), (0.0, 0.0));
        let e = pulse_field(&fx);
        let st = CoupledState::new(&fx.ops, e.clone(), e.clone(), dt).unwrap();
        let (cal, cal_n) = discrete_energy(&st, &fx.ops, dt);
        let expect = 0.5 * (2.0 + 3.0) * fx.ops.mass.norm_sq(&e);
        assert!((cal - expect).abs() < 1e-12 * expect);
        assert!(cal_n >= 0.25 * 3.0 * fx.ops.mass.norm_sq(&st.h_half));
    }

    #[test]
    fn reflective_run_matches_bare_leapfrog() {
        let fx = fixture(1, MaterialParams::default());
        let dt = 0.5 * cfl_limit(&fx.ops, &fx.ops.material).dt_max;
        let cfg = SimulationConfig {
            material: fx.ops.material,
            dt,
            n_steps: 10,
            alpha: 1.0,
            cfl_safety: 1.0,
            allow_unstable: false,
            boundary: BoundaryMode::Reflective,
        };
        let e0 = pulse_field(&fx);
        let st = CoupledState::new(&fx.ops, e0.clone(), DVector::zeros(e0.len()), dt).unwrap();
        let out = run(&cfg, &fx.ops, st, &Source::Zero, None, None, |_| {}).unwrap();
        let (mut e, mut h) = (e0.clone(), DVector::zeros(e0.len()));
        let m = &fx.ops.mass;
        h += m.solve(&fx.ops.d.mul_vec(&e)) * (0.5 * dt);
        for _ in 0..10 {
            e -= m.solve(&fx.ops.d.mul_vec(&h)) * dt;
            h += m.solve(&fx.ops.d.mul_vec(&e)) * dt;
        }
        assert!((&out.state.e - &e).amax() < 1e-12 * e0.amax());
        assert!((&out.state.h_half - &h).amax() < 1e-12 * e0.amax());
        // pure leapfrog conserves eps|E^n|^2 + mu (H^{n+1/2}, H^{n-1/2})
        let q = |s: &CoupledState| m.norm_sq(&s.e) + m.inner(&s.h_half, &s.h_half_prev);
        let st0 = CoupledState::new(&fx.ops, e0.clone(), DVector::zeros(e0.len()), dt).unwrap();
        let mut s1 = st0.clone();
        step(&mut s1, &fx.ops, None, None, dt).unwrap();
        assert!((q(&s1) - q(&out.state)).abs() < 1e-12 * q(&s1));
    }

    #[test]
    fn pulse_source_checks_support() {
        let fx = fixture(2, MaterialParams::default());
        let p = PulseSource {
            center: [0.5, 0.5, 0.5],
            radius: 0.3,
            polarization: [0.0, 0.0, 1.0],
            omega: 6.0,
            t0: 0.5,
            width: 0.2,
        };
        let s = Source::pulse(&fx.space, &fx.ops, p).unwrap();
        assert!(s.load(0.5).unwrap().amax() == 0.0);
        assert!(s.load(0.6).unwrap().amax() > 0.0);
        assert!(Source::Zero.load(1.0).is_none());
        assert!(Source::pulse(&fx.space, &fx.ops, PulseSource { radius: 0.6, ..p }).is_err());
        assert!(Source::pulse(&fx.space, &fx.ops, PulseSource { radius: 0.5, ..p }).is_ok());
        assert!(Source::pulse(&fx.space, &fx.ops, PulseSource { center: [1.5, 0.5, 0.5], radius: 0.1, ..p }).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let fx = fixture(1, MaterialParams::default());
        let dt = 0.02;
        let e0 = pulse_field(&fx);
        let mut st = CoupledState::new(&fx.ops, e0.clone(), e0 * 0.5, dt).unwrap();
        step(&mut st, &fx.ops, None, None, dt).unwrap();
        st.psi_history[1] = random_vec(fx.ops.n_boundary(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        save_checkpoint(&st, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), st);
        std::fs::write(&path, b"EMCSTATE\x02\0\0\0garbage-garbage-garbage-garbage").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn energy_csv_has_header_and_rows() {
        let fx = fixture(1, MaterialParams::default());
        let mut rec = EnergyRecord::default();
        rec.push(&CoupledState::zeros(&fx.ops, 0.1), &fx.ops, 0.1);
        let csv = rec.to_csv();
        assert!(csv.starts_with("t,calE,calE_n,norm_phi,norm_psi\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn curl_bump_matches_finite_differences() {
        let (c, r, a) = (Vec3::new(0.4, 0.5, 0.6), 0.7, Vec3::new(0.3, -1.0, 0.5));
        let field = |x: Vec3| a * bump(x, c, r);
        let h = 1e-5;
        for x in [Vec3::new(0.5, 0.3, 0.7), Vec3::new(0.1, 0.6, 0.5)] {
            let d = |i: usize, x: Vec3| {
                let mut e = Vec3::zeros();
                e[i] = h;
                (field(x + e) - field(x - e)) / (2.0 * h)
            };
            let (dx, dy, dz) = (d(0, x), d(1, x), d(2, x));
            let fd = Vec3::new(dy.z - dz.y, dz.x - dx.z, dx.y - dy.x);
            assert!((fd - curl_bump(x, c, r, a)).norm() < 1e-8);
        }
        assert_eq!(curl_bump(Vec3::new(2.0, 0.0, 0.0), c, r, a), Vec3::zeros());
    }
}
