//! Laplace-domain boundary integral operators for Maxwell's equations.
//!
//! Potentials (for `Re s > 0`, `kappa = s sqrt(eps mu)`):
//!
//! * single layer `S(s) phi = s int G phi - (s eps mu)^{-1} grad int G div_Gamma phi`
//! * double layer `D(s) psi = curl int G psi`
//!
//! With these signs `[gamma_N S] = [gamma_T D] = Id`, and with
//! `V = {gamma_T S}`, `K = {gamma_T D} = {gamma_N S}` one has
//! `{gamma_N D} = -eps mu V`. The Galerkin matrices
//!
//! * `V[k, k'] = 1/2 (s int int G b_k . b_k' + (s eps mu)^{-1} int int G div b_k div b_k')`
//! * `K[k, k'] = 1/2 int int b_k(x) . (grad_x G(x - y) x b_k'(y))`
//!
//! are complex symmetric, and the Calderon matrix is
//! `B = mu^{-1} [[V, K], [-K, eps mu V]]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::dg::{BoundarySpace, MaterialParams};
use crate::quadrature::{PairKind, PairRule, TriangleRule};
use crate::{Error, Result, Vec3};

pub type CVec3 = [Complex64; 3];

/// Laplace frequency with positive real part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexFrequency(Complex64);

impl ComplexFrequency {
    pub fn new(s: Complex64) -> Result<Self> {
        if !(s.re > 0.0) || !s.im.is_finite() {
            return Err(Error::InvalidArgument(format!("Laplace frequency needs Re s > 0, got {s}")));
        }
        Ok(ComplexFrequency(s))
    }

    pub fn real(s: f64) -> Result<Self> {
        Self::new(Complex64::new(s, 0.0))
    }

    pub fn value(&self) -> Complex64 {
        self.0
    }

    pub fn conj(&self) -> Self {
        ComplexFrequency(self.0.conj())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureConfig {
    /// Points per triangle for well separated pairs (1, 3, 6 or 7; other
    /// counts use a collapsed Gauss rule).
    pub regular_order: usize,
    /// Gauss points per dimension for the singular pair rules.
    pub sauter_schwab_order: usize,
    /// Pairs with centroid distance below this multiple of the larger
    /// diameter use a refined tensor rule.
    pub near_threshold: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { regular_order: 6, sauter_schwab_order: 4, near_threshold: 1.5 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regular_order < 1 || self.sauter_schwab_order < 1 || !(self.near_threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid quadrature configuration {self:?}")));
        }
        Ok(())
    }
}

fn kappa(s: Complex64, material: &MaterialParams) -> Complex64 {
    s * (material.epsilon * material.mu).sqrt()
}

/// `G(s, z) = exp(-s sqrt(eps mu) |z|) / (4 pi |z|)`.
pub fn kernel(s: ComplexFrequency, z: Vec3, material: &MaterialParams) -> Result<Complex64> {
    let r = z.norm();
    if r == 0.0 {
        return Err(Error::Singularity);
    }
    Ok(green(kappa(s.value(), material), r))
}

#[inline]
fn green(k: Complex64, r: f64) -> Complex64 {
    (-k * r).exp() / (4.0 * PI * r)
}

/// `G` and `grad G` at `z != 0`.
#[inline]
pub fn green_and_grad(k: Complex64, z: Vec3) -> (Complex64, CVec3) {
    let r = z.norm();
    let g = green(k, r);
    let f = -g * (k + 1.0 / r) / r;
    (g, [f * z.x, f * z.y, f * z.z])
}

/// Second derivatives `d_i d_j G` at `z != 0`.
pub fn green_hessian(k: Complex64, z: Vec3) -> [[Complex64; 3]; 3] {
    let r = z.norm();
    let g = green(k, r);
    let g1 = -g * (k + 1.0 / r);
    let g2 = g * (k + 1.0 / r) * (k + 1.0 / r) + g / (r * r);
    let e = z / r;
    let mut h = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let d = if i == j { 1.0 } else { 0.0 };
            h[i][j] = g2 * e[i] * e[j] + g1 / r * (d - e[i] * e[j]);
        }
    }
    h
}

#[inline]
fn cross_cr(a: &CVec3, b: &Vec3) -> CVec3 {
    [a[1] * b.z - a[2] * b.y, a[2] * b.x - a[0] * b.z, a[0] * b.y - a[1] * b.x]
}

#[inline]
fn dot_rc(a: &Vec3, b: &CVec3) -> Complex64 {
    b[0] * a.x + b[1] * a.y + b[2] * a.z
}

/// Per-triangle data used by assembly and potential evaluation.
#[derive(Debug, Clone)]
struct Panel {
    points: [Vec3; 3],
    nodes: [usize; 3],
    area: f64,
    centroid: Vec3,
    diameter: f64,
    /// (local vertex, axis, basis index, tangent, surface divergence)
    dofs: Vec<(usize, usize, usize, Vec3, f64)>,
}

fn panels(bspace: &BoundarySpace) -> Vec<Panel> {
    let s = &bspace.surface;
    (0..s.n_triangles())
        .map(|f| Panel {
            points: s.triangle_points(f),
            nodes: s.triangles[f],
            area: s.areas[f],
            centroid: s.centroid(f),
            diameter: s.diameter(f),
            dofs: bspace
                .face_dofs(f)
                .map(|(p, i, b)| (p, i, b, bspace.tangent(f, i), bspace.div_local(f, p, i)))
                .collect(),
        })
        .collect()
}

/// Integrals over a triangle pair of `G lambda_a lambda_b` and
/// `grad_x G lambda_a lambda_b` (local vertex numbering of each panel).
struct PairIntegrals {
    g: [[Complex64; 3]; 3],
    grad: [[CVec3; 3]; 3],
}

struct Rules {
    coincident: PairRule,
    edge: PairRule,
    vertex: PairRule,
    regular: PairRule,
    near: PairRule,
    near_threshold: f64,
}

impl Rules {
    fn new(q: &QuadratureConfig) -> Self {
        let n = q.sauter_schwab_order;
        Rules {
            coincident: PairRule::sauter_schwab(PairKind::Coincident, n),
            edge: PairRule::sauter_schwab(PairKind::Edge, n),
            vertex: PairRule::sauter_schwab(PairKind::Vertex, n),
            regular: {
                let t = TriangleRule::symmetric(q.regular_order);
                PairRule::tensor(&t, &t)
            },
            near: {
                let t = TriangleRule::collapsed(n + 2);
                PairRule::tensor(&t, &t)
            },
            near_threshold: q.near_threshold,
        }
    }
}

/// Classify a pair and return the rule with vertex permutations that put
/// the shared vertices first, in matching order.
fn pair_setup<'r>(pf: &Panel, pg: &Panel, rules: &'r Rules) -> (&'r PairRule, [usize; 3], [usize; 3]) {
    let mut shared = Vec::new();
    for (a, na) in pf.nodes.iter().enumerate() {
        if let Some(b) = pg.nodes.iter().position(|nb| nb == na) {
            shared.push((a, b));
        }
    }
    let rest = |used: &[usize]| (0..3).filter(|i| !used.contains(i)).collect::<Vec<_>>();
    match shared.len() {
        3 => (&rules.coincident, [0, 1, 2], [0, 1, 2]),
        2 => {
            let (a0, b0) = shared[0];
            let (a1, b1) = shared[1];
            let rf = rest(&[a0, a1]);
            let rg = rest(&[b0, b1]);
            (&rules.edge, [a0, a1, rf[0]], [b0, b1, rg[0]])
        }
        1 => {
            let (a0, b0) = shared[0];
            let rf = rest(&[a0]);
            let rg = rest(&[b0]);
            (&rules.vertex, [a0, rf[0], rf[1]], [b0, rg[0], rg[1]])
        }
        _ => {
            let dist = (pf.centroid - pg.centroid).norm();
            let rule = if dist < rules.near_threshold * pf.diameter.max(pg.diameter) {
                &rules.near
            } else {
                &rules.regular
            };
            (rule, [0, 1, 2], [0, 1, 2])
        }
    }
}

fn pair_integrals(pf: &Panel, pg: &Panel, rules: &Rules, k: Complex64) -> PairIntegrals {
    let (rule, permf, permg) = pair_setup(pf, pg, rules);
    let zero = Complex64::new(0.0, 0.0);
    let mut out = PairIntegrals { g: [[zero; 3]; 3], grad: [[[zero; 3]; 3]; 3] };
    let jac = 4.0 * pf.area * pg.area;
    for q in 0..rule.len() {
        let (bx, by) = (rule.x[q], rule.y[q]);
        let mut lx = [0.0; 3];
        let mut ly = [0.0; 3];
        for i in 0..3 {
            lx[permf[i]] = bx[i];
            ly[permg[i]] = by[i];
        }
        let x = pf.points[0] * lx[0] + pf.points[1] * lx[1] + pf.points[2] * lx[2];
        let y = pg.points[0] * ly[0] + pg.points[1] * ly[1] + pg.points[2] * ly[2];
        let (g, dg) = green_and_grad(k, x - y);
        let w = rule.weights[q] * jac;
        for a in 0..3 {
            for b in 0..3 {
                let wl = w * lx[a] * ly[b];
                out.g[a][b] += g * wl;
                for c in 0..3 {
                    out.grad[a][b][c] += dg[c] * wl;
                }
            }
        }
    }
    out
}

/// Galerkin matrices of `V(s)` and `K(s)`.
pub struct Blocks {
    pub v: Option<DMatrix<Complex64>>,
    pub k: Option<DMatrix<Complex64>>,
}

type Contribution = (usize, usize, Complex64, Complex64);

/// Assemble `V` and/or `K` over all triangle pairs `f <= g`, mirroring
/// off-diagonal pairs (both matrices are complex symmetric).
pub fn assemble_blocks(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
    want_v: bool,
    want_k: bool,
) -> Result<Blocks> {
    quad.validate()?;
    let sv = s.value();
    let k = kappa(sv, material);
    let div_factor = 1.0 / (sv * material.epsilon * material.mu);
    let panels = panels(bspace);
    let rules = Rules::new(quad);
    let n = bspace.dim;
    let mut v = want_v.then(|| DMatrix::from_element(n, n, Complex64::new(0.0, 0.0)));
    let mut kk = want_k.then(|| DMatrix::from_element(n, n, Complex64::new(0.0, 0.0)));
    let np = panels.len();
    let chunk = 32;
    for start in (0..np).step_by(chunk) {
        let end = (start + chunk).min(np);
        let parts: Vec<Result<Vec<Contribution>>> = (start..end)
            .into_par_iter()
            .map(|f| {
                let pf = &panels[f];
                let mut out = Vec::new();
                for g in f..np {
                    let pg = &panels[g];
                    let pi = pair_integrals(pf, pg, &rules, k);
                    let i_d: Complex64 = pi.g.iter().flatten().sum();
                    for &(a, _, kb, ta, da) in &pf.dofs {
                        for &(b, _, lb, tb, db) in &pg.dofs {
                            let vv = if want_v {
                                0.5 * (sv * pi.g[a][b] * ta.dot(&tb) + div_factor * i_d * (da * db))
                            } else {
                                Complex64::new(0.0, 0.0)
                            };
                            let kv = if want_k && f != g {
                                0.5 * dot_rc(&ta, &cross_cr(&pi.grad[a][b], &tb))
                            } else {
                                Complex64::new(0.0, 0.0)
                            };
                            if !(vv.re.is_finite() && vv.im.is_finite() && kv.re.is_finite() && kv.im.is_finite()) {
                                return Err(Error::NonFinite(f, g));
                            }
                            out.push((kb, lb, vv, kv));
                            if f != g {
                                out.push((lb, kb, vv, kv));
                            }
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        for part in parts {
            for (i, j, vv, kv) in part? {
                if let Some(v) = v.as_mut() {
                    v[(i, j)] += vv;
                }
                if let Some(kk) = kk.as_mut() {
                    kk[(i, j)] += kv;
                }
            }
        }
    }
    Ok(Blocks { v, k: kk })
}

pub fn assemble_v(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
) -> Result<DMatrix<Complex64>> {
    Ok(assemble_blocks(s, bspace, quad, material, true, false)?.v.expect("requested"))
}

pub fn assemble_k(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
) -> Result<DMatrix<Complex64>> {
    Ok(assemble_blocks(s, bspace, quad, material, false, true)?.k.expect("requested"))
}

/// Discrete Calderon operator `B(s) = mu^{-1} [[V, K], [-K, eps mu V]]`.
#[derive(Debug, Clone)]
pub struct CalderonMatrix {
    pub s: Complex64,
    pub material: MaterialParams,
    pub v: DMatrix<Complex64>,
    pub k: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
}

impl CalderonMatrix {
    pub fn from_blocks(s: Complex64, material: MaterialParams, v: DMatrix<Complex64>, k: DMatrix<Complex64>) -> Self {
        let n = v.nrows();
        let inv_mu = 1.0 / material.mu;
        let em = material.epsilon * material.mu;
        let mut b = DMatrix::from_element(2 * n, 2 * n, Complex64::new(0.0, 0.0));
        b.view_mut((0, 0), (n, n)).copy_from(&(&v * Complex64::from(inv_mu)));
        b.view_mut((0, n), (n, n)).copy_from(&(&k * Complex64::from(inv_mu)));
        b.view_mut((n, 0), (n, n)).copy_from(&(&k * Complex64::from(-inv_mu)));
        b.view_mut((n, n), (n, n)).copy_from(&(&v * Complex64::from(em * inv_mu)));
        CalderonMatrix { s, material, v, k, b }
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }
}

pub fn assemble_b(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    quad: &QuadratureConfig,
    material: &MaterialParams,
) -> Result<CalderonMatrix> {
    let blocks = assemble_blocks(s, bspace, quad, material, true, true)?;
    Ok(CalderonMatrix::from_blocks(s.value(), *material, blocks.v.expect("v"), blocks.k.expect("k")))
}

/// `Re(x^* B x) / |x|^2`.
pub fn rayleigh_real(b: &DMatrix<Complex64>, x: &DVector<Complex64>) -> f64 {
    let bx = b * x;
    x.dotc(&bx).re / x.norm_squared()
}

/// Coercivity weight `min(1, |s|^2 eps mu) Re s`.
pub fn coercivity_weight(s: Complex64, material: &MaterialParams) -> f64 {
    (s.norm_sqr() * material.epsilon * material.mu).min(1.0) * s.re
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoercivityProbe {
    pub s_re: f64,
    pub s_im: f64,
    pub trials: usize,
    pub seed: u64,
    /// Minimum of `Re(x^* B x)/|x|^2` over the sampled vectors.
    pub min_quotient: f64,
    /// Smallest eigenvalue of the Hermitian part of `B`.
    pub hermitian_min_eig: f64,
    /// `min(1, |s|^2 eps mu) Re s`.
    pub weight: f64,
    /// Observed `min_quotient / weight`.
    pub beta_estimate: f64,
}

/// Sample `trials` seeded random unit vectors and report the smallest
/// Rayleigh quotient of the real part of `B`.
pub fn coercivity_probe(cm: &CalderonMatrix, trials: usize, seed: u64) -> Result<CoercivityProbe> {
    if trials < 1 {
        return Err(Error::InvalidArgument("coercivity probe needs at least one trial".into()));
    }
    let n = cm.b.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..trials {
        let x = DVector::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let x = &x / Complex64::from(x.norm());
        min_q = min_q.min(rayleigh_real(&cm.b, &x));
    }
    let herm = (&cm.b + cm.b.adjoint()) * Complex64::from(0.5);
    let eig = herm.symmetric_eigenvalues();
    let hermitian_min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let weight = coercivity_weight(cm.s, &cm.material);
    Ok(CoercivityProbe {
        s_re: cm.s.re,
        s_im: cm.s.im,
        trials,
        seed,
        min_quotient: min_q,
        hermitian_min_eig,
        weight,
        beta_estimate: min_q / weight,
    })
}

fn panel_rule(p: &Panel, x: Vec3) -> TriangleRule {
    if (x - p.centroid).norm() < 3.0 * p.diameter {
        TriangleRule::collapsed(10)
    } else {
        TriangleRule::symmetric(7)
    }
}

fn check_distance(bspace: &BoundarySpace, x: Vec3, quad: &QuadratureConfig) -> Result<()> {
    let surface = &bspace.surface;
    let h = (0..surface.n_triangles()).map(|f| surface.diameter(f)).fold(0.0, f64::max);
    let d = surface.distance_to(x);
    let threshold = quad.near_threshold * h;
    if d <= threshold {
        return Err(Error::NearSingular { distance: d, threshold });
    }
    Ok(())
}

fn density_at(p: &Panel, c: &DVector<Complex64>, l: [f64; 3]) -> CVec3 {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for &(a, _, b, t, _) in &p.dofs {
        let w = c[b] * l[a];
        for i in 0..3 {
            out[i] += w * t[i];
        }
    }
    out
}

/// Single and double layer potentials of `phi` and `psi` at `x`.
pub fn eval_potentials(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    phi: &DVector<Complex64>,
    psi: &DVector<Complex64>,
    x: Vec3,
    material: &MaterialParams,
    quad: &QuadratureConfig,
) -> Result<(CVec3, CVec3)> {
    check_distance(bspace, x, quad)?;
    Ok(potentials_with(s, bspace, phi, psi, x, material, |p| panel_rule(p, x)))
}

/// As [`eval_potentials`] with the same rule on every panel and no
/// distance check (smooth in `x`, for finite-difference tests).
pub fn eval_potentials_fixed(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    phi: &DVector<Complex64>,
    psi: &DVector<Complex64>,
    x: Vec3,
    material: &MaterialParams,
    rule: &TriangleRule,
) -> (CVec3, CVec3) {
    potentials_with(s, bspace, phi, psi, x, material, |_| rule.clone())
}

fn potentials_with(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    phi: &DVector<Complex64>,
    psi: &DVector<Complex64>,
    x: Vec3,
    material: &MaterialParams,
    rule_for: impl Fn(&Panel) -> TriangleRule,
) -> (CVec3, CVec3) {
    let sv = s.value();
    let k = kappa(sv, material);
    let div_factor = 1.0 / (sv * material.epsilon * material.mu);
    let zero = Complex64::new(0.0, 0.0);
    let mut single = [zero; 3];
    let mut double = [zero; 3];
    for p in panels(bspace) {
        let div_phi: Complex64 = p.dofs.iter().map(|&(_, _, b, _, d)| phi[b] * d).sum();
        let rule = rule_for(&p);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let y = p.points[0] * l[0] + p.points[1] * l[1] + p.points[2] * l[2];
            let (g, dg) = green_and_grad(k, x - y);
            let wa = w * p.area;
            let ph = density_at(&p, phi, *l);
            let ps = density_at(&p, psi, *l);
            for i in 0..3 {
                single[i] += wa * (sv * g * ph[i] - div_factor * div_phi * dg[i]);
            }
            let c = [dg[1] * ps[2] - dg[2] * ps[1], dg[2] * ps[0] - dg[0] * ps[2], dg[0] * ps[1] - dg[1] * ps[0]];
            for i in 0..3 {
                double[i] += wa * c[i];
            }
        }
    }
    (single, double)
}

pub fn single_layer_eval(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    phi: &DVector<Complex64>,
    x: Vec3,
    material: &MaterialParams,
    quad: &QuadratureConfig,
) -> Result<CVec3> {
    let zero = DVector::from_element(bspace.dim, Complex64::new(0.0, 0.0));
    Ok(eval_potentials(s, bspace, phi, &zero, x, material, quad)?.0)
}

pub fn double_layer_eval(
    s: ComplexFrequency,
    bspace: &BoundarySpace,
    psi: &DVector<Complex64>,
    x: Vec3,
    material: &MaterialParams,
    quad: &QuadratureConfig,
) -> Result<CVec3> {
    let zero = DVector::from_element(bspace.dim, Complex64::new(0.0, 0.0));
    Ok(eval_potentials(s, bspace, &zero, psi, x, material, quad)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, extract_boundary};

    fn bspace(n: usize) -> BoundarySpace {
        BoundarySpace::new(&extract_boundary(&build_box_mesh([1.0; 3], [n; 3]).unwrap()).unwrap())
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn freq(re: f64, im: f64) -> ComplexFrequency {
        ComplexFrequency::new(c(re, im)).unwrap()
    }

    fn rel_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max) / a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_density(n: usize, seed: u64) -> DVector<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn kernel_values() {
        let m = MaterialParams::default();
        let g = kernel(freq(1.0, 0.0), Vec3::new(0.0, 1.0, 0.0), &m).unwrap();
        assert!((g.re - (-1.0f64).exp() / (4.0 * PI)).abs() < 1e-15);
        assert!((g.re - 0.029275).abs() < 1e-6);
        let g = kernel(freq(1e-8, 0.0), Vec3::new(0.6, 0.0, 0.8), &m).unwrap();
        assert!((g.re - 1.0 / (4.0 * PI)).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = freq(rng.gen_range(0.1..3.0), rng.gen_range(-5.0..5.0));
            let z = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let a = kernel(s.conj(), z, &m).unwrap();
            let b = kernel(s, z, &m).unwrap().conj();
            assert!((a - b).norm() < 1e-15);
        }
        assert!(matches!(kernel(freq(1.0, 0.0), Vec3::zeros(), &m), Err(Error::Singularity)));
        assert!(ComplexFrequency::new(c(0.0, 1.0)).is_err());
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let k = c(1.3, 0.8);
        let z = Vec3::new(0.4, -0.3, 0.7);
        let h = 1e-5;
        let (_, grad) = green_and_grad(k, z);
        let hess = green_hessian(k, z);
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let (gp, dp) = green_and_grad(k, z + e);
            let (gm, dm) = green_and_grad(k, z - e);
            assert!(((gp - gm) / (2.0 * h) - grad[j]).norm() < 1e-8);
            for i in 0..3 {
                assert!(((dp[i] - dm[i]) / (2.0 * h) - hess[i][j]).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn blocks_are_complex_symmetric_and_conjugation_symmetric() {
        let b = bspace(1);
        let m = MaterialParams::new(1.5, 0.8).unwrap();
        let q = QuadratureConfig::default();
        let s = freq(1.0, 2.0);
        let bl = assemble_blocks(s, &b, &q, &m, true, true).unwrap();
        let (v, k) = (bl.v.unwrap(), bl.k.unwrap());
        assert!(rel_diff(&v, &v.transpose()) < 1e-12);
        assert!(rel_diff(&k, &k.transpose()) < 1e-12);
        let blc = assemble_blocks(s.conj(), &b, &q, &m, true, true).unwrap();
        assert!(rel_diff(&v.conjugate(), &blc.v.unwrap()) < 1e-12);
        assert!(rel_diff(&k.conjugate(), &blc.k.unwrap()) < 1e-12);
        assert!(k.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn singular_quadrature_self_converges() {
        let b = bspace(1);
        let m = MaterialParams::default();
        let s = freq(1.0, 0.0);
        let at = |q| {
            let cfg = QuadratureConfig { sauter_schwab_order: q, ..Default::default() };
            assemble_blocks(s, &b, &cfg, &m, true, true).unwrap()
        };
        let levels: Vec<Blocks> = [2, 4, 6, 8].into_iter().map(at).collect();
        let dv: Vec<f64> = levels
            .windows(2)
            .map(|w| rel_diff(w[1].v.as_ref().unwrap(), w[0].v.as_ref().unwrap()))
            .collect();
        let dk: Vec<f64> = levels
            .windows(2)
            .map(|w| rel_diff(w[1].k.as_ref().unwrap(), w[0].k.as_ref().unwrap()))
            .collect();
        assert!(dv[0] > dv[1] && dv[1] > dv[2], "{dv:?}");
        assert!(dk[0] > dk[1] && dk[1] > dk[2], "{dk:?}");
        assert!(dv[2] < 1e-4 && dk[2] < 1e-3, "{dv:?} {dk:?}");
    }

    #[test]
    fn blocks_depend_continuously_on_s() {
        let b = bspace(1);
        let m = MaterialParams::default();
        let q = QuadratureConfig::default();
        let v0 = assemble_v(freq(1.0, 1.0), &b, &q, &m).unwrap();
        let d1 = rel_diff(&v0, &assemble_v(freq(1.0 + 1e-4, 1.0), &b, &q, &m).unwrap());
        let d2 = rel_diff(&v0, &assemble_v(freq(1.0 + 1e-5, 1.0), &b, &q, &m).unwrap());
        assert!(d1 < 1e-3 && (d1 / d2 - 10.0).abs() < 1.0, "{d1} {d2}");
    }

    #[test]
    fn calderon_matrix_structure_and_scaling() {
        let b = bspace(1);
        let q = QuadratureConfig::default();
        let s = freq(1.0, 0.5);
        let m1 = MaterialParams::new(1.0, 1.0).unwrap();
        let m2 = MaterialParams::new(0.5, 2.0).unwrap();
        let b1 = assemble_b(s, &b, &q, &m1).unwrap();
        let b2 = assemble_b(s, &b, &q, &m2).unwrap();
        // same eps mu, so blocks agree and B scales with 1/mu
        assert!(rel_diff(&(&b1.b * c(0.5, 0.0)), &b2.b) < 1e-14);
        let n = b1.dim();
        let blk = |m: &DMatrix<Complex64>, i: usize, j: usize| m.view((i * n, j * n), (n, n)).into_owned();
        assert_eq!(blk(&b1.b, 0, 1), -blk(&b1.b, 1, 0));
        let m3 = MaterialParams::new(2.0, 1.5).unwrap();
        let b3 = assemble_b(s, &b, &q, &m3).unwrap();
        assert!(rel_diff(&(blk(&b3.b, 0, 0) * c(3.0, 0.0)), &blk(&b3.b, 1, 1)) < 1e-14);
    }

    #[test]
    fn calderon_matrix_is_coercive() {
        let b = bspace(2);
        let q = QuadratureConfig::default();
        let m = MaterialParams::default();
        for (s, strict) in [(freq(1.0, 0.0), true), (freq(1.0, 5.0), false), (freq(0.1, 0.0), false)] {
            let cm = assemble_b(s, &b, &q, &m).unwrap();
            let p = coercivity_probe(&cm, 200, 11).unwrap();
            if strict {
                assert!(p.min_quotient > 0.0, "{p:?}");
            }
            assert!(p.min_quotient > -1e-10 && p.hermitian_min_eig > -1e-10, "{p:?}");
            assert!(p.min_quotient >= p.hermitian_min_eig - 1e-12);
        }
    }

    #[test]
    fn rayleigh_quotient_is_scale_invariant() {
        let b = bspace(1);
        let cm = assemble_b(freq(1.0, 0.0), &b, &QuadratureConfig::default(), &MaterialParams::default()).unwrap();
        let x = random_density(cm.b.nrows(), 3);
        let a = rayleigh_real(&cm.b, &x);
        let y = &x * c(-2.5, 1.5);
        assert!((a - rayleigh_real(&cm.b, &y)).abs() < 1e-14 * a.abs().max(1.0));
        assert!(coercivity_probe(&cm, 0, 1).is_err());
    }

    #[test]
    fn potentials_are_linear_and_vanish_for_zero_density() {
        let b = bspace(1);
        let m = MaterialParams::default();
        let q = QuadratureConfig::default();
        let s = freq(1.0, 0.3);
        let x = Vec3::new(3.5, 0.2, 0.4);
        let zero = DVector::from_element(b.dim, c(0.0, 0.0));
        let (s0, d0) = eval_potentials(s, &b, &zero, &zero, x, &m, &q).unwrap();
        assert!(s0.iter().chain(&d0).all(|z| z.norm() == 0.0));
        let phi = random_density(b.dim, 1);
        let alpha = c(0.7, -1.1);
        let a = single_layer_eval(s, &b, &(&phi * alpha), x, &m, &q).unwrap();
        let r = single_layer_eval(s, &b, &phi, x, &m, &q).unwrap();
        let a2 = double_layer_eval(s, &b, &(&phi * alpha), x, &m, &q).unwrap();
        let r2 = double_layer_eval(s, &b, &phi, x, &m, &q).unwrap();
        for i in 0..3 {
            assert!((a[i] - alpha * r[i]).norm() < 1e-12 * r[i].norm().max(1e-3));
            assert!((a2[i] - alpha * r2[i]).norm() < 1e-12 * r2[i].norm().max(1e-3));
        }
        let near = Vec3::new(1.05, 0.5, 0.5);
        assert!(matches!(
            single_layer_eval(s, &b, &phi, near, &m, &q),
            Err(Error::NearSingular { .. })
        ));
    }

    /// `eps mu s^2 u + curl curl u` by nested 4th-order central differences.
    fn pde_residual(u: &dyn Fn(Vec3) -> CVec3, x: Vec3, h: f64, s: Complex64, em: f64) -> (f64, f64) {
        let curl = |f: &dyn Fn(Vec3) -> CVec3, x: Vec3| -> CVec3 {
            let d = |i: usize, j: usize| {
                let mut e = Vec3::zeros();
                e[j] = h;
                (f(x - e * 2.0)[i] - f(x + e * 2.0)[i] + (f(x + e)[i] - f(x - e)[i]) * 8.0) / (12.0 * h)
            };
            [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)]
        };
        let cc = curl(&|y| curl(u, y), x);
        let ux = u(x);
        let r: f64 = (0..3).map(|i| (ux[i] * s * s * em + cc[i]).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = (0..3).map(|i| (ux[i] * s * s * em).norm_sqr()).sum::<f64>().sqrt();
        (r, scale)
    }

    #[test]
    fn potentials_solve_time_harmonic_maxwell() {
        let b = bspace(1);
        let m = MaterialParams::new(1.2, 0.9).unwrap();
        let s = freq(1.0, 0.5);
        let phi = random_density(b.dim, 5);
        let psi = random_density(b.dim, 6);
        let rule = TriangleRule::collapsed(16);
        let x = Vec3::new(1.9, 0.3, 0.6);
        let dist = b.surface.distance_to(x);
        for which in 0..2 {
            let f = |y: Vec3| {
                let (sp, dp) = eval_potentials_fixed(s, &b, &phi, &psi, y, &m, &rule);
                if which == 0 {
                    sp
                } else {
                    dp
                }
            };
            let (r1, scale) = pde_residual(&f, x, 8e-2 * dist, s.value(), m.epsilon * m.mu);
            let (r2, _) = pde_residual(&f, x, 4e-2 * dist, s.value(), m.epsilon * m.mu);
            let (r3, _) = pde_residual(&f, x, 1e-3 * dist, s.value(), m.epsilon * m.mu);
            // fourth order: halving the step reduces the residual ~16x
            assert!(r1 / r2 > 10.0, "{r1} {r2}");
            assert!(r3 < 1e-6 * scale, "{r3} {scale}");
        }
    }

    #[test]
    fn single_layer_decays_along_a_ray() {
        let b = bspace(1);
        let m = MaterialParams::default();
        let q = QuadratureConfig::default();
        let s = freq(0.8, 0.0);
        let phi = random_density(b.dim, 8);
        let diam = b.surface.bounding_diameter();
        let dir = Vec3::new(1.0, 0.4, -0.3).normalize();
        let centre = Vec3::new(0.5, 0.5, 0.5);
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let x = centre + dir * diam * (2.0 + 0.5 * k as f64);
            let u = single_layer_eval(s, &b, &phi, x, &m, &q).unwrap();
            let mag = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(mag < prev);
            prev = mag;
        }
    }
}
