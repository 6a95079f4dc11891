//! Time-harmonic field of a point dipole and its traces.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bem::{green_and_grad, green_hessian, CVec3};
use crate::dg::{BoundarySpace, MaterialParams};
use crate::quadrature::TriangleRule;
use crate::{Error, Result, Vec3};

/// `u = curl curl (G p)` for a dipole of moment `p` at `source`. Away from
/// the source it solves `eps mu s^2 u + curl curl u = 0`.
#[derive(Debug, Clone, Copy)]
pub struct DipoleField {
    pub source: Vec3,
    pub moment: Vec3,
    pub s: Complex64,
    pub material: MaterialParams,
}

impl DipoleField {
    fn kappa(&self) -> Complex64 {
        self.s * (self.material.epsilon * self.material.mu).sqrt()
    }

    /// `u(x) = Hess G p - kappa^2 G p`.
    pub fn field(&self, x: Vec3) -> CVec3 {
        let k = self.kappa();
        let z = x - self.source;
        let h = green_hessian(k, z);
        let (g, _) = green_and_grad(k, z);
        let mut u = [Complex64::new(0.0, 0.0); 3];
        for i in 0..3 {
            for j in 0..3 {
                u[i] += h[i][j] * self.moment[j];
            }
            u[i] -= k * k * g * self.moment[i];
        }
        u
    }

    /// `curl u = -kappa^2 grad G x p`.
    pub fn curl(&self, x: Vec3) -> CVec3 {
        let k = self.kappa();
        let (_, dg) = green_and_grad(k, x - self.source);
        let p = self.moment;
        let c = [dg[1] * p.z - dg[2] * p.y, dg[2] * p.x - dg[0] * p.z, dg[0] * p.y - dg[1] * p.x];
        c.map(|v| -k * k * v)
    }
}

/// `a x nu` for complex `a`.
pub fn cross_normal(a: CVec3, nu: Vec3) -> CVec3 {
    [a[1] * nu.z - a[2] * nu.y, a[2] * nu.x - a[0] * nu.z, a[0] * nu.y - a[1] * nu.x]
}

/// Load vector `int g . b_k` of a smooth tangential field given facewise
/// as `g(face, x)`, by a 7-point rule per triangle.
pub fn load_complex(bspace: &BoundarySpace, g: impl Fn(usize, Vec3) -> CVec3) -> DVector<Complex64> {
    let rule = TriangleRule::symmetric(7);
    let surface = &bspace.surface;
    let mut r = DVector::from_element(bspace.dim, Complex64::new(0.0, 0.0));
    for f in 0..surface.n_triangles() {
        let p = surface.triangle_points(f);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            let val = g(f, x);
            let wa = w * surface.areas[f];
            for (pv, i, b) in bspace.face_dofs(f) {
                let t = bspace.tangent(f, i);
                r[b] += (val[0] * t.x + val[1] * t.y + val[2] * t.z) * (wa * l[pv]);
            }
        }
    }
    r
}

/// Boundary interpolation of the trace `w x nu` of a smooth field `w`:
/// at every surface node the retained coefficients are the least-squares
/// fit of `w(x_k) x nu_f` over the incident faces (exact when all
/// candidates at the node are kept).
pub fn interpolate_trace(bspace: &BoundarySpace, w: impl Fn(Vec3) -> CVec3) -> DVector<Complex64> {
    let surface = &bspace.surface;
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); surface.n_nodes()];
    for (f, tri) in surface.triangles.iter().enumerate() {
        for &k in tri {
            incident[k].push(f);
        }
    }
    let mut c = DVector::from_element(bspace.dim, Complex64::new(0.0, 0.0));
    for (k, faces) in incident.iter().enumerate() {
        let axes: Vec<(usize, usize)> = (0..3).filter_map(|i| bspace.basis_index(k, i).map(|b| (i, b))).collect();
        if axes.is_empty() {
            continue;
        }
        let val = w(surface.nodes[k]);
        let rows = 3 * faces.len();
        let a = DMatrix::from_fn(rows, axes.len(), |r, j| {
            let nu = surface.normals[faces[r / 3]];
            let mut e = Vec3::zeros();
            e[axes[j].0] = 1.0;
            e.cross(&nu)[r % 3]
        });
        let target = |part: fn(&Complex64) -> f64| {
            DVector::from_fn(rows, |r, _| {
                let nu = surface.normals[faces[r / 3]];
                let v = Vec3::new(part(&val[0]), part(&val[1]), part(&val[2]));
                v.cross(&nu)[r % 3]
            })
        };
        let svd = a.svd(true, true);
        let re = svd.solve(&target(|z| z.re), 1e-12).expect("svd solve");
        let im = svd.solve(&target(|z| z.im), 1e-12).expect("svd solve");
        for (j, &(_, b)) in axes.iter().enumerate() {
            c[b] = Complex64::new(re[j], im[j]);
        }
    }
    c
}

/// Relative L^2 distance between a smooth trace `g` and the boundary
/// field with coefficients `c`.
pub fn trace_error(bspace: &BoundarySpace, c: &DVector<Complex64>, g: impl Fn(usize, Vec3) -> CVec3) -> f64 {
    let (re, im) = bspace.field_complex(c);
    let diff = surface_norm_sq(bspace, |f, x| {
        let p = bspace.surface.triangle_points(f);
        let l = crate::mesh::barycentric_triangle(p, x);
        let (a, b) = (re.eval(f, l), im.eval(f, l));
        let v = g(f, x);
        [0, 1, 2].map(|i| v[i] - Complex64::new(a[i], b[i]))
    });
    (diff / surface_norm_sq(bspace, g)).sqrt()
}

/// Boundary data of a dipole: interpolants of `phi = gamma_N u` and
/// `psi = gamma_T u`, and the load vectors `int b_k . u` and
/// `int b_k . s^{-1} curl u` of the tangential components.
pub struct DipoleTraceData {
    pub phi: DVector<Complex64>,
    pub psi: DVector<Complex64>,
    pub load_u: DVector<Complex64>,
    pub load_curl: DVector<Complex64>,
    /// Relative L^2 interpolation errors of the two traces.
    pub phi_error: f64,
    pub psi_error: f64,
}

/// `int |g|^2` over the surface by a 7-point rule per triangle.
pub fn surface_norm_sq(bspace: &BoundarySpace, g: impl Fn(usize, Vec3) -> CVec3) -> f64 {
    let rule = TriangleRule::symmetric(7);
    let surface = &bspace.surface;
    let mut sum = 0.0;
    for f in 0..surface.n_triangles() {
        let p = surface.triangle_points(f);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let v = g(f, p[0] * l[0] + p[1] * l[1] + p[2] * l[2]);
            sum += w * surface.areas[f] * v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
    }
    sum
}

pub fn dipole_trace_data(bspace: &BoundarySpace, dipole: &DipoleField) -> Result<DipoleTraceData> {
    let surface = &bspace.surface;
    if surface.contains(dipole.source) {
        return Err(Error::InvalidArgument("dipole source lies inside the domain; the trace oracle needs an exterior source".into()));
    }
    let dist = surface.distance_to(dipole.source);
    let min_dist = 0.1 * surface.bounding_diameter();
    if dist < min_dist {
        return Err(Error::InvalidArgument(format!(
            "dipole source at distance {dist} from the boundary; need at least {min_dist}"
        )));
    }
    let s_inv = 1.0 / dipole.s;
    let scaled_curl = |x| dipole.curl(x).map(|c| c * s_inv);
    let phi = interpolate_trace(bspace, scaled_curl);
    let psi = interpolate_trace(bspace, |x| dipole.field(x));
    let phi_error = trace_error(bspace, &phi, |f, x| cross_normal(scaled_curl(x), surface.normals[f]));
    let psi_error = trace_error(bspace, &psi, |f, x| cross_normal(dipole.field(x), surface.normals[f]));
    Ok(DipoleTraceData {
        phi,
        psi,
        load_u: load_complex(bspace, |_, x| dipole.field(x)),
        load_curl: load_complex(bspace, |_, x| scaled_curl(x)),
        phi_error,
        psi_error,
    })
}
