//! Interpolation into the interior dG space and the boundary space, and
//! L^2 error norms.

use nalgebra::{DMatrix, DVector};

use crate::dg::{BoundarySpace, DgSpace};
use crate::quadrature::{tet_rule_collapsed, TriangleRule};
use crate::Vec3;

/// Residual threshold above which boundary interpolation warns.
pub const BOUNDARY_RESIDUAL_WARN: f64 = 1e-8;

/// Continuous piecewise-linear interpolant `I_h F` from vertex values.
pub fn interpolate_interior(space: &DgSpace, f: impl Fn(Vec3) -> Vec3 + Sync) -> DVector<f64> {
    space.interpolate(f)
}

/// `||u - F||_{L^2(Omega)}` by a collapsed Gauss rule with `n^3` points
/// per tetrahedron.
pub fn interior_l2_error(space: &DgSpace, u: &DVector<f64>, f: impl Fn(Vec3) -> Vec3, n: usize) -> f64 {
    let (pts, wts) = tet_rule_collapsed(n);
    let mut sum = 0.0;
    for t in 0..space.n_tets() {
        let p = space.mesh.tet_points(t);
        let vol = space.volume(t);
        for (l, w) in pts.iter().zip(&wts) {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2] + p[3] * l[3];
            sum += w * vol * (space.eval(u, t, *l) - f(x)).norm_squared();
        }
    }
    sum.sqrt()
}

/// Boundary interpolant and its least-squares residual.
#[derive(Debug, Clone)]
pub struct BoundaryInterpolant {
    pub coeffs: DVector<f64>,
    /// `|A c - chi x nu| / |chi x nu|` over all nodal equations.
    pub residual: f64,
}

/// `Pi_h (chi x nu)`: at each surface node the coefficients of the
/// retained directions are fitted by least squares to `chi(f, x_k) x nu_f`
/// over the incident faces. `chi` may depend on the face (it need not be
/// continuous across edges).
pub fn interpolate_boundary(bspace: &BoundarySpace, chi: impl Fn(usize, Vec3) -> Vec3) -> BoundaryInterpolant {
    let surface = &bspace.surface;
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); surface.n_nodes()];
    for (f, tri) in surface.triangles.iter().enumerate() {
        for (p, &k) in tri.iter().enumerate() {
            incident[k].push((f, p));
        }
    }
    let mut c = DVector::zeros(bspace.dim);
    let (mut res_sq, mut tgt_sq) = (0.0, 0.0);
    for (k, faces) in incident.iter().enumerate() {
        let x = surface.nodes[k];
        let rows = 3 * faces.len();
        let target = DVector::from_fn(rows, |r, _| {
            let f = faces[r / 3].0;
            chi(f, x).cross(&surface.normals[f])[r % 3]
        });
        tgt_sq += target.norm_squared();
        let axes: Vec<(usize, usize)> = (0..3).filter_map(|i| bspace.basis_index(k, i).map(|b| (i, b))).collect();
        if axes.is_empty() {
            res_sq += target.norm_squared();
            continue;
        }
        let a = DMatrix::from_fn(rows, axes.len(), |r, j| bspace.tangent(faces[r / 3].0, axes[j].0)[r % 3]);
        let sol = a.clone().svd(true, true).solve(&target, 1e-12).expect("svd solve");
        res_sq += (&a * &sol - &target).norm_squared();
        for (j, &(_, b)) in axes.iter().enumerate() {
            c[b] = sol[j];
        }
    }
    let residual = if tgt_sq > 0.0 { (res_sq / tgt_sq).sqrt() } else { res_sq.sqrt() };
    if residual > BOUNDARY_RESIDUAL_WARN {
        eprintln!("warning: boundary interpolation residual {residual:e}; the retained basis misses needed directions");
    }
    BoundaryInterpolant { coeffs: c, residual }
}

/// `||field(c) - g||_{L^2(Gamma)}` by a 7-point rule per triangle.
pub fn boundary_l2_error(bspace: &BoundarySpace, c: &DVector<f64>, g: impl Fn(usize, Vec3) -> Vec3) -> f64 {
    let rule = TriangleRule::symmetric(7);
    let field = bspace.field(c);
    let surface = &bspace.surface;
    let mut sum = 0.0;
    for f in 0..surface.n_triangles() {
        let p = surface.triangle_points(f);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            sum += w * surface.areas[f] * (field.eval(f, *l) - g(f, x)).norm_squared();
        }
    }
    sum.sqrt()
}

/// Observed orders `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`.
pub fn observed_orders(h: &[f64], e: &[f64]) -> Vec<f64> {
    h.windows(2).zip(e.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(n: usize) -> DgSpace {
        DgSpace::new(build_box_mesh([1.0; 3], [n; 3]).unwrap()).unwrap()
    }

    #[test]
    fn linear_fields_are_reproduced() {
        let space = cube(2);
        let f = |x: Vec3| Vec3::new(1.0 + 2.0 * x.x - x.z, 0.5 * x.y, x.x + x.y + x.z - 3.0);
        let u = interpolate_interior(&space, f);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rng.gen_range(0..space.n_tets());
            let mut l = [0.0; 4].map(|_| rng.gen_range(0.0..1.0));
            let s: f64 = l.iter().sum();
            l.iter_mut().for_each(|v| *v /= s);
            let p = space.mesh.tet_points(t);
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2] + p[3] * l[3];
            assert!((space.eval(&u, t, l) - f(x)).norm() <= 1e-13);
        }
    }

    #[test]
    fn interior_interpolation_is_second_order() {
        let f = |x: Vec3| Vec3::new(x.x.sin(), 0.0, 0.0);
        let hs = [1.0, 0.5, 0.25];
        let e: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&n| {
                let s = cube(n);
                interior_l2_error(&s, &interpolate_interior(&s, f), f, 5)
            })
            .collect();
        for p in observed_orders(&hs, &e) {
            assert!((p - 2.0).abs() < 0.2, "{e:?}");
        }
    }

    #[test]
    fn commutes_with_tangential_trace() {
        let space = cube(2);
        let bspace = BoundarySpace::new(&space.surface);
        let f = |x: Vec3| Vec3::new((x.y * 3.0).sin(), x.x * x.z, (x.x - x.y).exp());
        let u = interpolate_interior(&space, f);
        let bi = interpolate_boundary(&bspace, |_, x| f(x));
        assert!(bi.residual < 1e-12);
        let field = bspace.field(&bi.coeffs);
        for face in 0..space.surface.n_triangles() {
            let tr = space.tangential_trace(&u, face).unwrap();
            for p in 0..3 {
                assert!((field.values[face][p] - tr[p]).norm() <= 1e-13, "face {face}");
            }
        }
    }

    #[test]
    fn constant_and_normal_fields() {
        let space = cube(2);
        let bspace = BoundarySpace::new(&space.surface);
        let c = Vec3::new(0.3, -0.7, 1.1);
        let bi = interpolate_boundary(&bspace, |_, _| c);
        assert!(bi.residual <= 1e-12);
        assert!(boundary_l2_error(&bspace, &bi.coeffs, |f, _| c.cross(&bspace.surface.normals[f])) < 1e-13);
        let normal = interpolate_boundary(&bspace, |f, _| bspace.surface.normals[f] * 2.0);
        assert_eq!(normal.coeffs.amax(), 0.0);
    }

    #[test]
    fn boundary_interpolation_rate() {
        let chi = |x: Vec3| Vec3::new((2.0 * x.y).sin(), (x.z - x.x).cos(), x.x * x.y);
        let hs = [1.0, 0.5, 0.25];
        let e: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&n| {
                let s = cube(n);
                let b = BoundarySpace::new(&s.surface);
                let bi = interpolate_boundary(&b, |_, x| chi(x));
                boundary_l2_error(&b, &bi.coeffs, |f, x| chi(x).cross(&b.surface.normals[f]))
            })
            .collect();
        // nodal interpolation is second order in L^2, beyond the h^{3/2}
        // rate of the trace norm
        for p in observed_orders(&hs, &e) {
            assert!(p >= 1.5, "{e:?}");
        }
    }
}
