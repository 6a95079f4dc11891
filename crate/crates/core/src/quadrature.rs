//! Quadrature rules: Gauss-Legendre, symmetric triangle rules, tensor rules
//! for separated triangle pairs and Sauter-Schwab rules for triangle pairs
//! that share a face, an edge or a vertex.
//!
//! Triangle points are stored in barycentric coordinates with weights
//! normalised to sum to one (multiply by the area). Pair rules carry
//! weights for the reference pair `T x T`, `T = {0 <= v <= u <= 1}`, whose
//! measure is 1/4; the physical integral is `(2|f|)(2|g|) * sum w F`.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    (x, w)
}

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn orbit3(a: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[b, a, a], [a, b, a], [a, a, b]] {
        pts.push(p);
        ws.push(w);
    }
}

impl TriangleRule {
    /// Symmetric rule with the given point count: 1 (degree 1),
    /// 3 (degree 2), 6 (degree 4) or 7 (degree 5). Other counts fall back
    /// to a collapsed Gauss rule of comparable size.
    pub fn symmetric(points: usize) -> TriangleRule {
        let (mut p, mut w) = (Vec::new(), Vec::new());
        match points {
            1 => {
                p.push([1.0 / 3.0; 3]);
                w.push(1.0);
            }
            3 => orbit3(1.0 / 6.0, 1.0 / 3.0, &mut p, &mut w),
            6 => {
                orbit3(0.445948490915965, 0.223381589678011, &mut p, &mut w);
                orbit3(0.091576213509771, 0.109951743655322, &mut p, &mut w);
            }
            7 => {
                p.push([1.0 / 3.0; 3]);
                w.push(0.225);
                orbit3(0.470142064105115, 0.132394152788506, &mut p, &mut w);
                orbit3(0.101286507323456, 0.125939180544827, &mut p, &mut w);
            }
            n => return TriangleRule::collapsed(((n as f64).sqrt().ceil() as usize).max(1)),
        }
        TriangleRule { points: p, weights: w }
    }

    /// Duffy-collapsed tensor Gauss rule with `n x n` points.
    pub fn collapsed(n: usize) -> TriangleRule {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in x.iter().zip(&w) {
            for (&v, &wv) in x.iter().zip(&w) {
                let l1 = u;
                let l2 = v * (1.0 - u);
                points.push([1.0 - l1 - l2, l1, l2]);
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        TriangleRule { points, weights }
    }
}

/// Four-point degree-2 rule on a tetrahedron (barycentric, weights sum to 1).
pub fn tet_rule_degree2() -> ([[f64; 4]; 4], [f64; 4]) {
    let a = 0.585_410_196_624_968_5;
    let b = 0.138_196_601_125_010_5;
    ([[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]], [0.25; 4])
}

/// Collapsed Gauss rule on the tetrahedron with `n^3` points; barycentric
/// points, weights summing to one. Exact for polynomials of degree `2n - 3`.
pub fn tet_rule_collapsed(n: usize) -> (Vec<[f64; 4]>, Vec<f64>) {
    let (g, w) = gauss_legendre(n);
    let mut pts = Vec::with_capacity(n * n * n);
    let mut wts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (u, v, t) = (g[i], g[j], g[k]);
                let x = u;
                let y = (1.0 - u) * v;
                let z = (1.0 - u) * (1.0 - v) * t;
                pts.push([1.0 - x - y - z, x, y, z]);
                // reference volume 1/6
                wts.push(6.0 * w[i] * w[j] * w[k] * (1.0 - u).powi(2) * (1.0 - v));
            }
        }
    }
    (pts, wts)
}

/// Quadrature on a pair of reference triangles.
#[derive(Debug, Clone, Default)]
pub struct PairRule {
    pub x: Vec<[f64; 3]>,
    pub y: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Relative position of two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Coincident,
    /// Shares an edge. Both triangles are parametrised with the shared edge
    /// as their first edge (vertex 0 -> vertex 1), in the same direction.
    Edge,
    /// Shares a vertex, which is vertex 0 of both parametrisations.
    Vertex,
    Separated,
}

/// Reference coordinates `(u, v)`, `0 <= v <= u <= 1`, to barycentric
/// coordinates for the parametrisation `A + u (B - A) + v (C - B)`.
fn bary(p: [f64; 2]) -> [f64; 3] {
    [1.0 - p[0], p[0] - p[1], p[1]]
}

impl PairRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn push(&mut self, x: [f64; 2], y: [f64; 2], w: f64) {
        self.x.push(bary(x));
        self.y.push(bary(y));
        self.weights.push(w);
    }

    /// Tensor product of two triangle rules.
    pub fn tensor(a: &TriangleRule, b: &TriangleRule) -> PairRule {
        let mut r = PairRule::default();
        for (pa, wa) in a.points.iter().zip(&a.weights) {
            for (pb, wb) in b.points.iter().zip(&b.weights) {
                r.x.push(*pa);
                r.y.push(*pb);
                r.weights.push(0.25 * wa * wb);
            }
        }
        r
    }

    /// Sauter-Schwab regularising rule with `order` Gauss points per
    /// dimension of the four-dimensional parameter cube.
    pub fn sauter_schwab(kind: PairKind, order: usize) -> PairRule {
        let (g, gw) = gauss_legendre(order);
        let mut r = PairRule::default();
        for (&xi, &wxi) in g.iter().zip(&gw) {
            for (&e1, &w1) in g.iter().zip(&gw) {
                for (&e2, &w2) in g.iter().zip(&gw) {
                    for (&e3, &w3) in g.iter().zip(&gw) {
                        let w = wxi * w1 * w2 * w3;
                        match kind {
                            PairKind::Coincident => {
                                let jac = w * xi.powi(3) * e1 * e1 * e2;
                                let regions = [
                                    ([xi, xi * (1.0 - e1 + e1 * e2)], [xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)]),
                                    ([xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)], [xi, xi * (1.0 - e1 + e1 * e2)]),
                                    ([xi, xi * e1 * (1.0 - e2 + e2 * e3)], [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)]),
                                    ([xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)], [xi, xi * e1 * (1.0 - e2 + e2 * e3)]),
                                    ([xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)], [xi, xi * e1 * (1.0 - e2)]),
                                    ([xi, xi * e1 * (1.0 - e2)], [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)]),
                                ];
                                for (x, y) in regions {
                                    r.push(x, y, jac);
                                }
                            }
                            PairKind::Edge => {
                                let jac = w * xi.powi(3) * e1 * e1;
                                r.push([xi, xi * e1 * e3], [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)], jac);
                                let jac2 = jac * e2;
                                r.push([xi, xi * e1], [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)], jac2);
                                r.push([xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)], [xi, xi * e1 * e2 * e3], jac2);
                                r.push([xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)], [xi, xi * e1], jac2);
                                r.push([xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)], [xi, xi * e1 * e2], jac2);
                            }
                            PairKind::Vertex => {
                                let jac = w * xi.powi(3) * e2;
                                r.push([xi, xi * e1], [xi * e2, xi * e2 * e3], jac);
                                r.push([xi * e2, xi * e2 * e3], [xi, xi * e1], jac);
                            }
                            PairKind::Separated => {
                                unreachable!("separated pairs use tensor rules")
                            }
                        }
                    }
                }
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for k in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    /// Exact `2 * int_T l1^a l2^b` over the unit triangle: `2 a! b! / (a+b+2)!`.
    fn tri_moment(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn triangle_rules_reach_their_degree() {
        for (n, deg) in [(1, 1), (3, 2), (6, 4), (7, 5)] {
            let r = TriangleRule::symmetric(n);
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                        .sum();
                    assert!((q - tri_moment(a, b)).abs() < 1e-12, "n={n} a={a} b={b}");
                }
            }
        }
        let r = TriangleRule::collapsed(5);
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[1].powi(4) * p[2].powi(3)).sum();
        assert!((q - tri_moment(4, 3)).abs() < 1e-13);
    }

    /// Every Sauter-Schwab rule must integrate smooth polynomials on
    /// `T x T` exactly like a tensor product rule; this confirms that each
    /// transformation is a measure-preserving bijection of the pair domain.
    #[test]
    fn sauter_schwab_rules_reproduce_polynomial_moments() {
        let reference = PairRule::tensor(&TriangleRule::collapsed(6), &TriangleRule::collapsed(6));
        let integrate = |r: &PairRule, f: &dyn Fn([f64; 3], [f64; 3]) -> f64| -> f64 {
            r.x.iter().zip(&r.y).zip(&r.weights).map(|((x, y), w)| w * f(*x, *y)).sum()
        };
        let monomials: Vec<Box<dyn Fn([f64; 3], [f64; 3]) -> f64>> = vec![
            Box::new(|_, _| 1.0),
            Box::new(|x, _| x[1]),
            Box::new(|_, y| y[2] * y[2]),
            Box::new(|x, y| x[0] * y[1]),
            Box::new(|x, y| x[2] * x[1] * y[0] * y[2]),
            Box::new(|x, y| x[1].powi(2) * y[1].powi(3)),
            Box::new(|x, y| (x[2] - y[2]).powi(2) + x[0] * y[1] * y[1]),
        ];
        for kind in [PairKind::Coincident, PairKind::Edge, PairKind::Vertex] {
            let r = PairRule::sauter_schwab(kind, 8);
            for (k, f) in monomials.iter().enumerate() {
                let a = integrate(&r, f.as_ref());
                let b = integrate(&reference, f.as_ref());
                assert!((a - b).abs() < 1e-12, "{kind:?} monomial {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sauter_schwab_points_lie_in_reference_triangle() {
        for kind in [PairKind::Coincident, PairKind::Edge, PairKind::Vertex] {
            let r = PairRule::sauter_schwab(kind, 3);
            for p in r.x.iter().chain(&r.y) {
                assert!(p.iter().all(|&c| (-1e-15..=1.0 + 1e-15).contains(&c)));
            }
        }
    }

    #[test]
    fn coincident_rule_converges_for_inverse_distance() {
        // int_T int_T 1/|x - y| on the unit right triangle, in barycentric
        // coordinates mapped to (l1, l2); self-convergence of the rule
        let f = |x: [f64; 3], y: [f64; 3]| 1.0 / ((x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        let val = |q| {
            let r = PairRule::sauter_schwab(PairKind::Coincident, q);
            r.x.iter().zip(&r.y).zip(&r.weights).map(|((x, y), w)| w * f(*x, *y)).sum::<f64>()
        };
        let (a, b, c) = (val(4), val(6), val(10));
        assert!((b - c).abs() < (a - c).abs());
        assert!((b - c).abs() < 1e-5 * c.abs());
    }

    #[test]
    fn collapsed_tet_rule_moments() {
        // int_T x^a y^b z^c = a! b! c! / (a+b+c+3)! on the unit tetrahedron
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let (pts, wts) = tet_rule_collapsed(4);
        assert!((wts.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for (a, b, c) in [(1, 0, 0), (2, 1, 0), (1, 1, 1), (0, 2, 3), (5, 0, 0)] {
            let exact = fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
            let q: f64 = pts
                .iter()
                .zip(&wts)
                .map(|(p, w)| w / 6.0 * p[1].powi(a as i32) * p[2].powi(b as i32) * p[3].powi(c as i32))
                .sum();
            assert!((q - exact).abs() < 1e-14, "{a}{b}{c}: {q} vs {exact}");
        }
        assert!(pts.iter().all(|p| p.iter().all(|&l| l >= 0.0)));
    }
}
