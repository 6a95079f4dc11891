//! Interior discontinuous Galerkin operators: elementwise linear vector
//! fields, the block-diagonal mass matrix, the centred-flux discrete curl,
//! tangential traces and the boundary coupling matrices.
//!
//! Degrees of freedom are element contiguous: dof `12 t + 3 a + c` is the
//! basis function `lambda_a e_c` on tet `t`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector4};
use rayon::prelude::*;
use std::sync::OnceLock;

use crate::mesh::{extract_boundary, InteriorFace, SurfaceMesh, TetMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::{Error, Result, Vec3};

pub const DOFS_PER_TET: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    pub epsilon: f64,
    pub mu: f64,
}

impl MaterialParams {
    pub fn new(epsilon: f64, mu: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "material parameters must be positive, got epsilon={epsilon}, mu={mu}"
            )));
        }
        Ok(MaterialParams { epsilon, mu })
    }

    /// Wave speed `1/sqrt(eps mu)`.
    pub fn speed(&self) -> f64 {
        1.0 / (self.epsilon * self.mu).sqrt()
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams { epsilon: 1.0, mu: 1.0 }
    }
}

#[inline]
pub fn dof(tet: usize, node: usize, comp: usize) -> usize {
    DOFS_PER_TET * tet + 3 * node + comp
}

fn unit(c: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[c] = 1.0;
    e
}

/// Piecewise linear field on a triangulated surface, stored by its values
/// at the three vertices of every triangle (so it may jump across edges).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub values: Vec<[Vec3; 3]>,
}

impl FaceField {
    pub fn zeros(n_faces: usize) -> Self {
        FaceField { values: vec![[Vec3::zeros(); 3]; n_faces] }
    }

    /// Value at barycentric point `b` of face `f`.
    pub fn eval(&self, f: usize, b: [f64; 3]) -> Vec3 {
        let v = &self.values[f];
        v[0] * b[0] + v[1] * b[1] + v[2] * b[2]
    }

    pub fn scaled(&self, a: f64) -> Self {
        FaceField { values: self.values.iter().map(|v| v.map(|x| x * a)).collect() }
    }
}

/// Points of the degree-2 symmetric triangle rule (barycentric).
pub const TRI3_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// `[a, b]_Gamma = int (a x nu) . b`, exact for facewise linear fields.
pub fn boundary_pairing(surface: &SurfaceMesh, a: &FaceField, b: &FaceField) -> f64 {
    let mut sum = 0.0;
    for f in 0..surface.n_triangles() {
        let nu = surface.normals[f];
        let mut face = 0.0;
        for q in TRI3_POINTS {
            face += a.eval(f, q).cross(&nu).dot(&b.eval(f, q));
        }
        sum += surface.areas[f] * face / 3.0;
    }
    sum
}

/// `int a . b` over the surface, exact for facewise linear fields.
pub fn surface_inner(surface: &SurfaceMesh, a: &FaceField, b: &FaceField) -> f64 {
    let mut sum = 0.0;
    for f in 0..surface.n_triangles() {
        let face: f64 = TRI3_POINTS.iter().map(|&q| a.eval(f, q).dot(&b.eval(f, q))).sum();
        sum += surface.areas[f] * face / 3.0;
    }
    sum
}

/// Block-diagonal dG mass matrix. Every 12x12 block is `I_3` (x) the
/// scalar P1 mass matrix of the tet; the scalar blocks are stored with
/// their Cholesky factors.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    blocks: Vec<Matrix4<f64>>,
    chol: Vec<Matrix4<f64>>,
}

fn scalar_block(volume: f64) -> Matrix4<f64> {
    Matrix4::from_fn(|a, b| if a == b { volume / 10.0 } else { volume / 20.0 })
}

impl MassMatrix {
    pub fn n_dofs(&self) -> usize {
        DOFS_PER_TET * self.blocks.len()
    }

    /// Scalar 4x4 block of tet `t`.
    pub fn scalar_block(&self, t: usize) -> &Matrix4<f64> {
        &self.blocks[t]
    }

    /// Full 12x12 block of tet `t`.
    pub fn block(&self, t: usize) -> DMatrix<f64> {
        let s = &self.blocks[t];
        DMatrix::from_fn(12, 12, |i, j| if i % 3 == j % 3 { s[(i / 3, j / 3)] } else { 0.0 })
    }

    fn map_blocks(&self, u: &DVector<f64>, f: impl Fn(usize, Vector4<f64>) -> Vector4<f64> + Sync) -> DVector<f64> {
        assert_eq!(u.len(), self.n_dofs(), "dG vector length mismatch");
        let mut out = DVector::zeros(u.len());
        out.as_mut_slice().par_chunks_mut(DOFS_PER_TET).enumerate().for_each(|(t, chunk)| {
            for c in 0..3 {
                let x = Vector4::from_fn(|a, _| u[dof(t, a, c)]);
                let y = f(t, x);
                for a in 0..4 {
                    chunk[3 * a + c] = y[a];
                }
            }
        });
        out
    }

    pub fn mul(&self, u: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(u, |t, x| self.blocks[t] * x)
    }

    /// `M^{-1} u` by blockwise Cholesky solves.
    pub fn solve(&self, u: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(u, |t, x| {
            let l = &self.chol[t];
            let y = l.solve_lower_triangular(&x).expect("nonsingular factor");
            l.transpose().solve_upper_triangular(&y).expect("nonsingular factor")
        })
    }

    /// `L^{-1} u` with `M = L L^T`.
    pub fn l_solve(&self, u: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(u, |t, x| self.chol[t].solve_lower_triangular(&x).expect("nonsingular factor"))
    }

    /// `L^{-T} u` with `M = L L^T`.
    pub fn lt_solve(&self, u: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(u, |t, x| self.chol[t].transpose().solve_upper_triangular(&x).expect("nonsingular factor"))
    }

    /// `u^T M u`.
    pub fn norm_sq(&self, u: &DVector<f64>) -> f64 {
        u.dot(&self.mul(u))
    }

    pub fn inner(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        u.dot(&self.mul(w))
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n_dofs(), self.n_dofs());
        for (t, s) in self.blocks.iter().enumerate() {
            for a in 0..4 {
                for bb in 0..4 {
                    for c in 0..3 {
                        b.add(dof(t, a, c), dof(t, bb, c), s[(a, bb)]);
                    }
                }
            }
        }
        b.build()
    }
}

/// Elementwise linear vector fields on a tetrahedral mesh.
#[derive(Debug)]
pub struct DgSpace {
    pub mesh: TetMesh,
    pub surface: SurfaceMesh,
    pub interior_faces: Vec<InteriorFace>,
    volumes: Vec<f64>,
    grads: Vec<[Vec3; 4]>,
    curl_a: OnceLock<CsrMatrix>,
}

impl DgSpace {
    pub fn new(mesh: TetMesh) -> Result<Self> {
        let n = mesh.n_tets();
        let mut volumes = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for t in 0..n {
            let p = mesh.tet_points(t);
            let vol = mesh.tet_volume(t);
            let h = mesh.tet_diameter(t);
            if !(vol >= 1e-14 * h * h * h) {
                return Err(Error::DegenerateTet { tet: t, volume: vol });
            }
            let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
            let jinv = j.try_inverse().ok_or(Error::DegenerateTet { tet: t, volume: vol })?;
            let g1 = jinv.row(0).transpose();
            let g2 = jinv.row(1).transpose();
            let g3 = jinv.row(2).transpose();
            grads.push([-(g1 + g2 + g3), g1, g2, g3]);
            volumes.push(vol);
        }
        let (interior_faces, _) = mesh.classify_faces()?;
        let surface = extract_boundary(&mesh)?;
        Ok(DgSpace { mesh, surface, interior_faces, volumes, grads, curl_a: OnceLock::new() })
    }

    pub fn n_tets(&self) -> usize {
        self.volumes.len()
    }

    pub fn total_dofs(&self) -> usize {
        DOFS_PER_TET * self.n_tets()
    }

    pub fn volume(&self, t: usize) -> f64 {
        self.volumes[t]
    }

    /// Gradients of the barycentric coordinates of tet `t`.
    pub fn grads(&self, t: usize) -> &[Vec3; 4] {
        &self.grads[t]
    }

    /// Local index of global vertex `v` in tet `t`.
    pub fn local_index(&self, t: usize, v: usize) -> Option<usize> {
        self.mesh.tets[t].iter().position(|&w| w == v)
    }

    /// Nodal value of `u` at local vertex `a` of tet `t`.
    pub fn nodal(&self, u: &DVector<f64>, t: usize, a: usize) -> Vec3 {
        Vec3::new(u[dof(t, a, 0)], u[dof(t, a, 1)], u[dof(t, a, 2)])
    }

    /// Value of `u` on tet `t` at barycentric point `b`.
    pub fn eval(&self, u: &DVector<f64>, t: usize, b: [f64; 4]) -> Vec3 {
        (0..4).map(|a| self.nodal(u, t, a) * b[a]).sum()
    }

    /// Elementwise curl of `u` on tet `t` (constant).
    pub fn curl_on(&self, u: &DVector<f64>, t: usize) -> Vec3 {
        (0..4).map(|a| self.grads[t][a].cross(&self.nodal(u, t, a))).sum()
    }

    /// Nodal interpolation of a vector field.
    pub fn interpolate(&self, f: impl Fn(Vec3) -> Vec3 + Sync) -> DVector<f64> {
        let mut u = DVector::zeros(self.total_dofs());
        u.as_mut_slice().par_chunks_mut(DOFS_PER_TET).enumerate().for_each(|(t, chunk)| {
            for (a, &v) in self.mesh.tets[t].iter().enumerate() {
                let val = f(self.mesh.vertices[v]);
                chunk[3 * a..3 * a + 3].copy_from_slice(val.as_slice());
            }
        });
        u
    }

    pub fn assemble_mass(&self) -> Result<MassMatrix> {
        let mut blocks = Vec::with_capacity(self.n_tets());
        let mut chol = Vec::with_capacity(self.n_tets());
        for (t, &v) in self.volumes.iter().enumerate() {
            let s = scalar_block(v);
            let l = s
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite(format!("mass block of tet {t}")))?
                .l();
            blocks.push(s);
            chol.push(l);
        }
        Ok(MassMatrix { blocks, chol })
    }

    /// Element matrix `A_K[j, j'] = (curl b_j', b_j)_K` (local numbering).
    pub fn element_curl(&self, t: usize) -> DMatrix<f64> {
        let quarter = self.volumes[t] / 4.0;
        DMatrix::from_fn(12, 12, |j, jp| {
            let (c, ap, cp) = (j % 3, jp / 3, jp % 3);
            self.grads[t][ap].cross(&unit(cp))[c] * quarter
        })
    }

    fn face_local(&self, f: &InteriorFace) -> ([usize; 3], [usize; 3]) {
        let lo = f.nodes.map(|v| self.local_index(f.owner, v).expect("face vertex in owner"));
        let ln = f.nodes.map(|v| self.local_index(f.neighbor, v).expect("face vertex in neighbor"));
        (lo, ln)
    }

    fn face_geometry(&self, f: &InteriorFace) -> (Vec3, f64) {
        let p = f.nodes.map(|v| self.mesh.vertices[v]);
        let cr = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let n = cr.norm();
        (cr / n, 0.5 * n)
    }

    /// Matrix `A[j, j'] = (curl_h b_j', b_j)`: element curls plus the
    /// centred flux `int_F ((u_o - u_n) x nu_F) . {w}` over interior faces,
    /// `nu_F` pointing out of the owner.
    pub fn curl_matrix_a(&self) -> &CsrMatrix {
        self.curl_a.get_or_init(|| {
            let n = self.total_dofs();
            let elem: Vec<Vec<(usize, usize, f64)>> = (0..self.n_tets())
                .into_par_iter()
                .map(|t| {
                    let a = self.element_curl(t);
                    let mut out = Vec::with_capacity(96);
                    for j in 0..12 {
                        for jp in 0..12 {
                            if a[(j, jp)] != 0.0 {
                                out.push((DOFS_PER_TET * t + j, DOFS_PER_TET * t + jp, a[(j, jp)]));
                            }
                        }
                    }
                    out
                })
                .collect();
            let faces: Vec<Vec<(usize, usize, f64)>> = self
                .interior_faces
                .par_iter()
                .map(|f| {
                    let (nu, area) = self.face_geometry(f);
                    let (lo, ln) = self.face_local(f);
                    let sides = [(f.owner, lo, 1.0), (f.neighbor, ln, -1.0)];
                    let mut out = Vec::with_capacity(4 * 9 * 6);
                    for &(tu, lu, su) in &sides {
                        for &(tw, lw, _) in &sides {
                            for p in 0..3 {
                                for q in 0..3 {
                                    let fm = if p == q { area / 6.0 } else { area / 12.0 };
                                    for cp in 0..3 {
                                        let tvec = unit(cp).cross(&nu);
                                        for c in 0..3 {
                                            let v = su * 0.5 * fm * tvec[c];
                                            if v != 0.0 {
                                                out.push((dof(tw, lw[q], c), dof(tu, lu[p], cp), v));
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    out
                })
                .collect();
            let mut b = TripletBuilder::new(n, n);
            for (i, j, v) in elem.into_iter().chain(faces).flatten() {
                b.add(i, j, v);
            }
            b.build()
        })
    }

    /// Load vector `w -> (curl_h u, w)`.
    pub fn apply_discrete_curl(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.total_dofs() {
            return Err(Error::Dimension { expected: self.total_dofs(), got: u.len() });
        }
        Ok(self.curl_matrix_a().mul_vec(u))
    }

    /// `D = -1/2 (A + A^T)`, symmetric by construction.
    pub fn assemble_curl_matrix(&self) -> CsrMatrix {
        let a = self.curl_matrix_a();
        let n = a.nrows;
        let mut b = TripletBuilder::new(n, n);
        let mut seen = std::collections::BTreeSet::new();
        for (i, j, _) in a.triplets() {
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                let v = -0.5 * (a.get(key.0, key.1) + a.get(key.1, key.0));
                b.add(key.0, key.1, v);
                if key.0 != key.1 {
                    b.add(key.1, key.0, v);
                }
            }
        }
        b.build()
    }

    /// `gamma_T u = u|_Gamma x nu` on boundary face `face`, as nodal values
    /// at the surface triangle's vertices.
    pub fn tangential_trace(&self, u: &DVector<f64>, face: usize) -> Result<[Vec3; 3]> {
        if face >= self.surface.n_triangles() {
            return Err(Error::InvalidArgument(format!(
                "face {face} is not a boundary face (have {})",
                self.surface.n_triangles()
            )));
        }
        let t = self.surface.owners[face];
        let nu = self.surface.normals[face];
        let tri = self.surface.triangles[face];
        let mut out = [Vec3::zeros(); 3];
        for (p, &node) in tri.iter().enumerate() {
            let a = self.local_index(t, self.surface.node_map[node]).expect("face vertex in owner");
            out[p] = self.nodal(u, t, a).cross(&nu);
        }
        Ok(out)
    }

    /// Tangential trace on the whole boundary.
    pub fn trace_field(&self, u: &DVector<f64>) -> FaceField {
        FaceField {
            values: (0..self.surface.n_triangles())
                .map(|f| self.tangential_trace(u, f).expect("boundary face"))
                .collect(),
        }
    }
}

/// Facewise linear, globally continuous tangential fields
/// `sum_k N_k (c_k x nu)`, with candidates `N_k (e_i x nu)` filtered to a
/// linearly independent set.
#[derive(Debug, Clone)]
pub struct BoundarySpace {
    pub surface: SurfaceMesh,
    /// Retained candidate indices `3 k + i` (surface node `k`, axis `i`).
    pub kept: Vec<usize>,
    pub dim: usize,
    /// Candidate index -> basis index.
    index: Vec<Option<usize>>,
    /// Surface gradients of the barycentric coordinates, per face.
    face_grads: Vec<[Vec3; 3]>,
}

/// Default relative tolerance of the rank filter.
pub const RANK_TOL: f64 = 1e-10;

/// Greedy pivoted Cholesky of a symmetric PSD matrix. Returns the pivot
/// indices whose remaining diagonal exceeds `tol * max diag`.
pub fn pivoted_cholesky_pivots(g: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let n = g.nrows();
    let scale = (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let mut diag: Vec<f64> = (0..n).map(|i| g[(i, i)]).collect();
    let mut l: Vec<DVector<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut used = vec![false; n];
    loop {
        let mut best = None;
        for i in 0..n {
            if !used[i] && best.is_none_or(|b: usize| diag[i] > diag[b]) {
                best = Some(i);
            }
        }
        let Some(p) = best else { break };
        if !(diag[p] > tol * scale) {
            break;
        }
        used[p] = true;
        let d = diag[p].sqrt();
        let mut col = DVector::from_fn(n, |i, _| g[(i, p)]);
        for prev in &l {
            let f = prev[p];
            col.axpy(-f, prev, 1.0);
        }
        col /= d;
        for i in 0..n {
            diag[i] -= col[i] * col[i];
        }
        l.push(col);
        pivots.push(p);
    }
    pivots
}

impl BoundarySpace {
    pub fn new(surface: &SurfaceMesh) -> Self {
        Self::with_tolerance(surface, RANK_TOL)
    }

    /// Candidates only couple through their node, so the Gram matrix is
    /// filtered node by node; the relative tolerance refers to the largest
    /// candidate norm on the whole surface.
    pub fn with_tolerance(surface: &SurfaceMesh, rank_tol: f64) -> Self {
        let nn = surface.n_nodes();
        let mut node_gram = vec![Matrix3::<f64>::zeros(); nn];
        for f in 0..surface.n_triangles() {
            let nu = surface.normals[f];
            let proj = Matrix3::identity() - nu * nu.transpose();
            for &k in &surface.triangles[f] {
                node_gram[k] += proj * (surface.areas[f] / 6.0);
            }
        }
        let scale = node_gram.iter().map(|g| g.diagonal().max()).fold(0.0, f64::max);
        let mut kept = Vec::new();
        for (k, g) in node_gram.iter().enumerate() {
            let gd = DMatrix::from_fn(3, 3, |i, j| g[(i, j)]);
            let local_scale = gd.diagonal().max();
            if local_scale <= rank_tol * scale {
                continue;
            }
            let mut piv = pivoted_cholesky_pivots(&gd, rank_tol * scale / local_scale);
            piv.sort_unstable();
            kept.extend(piv.into_iter().map(|i| 3 * k + i));
        }
        let mut index = vec![None; 3 * nn];
        for (b, &c) in kept.iter().enumerate() {
            index[c] = Some(b);
        }
        let face_grads = (0..surface.n_triangles())
            .map(|f| {
                let p = surface.triangle_points(f);
                let nu = surface.normals[f];
                let a2 = 2.0 * surface.areas[f];
                [0, 1, 2].map(|i| nu.cross(&(p[(i + 2) % 3] - p[(i + 1) % 3])) / a2)
            })
            .collect();
        BoundarySpace { surface: surface.clone(), dim: kept.len(), kept, index, face_grads }
    }

    /// Basis index of candidate `N_k (e_i x nu)`, if retained.
    pub fn basis_index(&self, node: usize, axis: usize) -> Option<usize> {
        self.index[3 * node + axis]
    }

    /// `e_i x nu_f`.
    pub fn tangent(&self, f: usize, axis: usize) -> Vec3 {
        unit(axis).cross(&self.surface.normals[f])
    }

    /// Surface gradient of the barycentric coordinate of local vertex `p`.
    pub fn face_grad(&self, f: usize, p: usize) -> Vec3 {
        self.face_grads[f][p]
    }

    /// Basis functions living on face `f`: (local vertex, axis, basis index).
    pub fn face_dofs(&self, f: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let tri = self.surface.triangles[f];
        (0..3).flat_map(move |p| (0..3).filter_map(move |i| self.basis_index(tri[p], i).map(|b| (p, i, b))))
    }

    /// Surface divergence of basis function `(p, axis)` on face `f`.
    pub fn div_local(&self, f: usize, p: usize, axis: usize) -> f64 {
        self.face_grads[f][p].dot(&self.tangent(f, axis))
    }

    /// Facewise constant surface divergence of the field with coefficients `c`.
    pub fn divergence(&self, c: &DVector<f64>) -> Vec<f64> {
        (0..self.surface.n_triangles())
            .map(|f| self.face_dofs(f).map(|(p, i, b)| c[b] * self.div_local(f, p, i)).sum())
            .collect()
    }

    pub fn field(&self, c: &DVector<f64>) -> FaceField {
        let values = (0..self.surface.n_triangles())
            .map(|f| {
                let mut v = [Vec3::zeros(); 3];
                for (p, i, b) in self.face_dofs(f) {
                    v[p] += self.tangent(f, i) * c[b];
                }
                v
            })
            .collect();
        FaceField { values }
    }

    /// Complex coefficients give a pair of real fields (re, im).
    pub fn field_complex(&self, c: &DVector<crate::Complex64>) -> (FaceField, FaceField) {
        (self.field(&c.map(|z| z.re)), self.field(&c.map(|z| z.im)))
    }

    /// L^2(Gamma) Gram matrix of the retained basis.
    pub fn gram(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.dim, self.dim);
        for f in 0..self.surface.n_triangles() {
            let area = self.surface.areas[f];
            let dofs: Vec<_> = self.face_dofs(f).collect();
            for &(p, i, bi) in &dofs {
                for &(q, j, bj) in &dofs {
                    let fm = if p == q { area / 6.0 } else { area / 12.0 };
                    let v = fm * self.tangent(f, i).dot(&self.tangent(f, j));
                    if v != 0.0 {
                        b.add(bi, bj, v);
                    }
                }
            }
        }
        b.build()
    }

    /// Load vector `int g . b_k` for a facewise linear field `g`.
    pub fn load(&self, g: &FaceField) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim);
        for f in 0..self.surface.n_triangles() {
            let area = self.surface.areas[f];
            for (p, i, b) in self.face_dofs(f) {
                let t = self.tangent(f, i);
                let mut s = 0.0;
                for q in 0..3 {
                    let fm = if p == q { area / 6.0 } else { area / 12.0 };
                    s += fm * g.values[f][q].dot(&t);
                }
                r[b] += s;
            }
        }
        r
    }

    /// L^2 projection of `g` onto the space. Also returns the relative
    /// L^2 distance between `g` and its projection.
    pub fn project(&self, g: &FaceField) -> Result<(DVector<f64>, f64)> {
        let gram = self.gram().to_dense();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("boundary Gram matrix".into()))?;
        let c = chol.solve(&self.load(g));
        let pg = self.field(&c);
        let diff = FaceField {
            values: g.values.iter().zip(&pg.values).map(|(a, b)| [0, 1, 2].map(|i| a[i] - b[i])).collect(),
        };
        let nd = surface_inner(&self.surface, &diff, &diff).max(0.0).sqrt();
        let ng = surface_inner(&self.surface, g, g).max(0.0).sqrt();
        Ok((c, if ng > 0.0 { nd / ng } else { nd }))
    }
}

/// `C1[j, k] = 1/2 [b_k, gamma_T b_j]_Gamma`, rows are interior dofs.
pub fn assemble_c1(space: &DgSpace, bspace: &BoundarySpace) -> CsrMatrix {
    let surface = &space.surface;
    let mut b = TripletBuilder::new(space.total_dofs(), bspace.dim);
    for f in 0..surface.n_triangles() {
        let t = surface.owners[f];
        let area = surface.areas[f];
        let tri = surface.triangles[f];
        let local = tri.map(|k| space.local_index(t, surface.node_map[k]).expect("face vertex in owner"));
        for (p, i, k) in bspace.face_dofs(f) {
            let tan = bspace.tangent(f, i);
            for q in 0..3 {
                let fm = if p == q { area / 6.0 } else { area / 12.0 };
                for c in 0..3 {
                    // ((tan x nu) . (e_c x nu)) = tan_c for tangential tan
                    let v = 0.5 * fm * tan[c];
                    if v != 0.0 {
                        b.add(dof(t, local[q], c), k, v);
                    }
                }
            }
        }
    }
    b.build()
}

/// `(C1, C0)` with `C0 = C1 / mu`.
pub fn assemble_coupling(space: &DgSpace, bspace: &BoundarySpace, material: &MaterialParams) -> (CsrMatrix, CsrMatrix) {
    let c1 = assemble_c1(space, bspace);
    let c0 = c1.scaled(1.0 / material.mu);
    (c1, c0)
}

/// Residual of the discrete Green formula
/// `(curl_h u, w) - (u, curl_h w) = [gamma_T w, gamma_T u]_Gamma`.
pub fn check_discrete_green(space: &DgSpace, u: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    let cu = space.apply_discrete_curl(u)?;
    let cw = space.apply_discrete_curl(w)?;
    let lhs = cu.dot(w) - cw.dot(u);
    let rhs = boundary_pairing(&space.surface, &space.trace_field(w), &space.trace_field(u));
    Ok((lhs - rhs).abs())
}

/// Assembled interior matrices of the semi-discrete system.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub mass: MassMatrix,
    pub d: CsrMatrix,
    pub c1: CsrMatrix,
    pub c0: CsrMatrix,
    /// L^2(Gamma) Gram matrix of the boundary basis (diagnostics only).
    pub mg_l2: CsrMatrix,
    pub material: MaterialParams,
}

impl OperatorSet {
    pub fn assemble(space: &DgSpace, bspace: &BoundarySpace, material: MaterialParams) -> Result<Self> {
        let mass = space.assemble_mass()?;
        let d = space.assemble_curl_matrix();
        let (c1, c0) = assemble_coupling(space, bspace, &material);
        Ok(OperatorSet { mass, d, c1, c0, mg_l2: bspace.gram(), material })
    }

    pub fn n_interior(&self) -> usize {
        self.d.nrows
    }

    pub fn n_boundary(&self) -> usize {
        self.c1.ncols
    }
}
