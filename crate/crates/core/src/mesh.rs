//! Tetrahedral meshes of the interior domain and the boundary triangulation.
//!
//! Meshes are built on tensor-product grids with the Kuhn (Freudenthal)
//! six-tetrahedron split of every cell. The split is translation invariant,
//! so neighbouring cells always produce matching faces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result, Vec3};

/// A boundary face: vertex triple oriented so that the right-hand normal
/// points out of the owner tetrahedron (and therefore out of the domain).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    pub nodes: [usize; 3],
    pub owner: usize,
}

/// An interior face shared by two tetrahedra. The vertex triple is oriented
/// so that its normal is the outward normal of `owner` (the lower tet
/// index) and points into `neighbor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteriorFace {
    pub nodes: [usize; 3],
    pub owner: usize,
    pub neighbor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub boundary_faces: Vec<BoundaryFace>,
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub nodes: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Vec3>,
    /// Surface node -> volume vertex.
    pub node_map: Vec<usize>,
    /// Triangle -> owner tetrahedron.
    pub owners: Vec<usize>,
    pub areas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics {
    pub h_max: f64,
    pub h_min: f64,
    pub quasi_uniformity_ratio: f64,
    pub n_tets: usize,
    pub n_boundary_faces: usize,
}

/// Local faces of a positively oriented tet `[a, b, c, d]`, each listed
/// with outward orientation, indexed by the opposite local vertex.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

fn signed_volume(p: [Vec3; 4]) -> f64 {
    (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// True if `a` and `b` list the same three vertices in the same cyclic order.
fn same_cyclic_order(a: [usize; 3], b: [usize; 3]) -> bool {
    (0..3).any(|r| a == [b[r], b[(r + 1) % 3], b[(r + 2) % 3]])
}

impl TetMesh {
    /// Build a mesh from raw connectivity. Negatively oriented tets are
    /// reoriented; the boundary is derived from face incidence.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        if tets.is_empty() {
            return Err(Error::NoCells);
        }
        for (t, tet) in tets.iter_mut().enumerate() {
            for &v in tet.iter() {
                if v >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        record: format!("tet {t}"),
                        msg: format!("vertex index {v} >= vertex count {}", vertices.len()),
                    });
                }
            }
            let vol = signed_volume(tet.map(|v| vertices[v]));
            if vol < 0.0 {
                tet.swap(2, 3);
            }
        }
        let mut mesh = TetMesh { vertices, tets, boundary_faces: Vec::new() };
        for t in 0..mesh.tets.len() {
            let vol = mesh.tet_volume(t);
            if !(vol > 0.0) {
                return Err(Error::DegenerateTet { tet: t, volume: vol });
            }
        }
        let (_, boundary) = mesh.classify_faces()?;
        mesh.boundary_faces = boundary;
        Ok(mesh)
    }

    /// Assemble a mesh from all three sections (as read from a file) and
    /// check that the boundary section matches the face incidence.
    pub fn from_parts(
        vertices: Vec<Vec3>,
        tets: Vec<[usize; 4]>,
        boundary: Vec<BoundaryFace>,
    ) -> Result<Self> {
        for (k, f) in boundary.iter().enumerate() {
            if f.owner >= tets.len() {
                return Err(Error::IndexOutOfRange {
                    record: format!("boundary {k}"),
                    msg: format!("owner tet {} >= tet count {}", f.owner, tets.len()),
                });
            }
            for &v in &f.nodes {
                if v >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        record: format!("boundary {k}"),
                        msg: format!("vertex index {v} >= vertex count {}", vertices.len()),
                    });
                }
            }
        }
        let mesh = TetMesh::new(vertices, tets)?;
        let derived: BTreeMap<[usize; 3], BoundaryFace> =
            mesh.boundary_faces.iter().map(|f| (sorted3(f.nodes), *f)).collect();
        if derived.len() != boundary.len() {
            return Err(Error::Structure(format!(
                "boundary section lists {} faces, incidence gives {}",
                boundary.len(),
                derived.len()
            )));
        }
        for (k, f) in boundary.iter().enumerate() {
            match derived.get(&sorted3(f.nodes)) {
                Some(d) if d.owner == f.owner => {}
                _ => {
                    return Err(Error::Structure(format!(
                        "boundary {k} ({:?}, owner {}) is not a boundary face of its owner",
                        f.nodes, f.owner
                    )))
                }
            }
        }
        // keep the file's ordering but the derived (outward) orientation
        let boundary_faces = boundary.iter().map(|f| derived[&sorted3(f.nodes)]).collect();
        Ok(TetMesh { boundary_faces, ..mesh })
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, t: usize) -> [Vec3; 4] {
        self.tets[t].map(|v| self.vertices[v])
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(self.tet_points(t))
    }

    pub fn tet_centroid(&self, t: usize) -> Vec3 {
        let p = self.tet_points(t);
        (p[0] + p[1] + p[2] + p[3]) / 4.0
    }

    /// Largest edge length of tet `t`.
    pub fn tet_diameter(&self, t: usize) -> f64 {
        let p = self.tet_points(t);
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                d = d.max((p[i] - p[j]).norm());
            }
        }
        d
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.tet_volume(t)).sum()
    }

    /// Split all faces into interior faces (shared by two tets) and
    /// boundary faces. Faces shared by more than two tets are rejected.
    pub fn classify_faces(&self) -> Result<(Vec<InteriorFace>, Vec<BoundaryFace>)> {
        let mut incidence: BTreeMap<[usize; 3], Vec<(usize, [usize; 3])>> = BTreeMap::new();
        for (t, tet) in self.tets.iter().enumerate() {
            for lf in LOCAL_FACES {
                let f = lf.map(|i| tet[i]);
                incidence.entry(sorted3(f)).or_default().push((t, f));
            }
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for (key, inc) in incidence {
            match inc.as_slice() {
                [(t, f)] => boundary.push(BoundaryFace { nodes: *f, owner: *t }),
                [(t0, f0), (t1, _)] => {
                    let (owner, neighbor) = if t0 < t1 { (*t0, *t1) } else { (*t1, *t0) };
                    let nodes = if owner == *t0 { *f0 } else { inc[1].1 };
                    interior.push(InteriorFace { nodes, owner, neighbor });
                }
                _ => {
                    return Err(Error::Structure(format!(
                        "face {:?} is shared by {} tets",
                        key,
                        inc.len()
                    )))
                }
            }
        }
        boundary.sort_by_key(|f| (f.owner, sorted3(f.nodes)));
        Ok((interior, boundary))
    }

    /// Check that every interior face is seen with opposite orientations
    /// from its two tets.
    pub fn interior_orientation_consistent(&self) -> Result<bool> {
        let (interior, _) = self.classify_faces()?;
        for f in &interior {
            let from_neighbor = LOCAL_FACES
                .iter()
                .map(|lf| lf.map(|i| self.tets[f.neighbor][i]))
                .find(|g| sorted3(*g) == sorted3(f.nodes))
                .ok_or_else(|| Error::Structure("face lost".into()))?;
            if same_cyclic_order(f.nodes, from_neighbor) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// SHA-256 of the canonical text serialisation.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        hex::encode(h.finalize())
    }

    /// Serialise in the ASCII `tetmesh 1` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tetmesh 1");
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
        }
        let _ = writeln!(s, "tets {}", self.tets.len());
        for t in &self.tets {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        let _ = writeln!(s, "boundary {}", self.boundary_faces.len());
        for f in &self.boundary_faces {
            let _ = writeln!(s, "{} {} {} {}", f.nodes[0], f.nodes[1], f.nodes[2], f.owner);
        }
        s
    }

    /// Parse the ASCII `tetmesh 1` format.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| Error::Parse {
                line: text.lines().count() + 1,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, header) = next("header")?;
        if header != "tetmesh 1" {
            return Err(Error::Parse { line: ln, msg: format!("expected \"tetmesh 1\", found {header:?}") });
        }
        let n_vert = section_count(next("vertices section")?, "vertices")?;
        let mut vertices = Vec::with_capacity(n_vert);
        for _ in 0..n_vert {
            let (ln, l) = next("vertex coordinates")?;
            let x: [f64; 3] = parse_fields(ln, l, "three coordinates")?;
            vertices.push(Vec3::new(x[0], x[1], x[2]));
        }
        let n_tets = section_count(next("tets section")?, "tets")?;
        if n_tets == 0 {
            return Err(Error::NoCells);
        }
        let mut tets = Vec::with_capacity(n_tets);
        for _ in 0..n_tets {
            let (ln, l) = next("tet record")?;
            tets.push(parse_fields::<usize, 4>(ln, l, "four vertex indices")?);
        }
        let n_bnd = section_count(next("boundary section")?, "boundary")?;
        let mut boundary = Vec::with_capacity(n_bnd);
        for _ in 0..n_bnd {
            let (ln, l) = next("boundary record")?;
            let r: [usize; 4] = parse_fields(ln, l, "three vertex indices and an owner tet")?;
            boundary.push(BoundaryFace { nodes: [r[0], r[1], r[2]], owner: r[3] });
        }
        TetMesh::from_parts(vertices, tets, boundary)
    }
}

fn section_count((ln, l): (usize, &str), name: &str) -> Result<usize> {
    let mut it = l.split_whitespace();
    match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
        (Some(n), Some(Ok(c)), None) if n == name => Ok(c),
        _ => Err(Error::Parse { line: ln, msg: format!("expected \"{name} <count>\", found {l:?}") }),
    }
}

fn parse_fields<T: std::str::FromStr + Copy + Default, const N: usize>(
    ln: usize,
    l: &str,
    expected: &str,
) -> Result<[T; N]> {
    let toks: Vec<&str> = l.split_whitespace().collect();
    let err = || Error::Parse { line: ln, msg: format!("expected {expected}, found {l:?}") };
    if toks.len() != N {
        return Err(err());
    }
    let mut out = [T::default(); N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = t.parse().map_err(|_| err())?;
    }
    Ok(out)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TetMesh> {
    TetMesh::from_text(&std::fs::read_to_string(path)?)
}

pub fn write_mesh(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mesh.to_text())?;
    Ok(())
}

/// Kuhn split of a tensor grid given its coordinate lines; `keep` selects
/// cells by their centre. Only vertices used by kept cells are emitted.
pub fn build_tensor_grid(
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    keep: impl Fn(Vec3) -> bool,
) -> Result<TetMesh> {
    let (nx, ny, nz) = (xs.len() - 1, ys.len() - 1, zs.len() - 1);
    let grid_index = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut vertex_id: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = Vec3::new(
                    0.5 * (xs[i] + xs[i + 1]),
                    0.5 * (ys[j] + ys[j + 1]),
                    0.5 * (zs[k] + zs[k + 1]),
                );
                if keep(c) {
                    cells.push((i, j, k));
                    for (a, b, d) in corner_offsets() {
                        vertex_id.entry(grid_index(i + a, j + b, k + d)).or_insert(0);
                    }
                }
            }
        }
    }
    let mut vertices = Vec::with_capacity(vertex_id.len());
    for (n, (g, id)) in vertex_id.iter_mut().enumerate() {
        *id = n;
        let i = g % (nx + 1);
        let j = (g / (nx + 1)) % (ny + 1);
        let k = g / ((nx + 1) * (ny + 1));
        vertices.push(Vec3::new(xs[i], ys[j], zs[k]));
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * cells.len());
    for (i, j, k) in cells {
        for p in PERMS {
            let mut pos = [0usize; 3];
            let mut tet = [0usize; 4];
            tet[0] = vertex_id[&grid_index(i, j, k)];
            for (s, &axis) in p.iter().enumerate() {
                pos[axis] = 1;
                tet[s + 1] = vertex_id[&grid_index(i + pos[0], j + pos[1], k + pos[2])];
            }
            tets.push(tet);
        }
    }
    TetMesh::new(vertices, tets)
}

fn corner_offsets() -> impl Iterator<Item = (usize, usize, usize)> {
    (0..8).map(|c| (c & 1, (c >> 1) & 1, (c >> 2) & 1))
}

fn uniform_lines(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
}

/// Axis-aligned box `[0, ex] x [0, ey] x [0, ez]` split into Kuhn tets.
pub fn build_box_mesh(extents: [f64; 3], divisions: [usize; 3]) -> Result<TetMesh> {
    build_box_mesh_at(Vec3::zeros(), extents, divisions)
}

/// Box with lower corner `origin`.
pub fn build_box_mesh_at(origin: Vec3, extents: [f64; 3], divisions: [usize; 3]) -> Result<TetMesh> {
    for a in 0..3 {
        if !(extents[a] > 0.0) || !extents[a].is_finite() {
            return Err(Error::InvalidArgument(format!("extent {a} must be positive, got {}", extents[a])));
        }
        if divisions[a] == 0 {
            return Err(Error::InvalidArgument(format!("divisions along axis {a} must be >= 1")));
        }
    }
    let lines: Vec<Vec<f64>> =
        (0..3).map(|a| uniform_lines(origin[a], origin[a] + extents[a], divisions[a])).collect();
    build_tensor_grid(&lines[0], &lines[1], &lines[2], |_| true)
}

/// L-shaped prism: the square `[0, arm]^2` minus `(thickness, arm]^2` in the
/// xy-plane, extruded over `[0, thickness]` in z. Volume is
/// `(2 arm thickness - thickness^2) * thickness`.
pub fn build_l_shape_mesh(arm_length: f64, thickness: f64, divisions_per_unit: usize) -> Result<TetMesh> {
    if !(arm_length > 0.0) || !(thickness > 0.0) || divisions_per_unit == 0 {
        return Err(Error::InvalidArgument("L-shape sizes and divisions must be positive".into()));
    }
    if thickness >= arm_length {
        return Err(Error::InvalidArgument(format!(
            "thickness {thickness} must be smaller than arm length {arm_length}"
        )));
    }
    let n = divisions_per_unit as f64;
    let cells = |len: f64| ((len * n).ceil() as usize).max(1);
    let mut xy = uniform_lines(0.0, thickness, cells(thickness));
    let rest = uniform_lines(thickness, arm_length, cells(arm_length - thickness));
    xy.extend_from_slice(&rest[1..]);
    let z = uniform_lines(0.0, thickness, cells(thickness));
    build_tensor_grid(&xy, &xy, &z, |c| c.x < thickness || c.y < thickness)
}

pub fn l_shape_volume(arm_length: f64, thickness: f64) -> f64 {
    (2.0 * arm_length * thickness - thickness * thickness) * thickness
}

/// Boundary triangulation with outward unit normals.
pub fn extract_boundary(mesh: &TetMesh) -> Result<SurfaceMesh> {
    // re-derive incidence so non-manifold input is reported
    mesh.classify_faces()?;
    let mut local: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &mesh.boundary_faces {
        for &v in &f.nodes {
            local.entry(v).or_insert(0);
        }
    }
    let mut node_map = Vec::with_capacity(local.len());
    for (n, (v, id)) in local.iter_mut().enumerate() {
        *id = n;
        node_map.push(*v);
    }
    let nodes: Vec<Vec3> = node_map.iter().map(|&v| mesh.vertices[v]).collect();
    let mut triangles = Vec::with_capacity(mesh.boundary_faces.len());
    let mut normals = Vec::with_capacity(mesh.boundary_faces.len());
    let mut areas = Vec::with_capacity(mesh.boundary_faces.len());
    let mut owners = Vec::with_capacity(mesh.boundary_faces.len());
    for f in &mesh.boundary_faces {
        let tri = f.nodes.map(|v| local[&v]);
        let p = tri.map(|i| nodes[i]);
        let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let area = 0.5 * cross.norm();
        let normal = cross / cross.norm();
        let outward = (p[0] + p[1] + p[2]) / 3.0 - mesh.tet_centroid(f.owner);
        if normal.dot(&outward) <= 0.0 {
            return Err(Error::Structure(format!("boundary face {:?} is not outward oriented", f.nodes)));
        }
        triangles.push(tri);
        normals.push(normal);
        areas.push(area);
        owners.push(f.owner);
    }
    Ok(SurfaceMesh { nodes, triangles, normals, node_map, owners, areas })
}

impl SurfaceMesh {
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_points(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.nodes[i])
    }

    pub fn centroid(&self, f: usize) -> Vec3 {
        let p = self.triangle_points(f);
        (p[0] + p[1] + p[2]) / 3.0
    }

    pub fn diameter(&self, f: usize) -> f64 {
        let p = self.triangle_points(f);
        (p[0] - p[1]).norm().max((p[1] - p[2]).norm()).max((p[2] - p[0]).norm())
    }

    /// `sum over triangles of area * normal`; zero for a closed surface.
    pub fn area_weighted_normal_sum(&self) -> Vec3 {
        self.normals.iter().zip(&self.areas).map(|(n, a)| n * *a).sum()
    }

    /// Euler characteristic `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::BTreeSet::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.nodes.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True if every edge is shared by exactly two triangles traversing it
    /// in opposite directions (closed, consistently oriented surface).
    pub fn is_closed_oriented(&self) -> bool {
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                *directed.entry((t[i], t[(i + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Smallest distance from `x` to any triangle (exact point-triangle distance).
    pub fn distance_to(&self, x: Vec3) -> f64 {
        (0..self.n_triangles())
            .map(|f| point_triangle_distance(x, self.triangle_points(f)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Winding number of the closed surface about `x` (1 inside, 0
    /// outside) from the summed solid angles of the triangles.
    pub fn winding_number(&self, x: Vec3) -> f64 {
        let mut omega = 0.0;
        for f in 0..self.n_triangles() {
            let [a, b, c] = self.triangle_points(f).map(|p| p - x);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            omega += 2.0 * num.atan2(den);
        }
        omega / (4.0 * std::f64::consts::PI)
    }

    pub fn contains(&self, x: Vec3) -> bool {
        self.winding_number(x) > 0.5
    }

    pub fn bounding_diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.nodes {
            for b in &self.nodes {
                d = d.max((a - b).norm());
            }
        }
        d
    }
}

/// Euclidean distance from a point to a closed triangle.
pub fn point_triangle_distance(x: Vec3, p: [Vec3; 3]) -> f64 {
    let e0 = p[1] - p[0];
    let e1 = p[2] - p[0];
    let n = e0.cross(&e1);
    let nn = n.norm_squared();
    // barycentric coordinates of the projection
    let w = x - p[0];
    let l1 = w.cross(&e1).dot(&n) / nn;
    let l2 = e0.cross(&w).dot(&n) / nn;
    if l1 >= 0.0 && l2 >= 0.0 && l1 + l2 <= 1.0 {
        return (w.dot(&n) / nn.sqrt()).abs();
    }
    let seg = |a: Vec3, b: Vec3| {
        let d = b - a;
        let t = ((x - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (x - (a + d * t)).norm()
    };
    seg(p[0], p[1]).min(seg(p[1], p[2])).min(seg(p[2], p[0]))
}

pub fn mesh_metrics(mesh: &TetMesh) -> MeshMetrics {
    let (mut h_max, mut h_min) = (0.0f64, f64::INFINITY);
    for t in 0..mesh.n_tets() {
        let d = mesh.tet_diameter(t);
        h_max = h_max.max(d);
        h_min = h_min.min(d);
    }
    MeshMetrics {
        h_max,
        h_min,
        quasi_uniformity_ratio: h_max / h_min,
        n_tets: mesh.n_tets(),
        n_boundary_faces: mesh.boundary_faces.len(),
    }
}

/// Locate the tet containing `x` (with tolerance); returns the tet and the
/// barycentric coordinates of `x` in it.
pub fn locate_point(mesh: &TetMesh, x: Vec3, tol: f64) -> Option<(usize, [f64; 4])> {
    (0..mesh.n_tets()).find_map(|t| {
        let l = barycentric(mesh.tet_points(t), x);
        l.iter().all(|&c| c >= -tol).then_some((t, l))
    })
}

pub fn barycentric(p: [Vec3; 4], x: Vec3) -> [f64; 4] {
    let vol = signed_volume(p);
    let mut l = [0.0; 4];
    for i in 0..4 {
        let mut q = p;
        q[i] = x;
        l[i] = signed_volume(q) / vol;
    }
    l
}

/// Barycentric coordinates of `x` (assumed in the plane) in triangle `p`.
pub fn barycentric_triangle(p: [Vec3; 3], x: Vec3) -> [f64; 3] {
    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
    let nn = n.norm_squared();
    let a = |u: Vec3, v: Vec3| (u - x).cross(&(v - x)).dot(&n) / nn;
    [a(p[1], p[2]), a(p[2], p[0]), a(p[0], p[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_counts() {
        let m = build_box_mesh([1.0; 3], [1; 3]).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.tets.len(), 6);
        assert_eq!(m.boundary_faces.len(), 12);
        let s = extract_boundary(&m).unwrap();
        assert_eq!(s.n_triangles(), 12);
        assert_eq!(s.n_nodes(), 8);
    }

    #[test]
    fn two_division_counts_match_enumeration() {
        let m = build_box_mesh([1.0; 3], [2; 3]).unwrap();
        assert_eq!(m.vertices.len(), 27);
        assert_eq!(m.tets.len(), 48);
        // independent count: each of the 6 box faces carries 2x2 squares,
        // each square split into 2 triangles
        assert_eq!(m.boundary_faces.len(), 6 * 4 * 2);
    }

    #[test]
    fn volume_is_conserved() {
        let m = build_box_mesh([2.0, 1.0, 1.0], [2, 1, 1]).unwrap();
        assert!((m.total_volume() - 2.0).abs() < 1e-12);
        for t in 0..m.n_tets() {
            assert!(m.tet_volume(t) > 0.0);
        }
    }

    #[test]
    fn invalid_box_arguments() {
        assert!(matches!(build_box_mesh([0.0, 1.0, 1.0], [1; 3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_box_mesh([1.0, -1.0, 1.0], [1; 3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_box_mesh([1.0; 3], [1, 0, 1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn l_shape_volume_and_topology() {
        let m = build_l_shape_mesh(1.0, 0.5, 2).unwrap();
        assert!((m.total_volume() - l_shape_volume(1.0, 0.5)).abs() < 1e-12);
        assert!((l_shape_volume(1.0, 0.5) - 0.375).abs() < 1e-15);
        let s = extract_boundary(&m).unwrap();
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.is_closed_oriented());

        let thin = build_l_shape_mesh(1.0, 0.99, 2).unwrap();
        assert!((0..thin.n_tets()).all(|t| thin.tet_volume(t) > 0.0));
        assert!((thin.total_volume() - l_shape_volume(1.0, 0.99)).abs() < 1e-12);
        assert_eq!(extract_boundary(&thin).unwrap().euler_characteristic(), 2);

        assert!(build_l_shape_mesh(1.0, 1.0, 2).is_err());
        assert!(build_l_shape_mesh(-1.0, 0.5, 2).is_err());
    }

    #[test]
    fn closed_surface_normal_sum_vanishes() {
        for m in [
            build_box_mesh([1.0; 3], [2; 3]).unwrap(),
            build_box_mesh([2.0, 0.5, 1.5], [3, 1, 2]).unwrap(),
            build_l_shape_mesh(1.0, 0.5, 2).unwrap(),
        ] {
            let s = extract_boundary(&m).unwrap();
            assert!(s.area_weighted_normal_sum().norm() < 1e-10);
            for n in &s.normals {
                assert!((n.norm() - 1.0).abs() < 1e-12);
            }
            assert!(m.interior_orientation_consistent().unwrap());
        }
    }

    #[test]
    fn two_division_triangle_areas() {
        let s = extract_boundary(&build_box_mesh([1.0; 3], [2; 3]).unwrap()).unwrap();
        assert_eq!(s.n_triangles(), 48);
        for a in &s.areas {
            assert!((a - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn metrics_scale_with_refinement() {
        let m1 = mesh_metrics(&build_box_mesh([1.0; 3], [1; 3]).unwrap());
        let m2 = mesh_metrics(&build_box_mesh([1.0; 3], [2; 3]).unwrap());
        assert!((m1.h_max - 3f64.sqrt()).abs() < 1e-12);
        assert!((m2.h_max - 0.5 * m1.h_max).abs() < 1e-12);
        assert!((m1.quasi_uniformity_ratio - m2.quasi_uniformity_ratio).abs() < 1e-12);
        assert!(m1.h_max >= m1.h_min && m1.h_min > 0.0);
    }

    #[test]
    fn non_manifold_face_is_reported() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.3, 0.3, 1.0),
        ];
        let err = TetMesh::new(v, vec![[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]]).unwrap_err();
        match err {
            Error::Structure(msg) => assert!(msg.contains("[0, 1, 2]"), "{msg}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut m = build_box_mesh([1.0; 3], [1; 3]).unwrap();
        m.vertices[3].x += 1e-17 + 0.1;
        m.vertices[3].x -= 0.1;
        let back = TetMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.tets, m.tets);
        assert_eq!(back.boundary_faces, m.boundary_faces);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for i in 0..3 {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn parse_errors() {
        let m = build_box_mesh([1.0; 3], [1; 3]).unwrap();
        let bad = m.to_text().replacen("0 1 3 7", "0 1 3 8", 1);
        assert_ne!(bad, m.to_text(), "fixture must contain the replaced tet");
        match TetMesh::from_text(&bad).unwrap_err() {
            Error::IndexOutOfRange { record, .. } => assert!(record.starts_with("tet")),
            e => panic!("unexpected {e}"),
        }
        let empty = "tetmesh 1\nvertices 1\n0 0 0\ntets 0\nboundary 0\n";
        assert_eq!(TetMesh::from_text(empty).unwrap_err().to_string(), "mesh has no cells");
        match TetMesh::from_text("tetmesh 1\nvertices 1\n0 0\n").unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("three coordinates"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn point_location() {
        let m = build_box_mesh([1.0; 3], [2; 3]).unwrap();
        let x = Vec3::new(0.3, 0.7, 0.2);
        let (t, l) = locate_point(&m, x, 1e-12).unwrap();
        let p = m.tet_points(t);
        let back: Vec3 = (0..4).map(|i| p[i] * l[i]).sum();
        assert!((back - x).norm() < 1e-14);
    }

    #[test]
    fn winding_number_inside_outside() {
        let m = build_box_mesh([1.0, 2.0, 0.5], [2, 3, 1]).unwrap();
        let s = extract_boundary(&m).unwrap();
        assert!((s.winding_number(Vec3::new(0.3, 1.1, 0.2)) - 1.0).abs() < 1e-12);
        assert!(s.winding_number(Vec3::new(1.3, 1.1, 0.2)).abs() < 1e-12);
        assert!(s.contains(Vec3::new(0.9, 1.9, 0.45)));
        assert!(!s.contains(Vec3::new(-0.1, 0.5, 0.2)));
    }
}
