//! Conforming tetrahedral meshes of polyhedral domains.
//!
//! Meshes carry global vertex, edge, and boundary-face indexing so that
//! scalar (vertex), edge (Nédélec), and vector discretizations can share one
//! geometry object. A completed [`TetMesh`] is immutable.

mod gmsh;

pub use gmsh::read_gmsh;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative volume threshold below which a tet is rejected as degenerate.
const DEGENERATE_REL_TOL: f64 = 1e-14;

/// Axis-aligned box domain (0,a)x(0,b)x(0,c) with per-axis subdivisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl BoxSpec {
    pub fn new(a: f64, b: f64, c: f64, nx: usize, ny: usize, nz: usize) -> Self {
        BoxSpec {
            a,
            b,
            c,
            nx,
            ny,
            nz,
        }
    }

    /// Cube (0,s)^3 with n subdivisions per axis.
    pub fn cube(s: f64, n: usize) -> Self {
        BoxSpec::new(s, s, s, n, n, n)
    }

    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "box sides must be positive, got ({}, {}, {})",
                self.a, self.b, self.c
            )));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidSpec(format!(
                "subdivision counts must be >= 1, got ({}, {}, {})",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }
}

/// Boundary triangle with outward unit normal and region tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub normal: [f64; 3],
    pub tag: i64,
}

/// Conforming tetrahedral mesh with global edge and boundary indexing.
///
/// Invariants established by every constructor:
/// * all tets have positive signed volume,
/// * every interior face is shared by exactly 2 tets, boundary faces by 1,
/// * the edge list is duplicate-free and sorted lexicographically,
/// * boundary normals are unit length and point away from the adjacent tet.
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    /// Global edges as (lo, hi) vertex pairs, lo < hi, sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Per tet: six (edge id, orientation sign) pairs in local edge order
    /// (0,1),(0,2),(0,3),(1,2),(1,3),(2,3). Sign is +1 iff the local traversal
    /// runs lo -> hi in global vertex ids.
    pub tet_edges: Vec<[(usize, i8); 6]>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub boundary_vertex_flags: Vec<bool>,
    pub boundary_edge_flags: Vec<bool>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Signed volume of the tet spanned by four points.
pub fn signed_volume(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> f64 {
    dot(sub(p1, p0), cross(sub(p2, p0), sub(p3, p0))) / 6.0
}

/// Local vertex pairs of the six tet edges, in canonical order.
pub const TET_EDGE_VERTICES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Enumerate the global edge table and per-tet edge signs.
///
/// Edges are normalized to (lo, hi) with lo < hi and sorted lexicographically,
/// so the output is deterministic for a given vertex/tet list. The per-tet
/// sign is +1 iff the local traversal of the edge runs lo -> hi.
pub fn index_edges(tets: &[[usize; 4]]) -> (Vec<[usize; 2]>, Vec<[(usize, i8); 6]>) {
    let mut set: Vec<[usize; 2]> = Vec::with_capacity(tets.len() * 6);
    for tet in tets {
        for &(a, b) in &TET_EDGE_VERTICES {
            let (va, vb) = (tet[a], tet[b]);
            set.push(if va < vb { [va, vb] } else { [vb, va] });
        }
    }
    set.sort_unstable();
    set.dedup();

    let lookup: BTreeMap<[usize; 2], usize> =
        set.iter().enumerate().map(|(i, e)| (*e, i)).collect();

    let tet_edges = tets
        .iter()
        .map(|tet| {
            let mut entry = [(0usize, 0i8); 6];
            for (slot, &(a, b)) in TET_EDGE_VERTICES.iter().enumerate() {
                let (va, vb) = (tet[a], tet[b]);
                let key = if va < vb { [va, vb] } else { [vb, va] };
                let id = lookup[&key];
                entry[slot] = (id, if va < vb { 1 } else { -1 });
            }
            entry
        })
        .collect();

    (set, tet_edges)
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

impl TetMesh {
    /// Build a mesh from vertices and tets: orient tets positively, reject
    /// degenerate ones, index edges and boundary faces, compute normals.
    ///
    /// `face_tags` maps sorted boundary-face vertex triples to region tags;
    /// untagged boundary faces get tag 0.
    pub fn from_cells(
        vertices: Vec<[f64; 3]>,
        mut tets: Vec<[usize; 4]>,
        face_tags: &BTreeMap<[usize; 3], i64>,
    ) -> Result<TetMesh> {
        if tets.is_empty() {
            return Err(Error::NoTetrahedra);
        }
        for (ti, tet) in tets.iter().enumerate() {
            for &v in tet {
                if v >= vertices.len() {
                    return Err(Error::MeshValidation(format!(
                        "tet {ti} references vertex {v} out of {}",
                        vertices.len()
                    )));
                }
            }
        }

        // Orient positively; reject degenerate tets relative to their own size.
        for (ti, tet) in tets.iter_mut().enumerate() {
            let pts = [
                vertices[tet[0]],
                vertices[tet[1]],
                vertices[tet[2]],
                vertices[tet[3]],
            ];
            let mut vol = signed_volume(pts[0], pts[1], pts[2], pts[3]);
            if vol < 0.0 {
                tet.swap(2, 3);
                vol = -vol;
            }
            let h = TET_EDGE_VERTICES
                .iter()
                .map(|&(a, b)| norm(sub(pts[a], pts[b])))
                .fold(0.0_f64, f64::max);
            if vol < DEGENERATE_REL_TOL * h * h * h {
                return Err(Error::DegenerateTet {
                    tet: ti,
                    volume: vol,
                });
            }
        }

        // Face incidence: interior faces shared by exactly 2 tets.
        let mut face_count: BTreeMap<[usize; 3], (usize, usize)> = BTreeMap::new();
        for (ti, tet) in tets.iter().enumerate() {
            for skip in 0..4 {
                let mut f = [0usize; 3];
                let mut w = 0;
                for (i, &v) in tet.iter().enumerate() {
                    if i != skip {
                        f[w] = v;
                        w += 1;
                    }
                }
                let key = sorted3(f);
                let entry = face_count.entry(key).or_insert((0, ti));
                entry.0 += 1;
                entry.1 = ti;
            }
        }
        let mut boundary_faces = Vec::new();
        for (face, &(count, adj_tet)) in &face_count {
            match count {
                1 => {
                    let tet = tets[adj_tet];
                    let tc = {
                        let mut c = [0.0; 3];
                        for &v in &tet {
                            for d in 0..3 {
                                c[d] += vertices[v][d] / 4.0;
                            }
                        }
                        c
                    };
                    let (p0, p1, p2) = (vertices[face[0]], vertices[face[1]], vertices[face[2]]);
                    let mut n = cross(sub(p1, p0), sub(p2, p0));
                    let len = norm(n);
                    if len == 0.0 {
                        return Err(Error::MeshValidation(format!(
                            "boundary face {face:?} is degenerate"
                        )));
                    }
                    for d in 0..3 {
                        n[d] /= len;
                    }
                    let fc = [
                        (p0[0] + p1[0] + p2[0]) / 3.0,
                        (p0[1] + p1[1] + p2[1]) / 3.0,
                        (p0[2] + p1[2] + p2[2]) / 3.0,
                    ];
                    if dot(n, sub(fc, tc)) < 0.0 {
                        for d in 0..3 {
                            n[d] = -n[d];
                        }
                    }
                    let tag = face_tags.get(face).copied().unwrap_or(0);
                    boundary_faces.push(BoundaryFace {
                        vertices: *face,
                        normal: n,
                        tag,
                    });
                }
                2 => {}
                n => {
                    return Err(Error::MeshValidation(format!(
                        "face {face:?} shared by {n} tets; mesh is not conforming"
                    )))
                }
            }
        }

        let (edges, tet_edges) = index_edges(&tets);

        let mut boundary_vertex_flags = vec![false; vertices.len()];
        for bf in &boundary_faces {
            for &v in &bf.vertices {
                boundary_vertex_flags[v] = true;
            }
        }
        // Boundary edges are the edges of boundary triangles.
        let edge_lookup: BTreeMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let mut boundary_edge_flags = vec![false; edges.len()];
        for bf in &boundary_faces {
            let [a, b, c] = bf.vertices;
            for (u, v) in [(a, b), (a, c), (b, c)] {
                let key = if u < v { [u, v] } else { [v, u] };
                if let Some(&id) = edge_lookup.get(&key) {
                    boundary_edge_flags[id] = true;
                }
            }
        }

        let mesh = TetMesh {
            vertices,
            tets,
            edges,
            tet_edges,
            boundary_faces,
            boundary_vertex_flags,
            boundary_edge_flags,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check every structural invariant; cheap enough to run on construction.
    pub fn validate(&self) -> Result<()> {
        for (ti, tet) in self.tets.iter().enumerate() {
            let v = self.tet_volume(ti);
            if v <= 0.0 {
                return Err(Error::MeshValidation(format!(
                    "tet {ti} {tet:?} has non-positive volume {v}"
                )));
            }
        }
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::MeshValidation(
                    "edge list is not sorted or contains duplicates".into(),
                ));
            }
        }
        for e in &self.edges {
            if e[0] >= e[1] {
                return Err(Error::MeshValidation(format!(
                    "edge {e:?} is not in (lo, hi) order"
                )));
            }
        }
        for bf in &self.boundary_faces {
            let len = norm(bf.normal);
            if (len - 1.0).abs() > 1e-12 {
                return Err(Error::MeshValidation(format!(
                    "boundary normal {:?} has length {len}",
                    bf.normal
                )));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Total number of distinct triangular faces (interior + boundary).
    pub fn face_count(&self) -> usize {
        (4 * self.tets.len() + self.boundary_faces.len()) / 2
    }

    /// Euler characteristic V - E + F - T; equals 1 for a topological ball.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
            - self.tet_count() as i64
    }

    pub fn interior_vertex_count(&self) -> usize {
        self.boundary_vertex_flags.iter().filter(|f| !**f).count()
    }

    pub fn interior_edge_count(&self) -> usize {
        self.boundary_edge_flags.iter().filter(|f| !**f).count()
    }

    pub fn tet_volume(&self, tet: usize) -> f64 {
        let t = self.tets[tet];
        signed_volume(
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
            self.vertices[t[3]],
        )
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Longest edge in the mesh; the usual mesh-size parameter h.
    pub fn h_max(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| norm(sub(self.vertices[e[0]], self.vertices[e[1]])))
            .fold(0.0, f64::max)
    }

    pub fn tet_centroid(&self, tet: usize) -> [f64; 3] {
        let t = self.tets[tet];
        let mut c = [0.0; 3];
        for &v in &t {
            for d in 0..3 {
                c[d] += self.vertices[v][d] / 4.0;
            }
        }
        c
    }

    /// Barycentric point-in-tet test with tolerance relative to tet size.
    pub fn tet_contains(&self, tet: usize, p: [f64; 3], tol: f64) -> bool {
        let t = self.tets[tet];
        let pts = [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
            self.vertices[t[3]],
        ];
        let vol = signed_volume(pts[0], pts[1], pts[2], pts[3]);
        for i in 0..4 {
            let mut q = pts;
            q[i] = p;
            let bary = signed_volume(q[0], q[1], q[2], q[3]) / vol;
            if bary < -tol {
                return false;
            }
        }
        true
    }

    /// Convexity test: every vertex must lie weakly inside every boundary plane.
    pub fn is_convex(&self) -> bool {
        let diam = self.h_max();
        let tol = 1e-9 * diam.max(1.0);
        for bf in &self.boundary_faces {
            let base = self.vertices[bf.vertices[0]];
            for (vi, flag) in self.boundary_vertex_flags.iter().enumerate() {
                if !flag {
                    continue;
                }
                if dot(bf.normal, sub(self.vertices[vi], base)) > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Serialize to the mesh JSON schema.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "vertices": self.vertices,
            "tets": self.tets,
            "boundary_faces": self.boundary_faces,
        })
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        let text = crate::report::to_json_string(&self.to_json_value())?;
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Rebuild a mesh from the JSON schema, re-deriving all indexing.
    pub fn from_json_value(v: &serde_json::Value) -> Result<TetMesh> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: Vec<[f64; 3]>,
            tets: Vec<[usize; 4]>,
            #[serde(default)]
            boundary_faces: Vec<BoundaryFace>,
        }
        let raw: Raw = serde_json::from_value(v.clone())?;
        let tags: BTreeMap<[usize; 3], i64> = raw
            .boundary_faces
            .iter()
            .map(|bf| (sorted3(bf.vertices), bf.tag))
            .collect();
        TetMesh::from_cells(raw.vertices, raw.tets, &tags)
    }

    pub fn read_json(text: &str) -> Result<TetMesh> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        TetMesh::from_json_value(&v)
    }
}

/// Kuhn/Freudenthal triangulation of a box: every grid cell is split into 6
/// tets sharing the cell's main diagonal, with the same diagonal direction in
/// every cell. Doubling (nx,ny,nz) produces a nested refinement.
pub fn build_box_mesh(spec: &BoxSpec) -> Result<TetMesh> {
    spec.validate()?;
    let (nx, ny, nz) = (spec.nx, spec.ny, spec.nz);
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    spec.a * i as f64 / nx as f64,
                    spec.b * j as f64 / ny as f64,
                    spec.c * k as f64 / nz as f64,
                ]);
            }
        }
    }

    // The 6 permutations of the axis order, fixed order for determinism.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];

    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in &PERMS {
                    let mut corner = [i, j, k];
                    let mut path = [idx(i, j, k), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        path[step + 1] = idx(corner[0], corner[1], corner[2]);
                    }
                    tets.push(path);
                }
            }
        }
    }

    // Region tags 1..6 for the box sides x=0, x=a, y=0, y=b, z=0, z=c.
    let on =
        |v: [f64; 3], d: usize, val: f64, scale: f64| (v[d] - val).abs() < 1e-12 * scale.max(1.0);
    let mut tags: BTreeMap<[usize; 3], i64> = BTreeMap::new();
    let sides = [
        (0usize, 0.0, 1i64),
        (0, spec.a, 2),
        (1, 0.0, 3),
        (1, spec.b, 4),
        (2, 0.0, 5),
        (2, spec.c, 6),
    ];
    // Classify candidate faces by scanning tets (cheap: only done once).
    let mut probe: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    for tet in &tets {
        for skip in 0..4 {
            let mut f = [0usize; 3];
            let mut w = 0;
            for (m, &v) in tet.iter().enumerate() {
                if m != skip {
                    f[w] = v;
                    w += 1;
                }
            }
            *probe.entry(sorted3(f)).or_insert(0) += 1;
        }
    }
    let scale = spec.a.max(spec.b).max(spec.c);
    for (face, count) in &probe {
        if *count != 1 {
            continue;
        }
        for &(d, val, tag) in &sides {
            if face.iter().all(|&v| on(vertices[v], d, val, scale)) {
                tags.insert(*face, tag);
                break;
            }
        }
    }

    TetMesh::from_cells(vertices, tets, &tags)
}

/// L-shaped domain fixture: (0,2)x(0,2)x(0,1) minus (1,2)x(1,2)x(0,1),
/// meshed with n cells per unit length. Reentrant edge along x=y=1.
pub fn lshape_fixture(n: usize) -> TetMesh {
    let full =
        build_box_mesh(&BoxSpec::new(2.0, 2.0, 1.0, 2 * n, 2 * n, n)).expect("valid box spec");
    // Keep tets whose centroid lies outside the removed quadrant.
    let keep: Vec<[usize; 4]> = (0..full.tet_count())
        .filter(|&t| {
            let c = full.tet_centroid(t);
            !(c[0] > 1.0 && c[1] > 1.0)
        })
        .map(|t| full.tets[t])
        .collect();
    // Compact vertex numbering.
    let mut used = vec![usize::MAX; full.vertex_count()];
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    for tet in keep {
        let mut mapped = [0usize; 4];
        for (i, &v) in tet.iter().enumerate() {
            if used[v] == usize::MAX {
                used[v] = vertices.len();
                vertices.push(full.vertices[v]);
            }
            mapped[i] = used[v];
        }
        tets.push(mapped);
    }
    TetMesh::from_cells(vertices, tets, &std::collections::BTreeMap::new())
        .expect("L-shape fixture is a valid mesh")
}
