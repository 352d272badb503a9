//! Global sparse stiffness/mass assembly with essential boundary conditions
//! imposed by dof elimination, plus the discrete gradient embedding
//! `grad: P1-Dirichlet -> Nédélec` whose image spans the curl-curl kernel.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elements::{lagrange_local, nedelec_local, TetGeometry};
use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::sparse::{CsrMatrix, SymSparse};

/// Tets per parallel assembly chunk. Chunk boundaries are fixed by index, so
/// the merged triplet order (and hence every floating-point sum) is identical
/// for any worker count.
const CHUNK: usize = 256;

/// The four operators this laboratory assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// Scalar Laplacian, zero boundary values (P1 or P2).
    #[serde(rename = "dirichlet")]
    DirichletLaplacian,
    /// Scalar Laplacian, natural boundary conditions (P1 or P2).
    #[serde(rename = "neumann")]
    NeumannLaplacian,
    /// Maxwell cavity operator on Nédélec edge elements, tangential trace
    /// eliminated on boundary edges.
    #[serde(rename = "curlcurl")]
    CurlCurl,
    /// Combined div-curl form on vector P1 with tangential components
    /// eliminated at boundary vertices; convex domains only.
    #[serde(rename = "bform")]
    BForm,
}

impl OperatorKind {
    pub fn parse(s: &str) -> Result<OperatorKind> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(OperatorKind::DirichletLaplacian),
            "neumann" => Ok(OperatorKind::NeumannLaplacian),
            "curlcurl" => Ok(OperatorKind::CurlCurl),
            "bform" => Ok(OperatorKind::BForm),
            other => Err(Error::InvalidSpec(format!(
                "unknown operator {other:?} (dirichlet | neumann | curlcurl | bform)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::DirichletLaplacian => "dirichlet",
            OperatorKind::NeumannLaplacian => "neumann",
            OperatorKind::CurlCurl => "curlcurl",
            OperatorKind::BForm => "bform",
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    VertexP1,
    VertexEdgeP2,
    EdgeNedelec,
    VectorP1,
}

/// Free directions of one vertex in the vector-P1 space.
#[derive(Debug, Clone)]
pub struct VertexFrame {
    pub first_dof: usize,
    pub directions: Vec<Vector3<f64>>,
}

/// Mesh-entity to degree-of-freedom map with a constrained (boundary) subset.
/// Free dofs are densely numbered in `[0, free_count)`.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: DofKind,
    pub free_count: usize,
    pub constrained_count: usize,
    /// Scalar and edge kinds: entity index -> free dof (None if constrained).
    /// For `VertexEdgeP2` entities are vertices then edges.
    pub entity_to_dof: Vec<Option<usize>>,
    /// `VectorP1` only: per-vertex free directions.
    pub vertex_frames: Vec<VertexFrame>,
}

impl DofMap {
    fn from_mask(kind: DofKind, free_mask: &[bool]) -> DofMap {
        let mut entity_to_dof = Vec::with_capacity(free_mask.len());
        let mut next = 0usize;
        for &free in free_mask {
            if free {
                entity_to_dof.push(Some(next));
                next += 1;
            } else {
                entity_to_dof.push(None);
            }
        }
        DofMap {
            kind,
            free_count: next,
            constrained_count: free_mask.len() - next,
            entity_to_dof,
            vertex_frames: Vec::new(),
        }
    }

    pub fn total_entities(&self) -> usize {
        self.free_count + self.constrained_count
    }
}

/// Scalar P1 map; Dirichlet eliminates boundary vertices.
pub fn dof_map_p1(mesh: &TetMesh, dirichlet: bool) -> DofMap {
    let mask: Vec<bool> = mesh
        .boundary_vertex_flags
        .iter()
        .map(|&b| !(dirichlet && b))
        .collect();
    DofMap::from_mask(DofKind::VertexP1, &mask)
}

/// Scalar P2 map (vertex + edge dofs); Dirichlet eliminates boundary
/// vertices and boundary edges.
pub fn dof_map_p2(mesh: &TetMesh, dirichlet: bool) -> DofMap {
    let mut mask = Vec::with_capacity(mesh.vertex_count() + mesh.edge_count());
    mask.extend(
        mesh.boundary_vertex_flags
            .iter()
            .map(|&b| !(dirichlet && b)),
    );
    mask.extend(mesh.boundary_edge_flags.iter().map(|&b| !(dirichlet && b)));
    DofMap::from_mask(DofKind::VertexEdgeP2, &mask)
}

/// Nédélec edge map; the tangential trace is eliminated on boundary edges.
pub fn dof_map_nedelec(mesh: &TetMesh) -> DofMap {
    let mask: Vec<bool> = mesh.boundary_edge_flags.iter().map(|&b| !b).collect();
    DofMap::from_mask(DofKind::EdgeNedelec, &mask)
}

/// Vector-P1 map for the div-curl form: at a boundary vertex inside exactly
/// one boundary plane only the normal component stays free; where several
/// planes meet every component is eliminated; interior vertices keep all 3.
pub fn dof_map_vector_p1(mesh: &TetMesh) -> DofMap {
    // Distinct adjacent boundary-plane normals per vertex.
    let mut normals: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); mesh.vertex_count()];
    for bf in &mesh.boundary_faces {
        let n = Vector3::from(bf.normal);
        for &v in &bf.vertices {
            let known = normals[v].iter().any(|m| m.dot(&n) > 1.0 - 1e-9);
            if !known {
                normals[v].push(n);
            }
        }
    }
    let mut vertex_frames = Vec::with_capacity(mesh.vertex_count());
    let mut next = 0usize;
    for (v, planes) in normals.iter().enumerate() {
        let directions: Vec<Vector3<f64>> = if !mesh.boundary_vertex_flags[v] {
            vec![Vector3::x(), Vector3::y(), Vector3::z()]
        } else if planes.len() == 1 {
            vec![planes[0]]
        } else {
            Vec::new()
        };
        let first_dof = next;
        next += directions.len();
        vertex_frames.push(VertexFrame {
            first_dof,
            directions,
        });
    }
    DofMap {
        kind: DofKind::VectorP1,
        free_count: next,
        constrained_count: 3 * mesh.vertex_count() - next,
        entity_to_dof: Vec::new(),
        vertex_frames,
    }
}

/// Assembled stiffness/mass pencil on the free dofs.
#[derive(Debug, Clone)]
pub struct AssembledPencil {
    pub stiffness: SymSparse,
    pub mass: SymSparse,
    pub dofs: DofMap,
}

/// Assemble the Galerkin pencil (K, M) of the given operator with essential
/// conditions imposed by elimination. `order` selects P1/P2 for the scalar
/// Laplacians and must be 1 for the edge and vector discretizations.
pub fn assemble(mesh: &TetMesh, op: OperatorKind, order: usize) -> Result<AssembledPencil> {
    let dofs = match op {
        OperatorKind::DirichletLaplacian => match order {
            1 => dof_map_p1(mesh, true),
            2 => dof_map_p2(mesh, true),
            o => return Err(Error::InvalidSpec(format!("order {o} unsupported"))),
        },
        OperatorKind::NeumannLaplacian => match order {
            1 => dof_map_p1(mesh, false),
            2 => dof_map_p2(mesh, false),
            o => return Err(Error::InvalidSpec(format!("order {o} unsupported"))),
        },
        OperatorKind::CurlCurl => {
            if order != 1 {
                return Err(Error::InvalidSpec(
                    "curl-curl uses lowest-order edge elements (order 1)".into(),
                ));
            }
            dof_map_nedelec(mesh)
        }
        OperatorKind::BForm => {
            if order != 1 {
                return Err(Error::InvalidSpec(
                    "the div-curl form uses vector P1 (order 1)".into(),
                ));
            }
            if !mesh.is_convex() {
                return Err(Error::NonConvexDomain(
                    "the div-curl form is spectrally correct on convex polyhedra only".into(),
                ));
            }
            dof_map_vector_p1(mesh)
        }
    };
    if dofs.free_count == 0 {
        return Err(Error::NoFreeDofs(op.to_string()));
    }

    let (k_trip, m_trip) = scatter_all(mesh, op, order, &dofs)?;
    let stiffness = SymSparse::from_triplets(dofs.free_count, k_trip)?;
    let mass = SymSparse::from_triplets(dofs.free_count, m_trip)?;
    Ok(AssembledPencil {
        stiffness,
        mass,
        dofs,
    })
}

type Triplets = Vec<(usize, usize, f64)>;

fn scatter_all(
    mesh: &TetMesh,
    op: OperatorKind,
    order: usize,
    dofs: &DofMap,
) -> Result<(Triplets, Triplets)> {
    let nt = mesh.tet_count();
    let ranges: Vec<(usize, usize)> = (0..nt.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(nt)))
        .collect();
    let per_chunk: Vec<Result<(Triplets, Triplets)>> = ranges
        .par_iter()
        .map(|&(lo, hi)| scatter_range(mesh, op, order, dofs, lo, hi))
        .collect();
    let mut k_trip = Vec::new();
    let mut m_trip = Vec::new();
    for chunk in per_chunk {
        let (k, m) = chunk?;
        k_trip.extend(k);
        m_trip.extend(m);
    }
    Ok((k_trip, m_trip))
}

fn scatter_range(
    mesh: &TetMesh,
    op: OperatorKind,
    order: usize,
    dofs: &DofMap,
    lo: usize,
    hi: usize,
) -> Result<(Triplets, Triplets)> {
    let mut k_trip = Vec::new();
    let mut m_trip = Vec::new();
    for t in lo..hi {
        let tet = mesh.tets[t];
        let geom = TetGeometry::new([
            mesh.vertices[tet[0]],
            mesh.vertices[tet[1]],
            mesh.vertices[tet[2]],
            mesh.vertices[tet[3]],
        ])
        .map_err(|_| Error::DegenerateTet {
            tet: t,
            volume: mesh.tet_volume(t),
        })?;

        match op {
            OperatorKind::DirichletLaplacian | OperatorKind::NeumannLaplacian => {
                let local = lagrange_local(&geom, order)?;
                let entities: Vec<usize> = if order == 1 {
                    tet.to_vec()
                } else {
                    let mut e = tet.to_vec();
                    e.extend(
                        mesh.tet_edges[t]
                            .iter()
                            .map(|&(eid, _)| mesh.vertex_count() + eid),
                    );
                    e
                };
                scatter_scalar(&entities, &local.stiffness, dofs, &mut k_trip);
                scatter_scalar(&entities, &local.mass, dofs, &mut m_trip);
            }
            OperatorKind::CurlCurl => {
                let signs = mesh.tet_edges[t].map(|(_, s)| s);
                let local = nedelec_local(&geom, signs)?;
                let entities: Vec<usize> = mesh.tet_edges[t].iter().map(|&(e, _)| e).collect();
                scatter_scalar(&entities, &local.stiffness, dofs, &mut k_trip);
                scatter_scalar(&entities, &local.mass, dofs, &mut m_trip);
            }
            OperatorKind::BForm => {
                scatter_bform(&geom, &tet, dofs, &mut k_trip, &mut m_trip);
            }
        }
    }
    Ok((k_trip, m_trip))
}

fn scatter_scalar(
    entities: &[usize],
    local: &nalgebra::DMatrix<f64>,
    dofs: &DofMap,
    out: &mut Triplets,
) {
    for (i, &ei) in entities.iter().enumerate() {
        let Some(di) = dofs.entity_to_dof[ei] else {
            continue;
        };
        for (j, &ej) in entities.iter().enumerate() {
            if let Some(dj) = dofs.entity_to_dof[ej] {
                out.push((di, dj, local[(i, j)]));
            }
        }
    }
}

/// Local div-div + curl-curl matrix of vector P1, scattered through the
/// per-vertex frames: for each vertex pair the 3x3 component block B lands as
/// R_i^T B R_j on the free directions.
fn scatter_bform(
    geom: &TetGeometry,
    tet: &[usize; 4],
    dofs: &DofMap,
    k_out: &mut Triplets,
    m_out: &mut Triplets,
) {
    let vol = geom.volume;
    let g = &geom.grads;
    let scalar_mass = |i: usize, j: usize| vol / 20.0 * if i == j { 2.0 } else { 1.0 };
    for (i, &vi) in tet.iter().enumerate() {
        let fi = &dofs.vertex_frames[vi];
        if fi.directions.is_empty() {
            continue;
        }
        for (j, &vj) in tet.iter().enumerate() {
            let fj = &dofs.vertex_frames[vj];
            if fj.directions.is_empty() {
                continue;
            }
            // component block: div(phi_i e_c) div(phi_j e_d)
            //                + curl(phi_i e_c) . curl(phi_j e_d)
            let gij = g[i].dot(&g[j]);
            let mut block = nalgebra::Matrix3::zeros();
            for c in 0..3 {
                for d in 0..3 {
                    let divdiv = g[i][c] * g[j][d];
                    let curlcurl = if c == d { gij } else { 0.0 } - g[i][d] * g[j][c];
                    block[(c, d)] = vol * (divdiv + curlcurl);
                }
            }
            for (a, da) in fi.directions.iter().enumerate() {
                for (b, db) in fj.directions.iter().enumerate() {
                    let kv = da.dot(&(block * db));
                    k_out.push((fi.first_dof + a, fj.first_dof + b, kv));
                    let mv = scalar_mass(i, j) * da.dot(db);
                    m_out.push((fi.first_dof + a, fj.first_dof + b, mv));
                }
            }
        }
    }
}

/// Discrete gradient embedding G: coefficients of `grad(phi_p)` in the edge
/// basis for every interior vertex p. Entry +1 on edges entering p, -1 on
/// edges leaving p (global lo->hi orientation). Satisfies `K_curl G = 0`
/// exactly up to rounding.
pub struct GradientEmbedding {
    /// ned_free x p1_free sparse map.
    pub matrix: CsrMatrix,
    pub ned_dofs: DofMap,
    pub p1_dofs: DofMap,
}

pub fn gradient_embedding(mesh: &TetMesh) -> Result<GradientEmbedding> {
    let ned_dofs = dof_map_nedelec(mesh);
    let p1_dofs = dof_map_p1(mesh, true);
    if p1_dofs.free_count == 0 {
        return Err(Error::NoFreeDofs("gradient embedding".into()));
    }
    let mut triplets = Vec::new();
    for (eid, e) in mesh.edges.iter().enumerate() {
        let Some(row) = ned_dofs.entity_to_dof[eid] else {
            continue;
        };
        let [lo, hi] = *e;
        if let Some(col) = p1_dofs.entity_to_dof[hi] {
            triplets.push((row, col, 1.0));
        }
        if let Some(col) = p1_dofs.entity_to_dof[lo] {
            triplets.push((row, col, -1.0));
        }
    }
    let matrix = CsrMatrix::from_triplets(ned_dofs.free_count, p1_dofs.free_count, triplets);
    Ok(GradientEmbedding {
        matrix,
        ned_dofs,
        p1_dofs,
    })
}
