//! Indexed triangle meshes: validity checking, adjacency queries and the
//! per-face differential quantities (gradient operator, deformation
//! Jacobians, centers, normals, areas) everything downstream is built on.
//!
//! A `Mesh` is immutable after construction; topology changes always build a
//! new `Mesh` (see the `remesh` module).

use crate::{Mat3, Vec3};
use thiserror::Error;

/// Faces with rest area below `DEGENERATE_AREA_FACTOR * diag^2` are treated
/// as degenerate, where `diag` is the bounding-box diagonal of the positions
/// involved. Scale-invariant by construction.
pub const DEGENERATE_AREA_FACTOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate face {face} (area {area:.3e} below tolerance {tol:.3e})")]
    DegenerateFace { face: usize, area: f64, tol: f64 },
    #[error("positions length {got} does not match vertex count {expected}")]
    PositionCount { got: usize, expected: usize },
}

/// Indexed triangle mesh. The edge list is derived from the faces at
/// construction: each edge stored `[min, max]`, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
}

/// One violated mesh invariant, with the offending indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    FaceIndexOutOfRange { face: usize, index: usize },
    RepeatedVertexInFace { face: usize },
    NonManifoldEdge { edge: [usize; 2], incident: usize },
    DegenerateFace { face: usize, area: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::FaceIndexOutOfRange { face, index } => {
                write!(f, "face {face} references out-of-range vertex {index}")
            }
            Violation::RepeatedVertexInFace { face } => {
                write!(f, "repeated vertex in face {face}")
            }
            Violation::NonManifoldEdge { edge, incident } => {
                write!(
                    f,
                    "non-manifold edge ({}, {}) shared by {} faces",
                    edge[0], edge[1], incident
                )
            }
            Violation::DegenerateFace { face, area } => {
                write!(f, "degenerate face {face} (area {area:.3e})")
            }
        }
    }
}

/// Result of [`Mesh::validate`]: empty iff every invariant holds.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Per-face frame: the gradient operator rows plus center/normal/area.
///
/// `grad[c]` is the gradient of the linear hat function of corner `c`; the
/// intrinsic gradient of a scalar `phi` over the face is
/// `sum_c phi_c * grad[c]` and the gradient of a constant is exactly zero.
#[derive(Debug, Clone)]
pub struct FaceFrame {
    pub grad: [Vec3; 3],
    pub area: f64,
    pub center: Vec3,
    pub normal: Vec3,
}

impl Mesh {
    /// Builds the mesh and derives its edge list. Construction never fails;
    /// invariants are checked by [`Mesh::validate`].
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        let edges = derive_edges(&faces);
        Self {
            vertices,
            faces,
            edges,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Index into the sorted edge list, if `(a, b)` is an edge.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    /// For every edge, the indices of its incident faces (1 or 2 for valid
    /// meshes; more reported by `validate`).
    pub fn edge_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.edges.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == b {
                    continue;
                }
                if let Some(ei) = self.edge_index(a, b) {
                    out[ei].push(fi);
                }
            }
        }
        out
    }

    /// For every vertex, the indices of its incident faces, ascending.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v < out.len() {
                    out[v].push(fi);
                }
            }
        }
        out
    }

    /// Axis-aligned bounding box of the rest positions.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Scale-aware degenerate-area threshold for the rest positions.
    pub fn degenerate_area_tol(&self) -> f64 {
        let d = self.bbox_diagonal();
        DEGENERATE_AREA_FACTOR * d * d
    }

    /// Connected components via face-edge connectivity; returns a per-vertex
    /// component id (isolated vertices get their own component).
    pub fn vertex_components(&self) -> Vec<usize> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a < n && b < n {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        let (lo, hi) = (ra.min(rb), ra.max(rb));
                        parent[hi] = lo;
                    }
                }
            }
        }
        // compact to dense ids in first-seen order
        let mut id_of_root = std::collections::BTreeMap::new();
        let mut out = vec![0usize; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            let next = id_of_root.len();
            let id = *id_of_root.entry(r).or_insert(next);
            out[v] = id;
        }
        out
    }

    /// Checks every mesh invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    violations.push(Violation::FaceIndexOutOfRange { face: fi, index: v });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                violations.push(Violation::RepeatedVertexInFace { face: fi });
            }
        }
        for (ei, fs) in self.edge_faces().iter().enumerate() {
            if fs.len() > 2 {
                violations.push(Violation::NonManifoldEdge {
                    edge: self.edges[ei],
                    incident: fs.len(),
                });
            }
        }
        let tol = self.degenerate_area_tol();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().all(|&v| v < n) && f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                let a = triangle_area(
                    &self.vertices[f[0]],
                    &self.vertices[f[1]],
                    &self.vertices[f[2]],
                );
                if a < tol {
                    violations.push(Violation::DegenerateFace { face: fi, area: a });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Per-face frames (gradient operator, area, center, unit normal) for the
    /// rest positions. Errors on degenerate faces.
    pub fn face_frames(&self) -> Result<Vec<FaceFrame>, MeshError> {
        face_frames_for(self, &self.vertices)
    }

    /// Per-face deformation Jacobians taking rest corner positions to the
    /// given corner positions: the unique affine map on the face plane,
    /// completed by mapping the rest unit normal to the deformed unit normal.
    pub fn face_gradient(&self, positions: &[Vec3]) -> Result<Vec<Mat3>, MeshError> {
        if positions.len() != self.vertices.len() {
            return Err(MeshError::PositionCount {
                got: positions.len(),
                expected: self.vertices.len(),
            });
        }
        let frames = self.face_frames()?;
        let tol = degenerate_tol_for(positions);
        let mut out = Vec::with_capacity(self.faces.len());
        for (fi, f) in self.faces.iter().enumerate() {
            let (q0, q1, q2) = (positions[f[0]], positions[f[1]], positions[f[2]]);
            let cross = (q1 - q0).cross(&(q2 - q0));
            let area = 0.5 * cross.norm();
            if area < tol {
                return Err(MeshError::DegenerateFace {
                    face: fi,
                    area,
                    tol,
                });
            }
            let n_def = cross.normalize();
            let fr = &frames[fi];
            let mut j = q0 * fr.grad[0].transpose()
                + q1 * fr.grad[1].transpose()
                + q2 * fr.grad[2].transpose();
            j += n_def * fr.normal.transpose();
            out.push(j);
        }
        Ok(out)
    }

    /// Centers (corner mean), unit normals (counterclockwise) and areas of
    /// every face at the given positions.
    pub fn face_geometry(
        &self,
        positions: &[Vec3],
    ) -> Result<(Vec<Vec3>, Vec<Vec3>, Vec<f64>), MeshError> {
        if positions.len() != self.vertices.len() {
            return Err(MeshError::PositionCount {
                got: positions.len(),
                expected: self.vertices.len(),
            });
        }
        let tol = degenerate_tol_for(positions);
        let mut centers = Vec::with_capacity(self.faces.len());
        let mut normals = Vec::with_capacity(self.faces.len());
        let mut areas = Vec::with_capacity(self.faces.len());
        for (fi, f) in self.faces.iter().enumerate() {
            let (p0, p1, p2) = (positions[f[0]], positions[f[1]], positions[f[2]]);
            let cross = (p1 - p0).cross(&(p2 - p0));
            let area = 0.5 * cross.norm();
            if area < tol {
                return Err(MeshError::DegenerateFace {
                    face: fi,
                    area,
                    tol,
                });
            }
            centers.push((p0 + p1 + p2) / 3.0);
            normals.push(cross.normalize());
            areas.push(area);
        }
        Ok((centers, normals, areas))
    }
}

/// Frames evaluated at arbitrary positions sharing the mesh topology.
pub fn face_frames_for(mesh: &Mesh, positions: &[Vec3]) -> Result<Vec<FaceFrame>, MeshError> {
    if positions.len() != mesh.vertices.len() {
        return Err(MeshError::PositionCount {
            got: positions.len(),
            expected: mesh.vertices.len(),
        });
    }
    let tol = degenerate_tol_for(positions);
    let mut out = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (p0, p1, p2) = (positions[f[0]], positions[f[1]], positions[f[2]]);
        let cross = (p1 - p0).cross(&(p2 - p0));
        let double_area = cross.norm();
        let area = 0.5 * double_area;
        if area < tol {
            return Err(MeshError::DegenerateFace {
                face: fi,
                area,
                tol,
            });
        }
        let normal = cross / double_area;
        // hat-function gradients: grad(lambda_c) = n x e_c / (2A), with e_c
        // the edge opposite corner c
        let grad = [
            normal.cross(&(p2 - p1)) / double_area,
            normal.cross(&(p0 - p2)) / double_area,
            normal.cross(&(p1 - p0)) / double_area,
        ];
        out.push(FaceFrame {
            grad,
            area,
            center: (p0 + p1 + p2) / 3.0,
            normal,
        });
    }
    Ok(out)
}

pub fn triangle_area(p0: &Vec3, p1: &Vec3, p2: &Vec3) -> f64 {
    0.5 * (p1 - p0).cross(&(p2 - p0)).norm()
}

pub fn bbox(positions: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if positions.is_empty() {
        lo = Vec3::zeros();
        hi = Vec3::zeros();
    }
    (lo, hi)
}

pub fn degenerate_tol_for(positions: &[Vec3]) -> f64 {
    let (lo, hi) = bbox(positions);
    let d = (hi - lo).norm();
    DEGENERATE_AREA_FACTOR * d * d
}

fn derive_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if a != b {
                edges.push([a.min(b), a.max(b)]);
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}
