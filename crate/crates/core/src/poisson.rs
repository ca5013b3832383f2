//! Least-squares recovery of vertex positions from per-face deformation
//! Jacobians. The normal equations use the area-weighted gradient Gram
//! matrix (the cotangent stiffness matrix); its translational nullspace is
//! removed by grounding one vertex per connected component, and solutions
//! are recentered so every component keeps its rest centroid.
//!
//! The factorization depends only on rest topology and is reused across
//! solves; `topology_id` lets callers detect when it has gone stale.

use crate::mesh::{Mesh, MeshError};
use crate::sparse::{FactorError, SparseCholesky, SymmetricSparse};
use crate::{Mat3, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("factorization failed: {0}")]
    Factor(#[from] FactorError),
    #[error("jacobian count {got} does not match face count {expected}")]
    JacobianCount { got: usize, expected: usize },
    #[error("gradient count {got} does not match vertex count {expected}")]
    GradientCount { got: usize, expected: usize },
}

/// Area-weighted gradient Gram matrix of the rest mesh. Row and column sums
/// vanish; the kernel is spanned by the per-component constant vectors.
pub fn stiffness_matrix(mesh: &Mesh) -> Result<SymmetricSparse, MeshError> {
    Ok(SymmetricSparse::from_triplets(
        mesh.num_vertices(),
        &stiffness_triplets(mesh)?,
    ))
}

fn stiffness_triplets(mesh: &Mesh) -> Result<Vec<(usize, usize, f64)>, MeshError> {
    let frames = mesh.face_frames()?;
    let mut trip = Vec::with_capacity(mesh.num_faces() * 6);
    for (f, frame) in mesh.faces.iter().zip(&frames) {
        for ci in 0..3 {
            for cj in ci..3 {
                let v = frame.area * frame.grad[ci].dot(&frame.grad[cj]);
                trip.push((f[ci], f[cj], v));
            }
        }
    }
    Ok(trip)
}

/// Prefactorized position solve for one rest mesh.
pub struct PoissonSystem {
    faces: Vec<[usize; 3]>,
    n_verts: usize,
    grads: Vec<[Vec3; 3]>,
    areas: Vec<f64>,
    normals: Vec<Vec3>,
    components: Vec<usize>,
    component_sizes: Vec<usize>,
    rest_centroids: Vec<Vec3>,
    factor: SparseCholesky,
    topo_id: u64,
}

impl PoissonSystem {
    pub fn new(mesh: &Mesh) -> Result<Self, PoissonError> {
        let frames = mesh.face_frames()?;
        let n = mesh.num_vertices();
        let mut trip = stiffness_triplets(mesh)?;

        let components = mesh.vertex_components();
        let n_comp = components.iter().copied().max().map_or(0, |m| m + 1);
        let mut component_sizes = vec![0usize; n_comp];
        let mut rest_centroids = vec![Vec3::zeros(); n_comp];
        for (v, &c) in components.iter().enumerate() {
            component_sizes[c] += 1;
            rest_centroids[c] += mesh.vertices[v];
        }
        for c in 0..n_comp {
            rest_centroids[c] /= component_sizes[c] as f64;
        }

        // ground the lowest-index vertex of each component; the scale keeps
        // the pivot commensurate with the rest of the matrix
        let mut ground = vec![usize::MAX; n_comp];
        for (v, &c) in components.iter().enumerate() {
            if ground[c] == usize::MAX {
                ground[c] = v;
            }
        }
        let mut trace = 0.0;
        for frame in &frames {
            for g in &frame.grad {
                trace += frame.area * g.norm_squared();
            }
        }
        let rho = if n > 0 { trace.max(1.0) / n as f64 } else { 1.0 };
        trip.extend(ground.iter().map(|&k| (k, k, rho)));
        let pinned = SymmetricSparse::from_triplets(n, &trip);
        let factor = SparseCholesky::new(&pinned)?;

        Ok(Self {
            faces: mesh.faces.clone(),
            n_verts: n,
            grads: frames.iter().map(|f| f.grad).collect(),
            areas: frames.iter().map(|f| f.area).collect(),
            normals: frames.iter().map(|f| f.normal).collect(),
            components,
            component_sizes,
            rest_centroids,
            factor,
            topo_id: topology_id(mesh),
        })
    }

    pub fn topology_id(&self) -> u64 {
        self.topo_id
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.n_verts
    }

    /// Rest unit normal of each face, the direction the solve is blind to.
    pub fn rest_normals(&self) -> &[Vec3] {
        &self.normals
    }

    /// Vertex positions whose face gradients best fit the given Jacobians,
    /// one solve per world coordinate. Each connected component is
    /// recentered onto its rest centroid.
    pub fn solve(&self, jacobians: &[Mat3]) -> Result<Vec<Vec3>, PoissonError> {
        if jacobians.len() != self.faces.len() {
            return Err(PoissonError::JacobianCount {
                got: jacobians.len(),
                expected: self.faces.len(),
            });
        }
        let mut out = vec![Vec3::zeros(); self.n_verts];
        for r in 0..3 {
            let mut b = vec![0.0f64; self.n_verts];
            for (fi, f) in self.faces.iter().enumerate() {
                let row = jacobians[fi].row(r).transpose();
                let w = self.areas[fi];
                for c in 0..3 {
                    b[f[c]] += w * self.grads[fi][c].dot(&row);
                }
            }
            let y = self.factor.solve(&b);
            let centered = self.recenter(&y, r);
            for v in 0..self.n_verts {
                out[v][r] = centered[v];
            }
        }
        Ok(out)
    }

    /// Pullback of a loss gradient on vertex positions to the per-face
    /// Jacobians, the exact adjoint of `solve`.
    pub fn solve_adjoint(&self, grad_positions: &[Vec3]) -> Result<Vec<Mat3>, PoissonError> {
        if grad_positions.len() != self.n_verts {
            return Err(PoissonError::GradientCount {
                got: grad_positions.len(),
                expected: self.n_verts,
            });
        }
        let mut out = vec![Mat3::zeros(); self.faces.len()];
        for r in 0..3 {
            // adjoint of recentering subtracts the component mean
            let mut g: Vec<f64> = grad_positions.iter().map(|p| p[r]).collect();
            let mut means = vec![0.0f64; self.component_sizes.len()];
            for (v, &c) in self.components.iter().enumerate() {
                means[c] += g[v];
            }
            for (m, &s) in means.iter_mut().zip(&self.component_sizes) {
                *m /= s as f64;
            }
            for (v, &c) in self.components.iter().enumerate() {
                g[v] -= means[c];
            }
            let u = self.factor.solve(&g);
            for (fi, f) in self.faces.iter().enumerate() {
                let w = self.areas[fi];
                let mut row = Vec3::zeros();
                for c in 0..3 {
                    row += u[f[c]] * self.grads[fi][c];
                }
                out[fi].set_row(r, &(w * row).transpose());
            }
        }
        Ok(out)
    }

    fn recenter(&self, y: &[f64], r: usize) -> Vec<f64> {
        let mut means = vec![0.0f64; self.component_sizes.len()];
        for (v, &c) in self.components.iter().enumerate() {
            means[c] += y[v];
        }
        for (m, &s) in means.iter_mut().zip(&self.component_sizes) {
            *m /= s as f64;
        }
        self.components
            .iter()
            .enumerate()
            .map(|(v, &c)| y[v] - means[c] + self.rest_centroids[c][r])
            .collect()
    }
}

/// Stable identifier of the mesh connectivity: FNV-1a over the vertex count
/// and the face index stream.
pub fn topology_id(mesh: &Mesh) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(mesh.num_vertices() as u64);
    for f in &mesh.faces {
        eat(f[0] as u64);
        eat(f[1] as u64);
        eat(f[2] as u64);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid(nx: usize, ny: usize) -> Mesh {
        let mut verts = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                verts.push(Vec3::new(
                    i as f64 / nx as f64,
                    j as f64 / ny as f64,
                    0.0,
                ));
            }
        }
        let mut faces = Vec::new();
        let w = nx + 1;
        for j in 0..ny {
            for i in 0..nx {
                let v = j * w + i;
                faces.push([v, v + 1, v + w + 1]);
                faces.push([v, v + w + 1, v + w]);
            }
        }
        Mesh::new(verts, faces)
    }

    #[test]
    fn stiffness_matches_hand_assembled_square() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let l = stiffness_matrix(&m).unwrap().to_dense();
        let want = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -0.5, 0.0, -0.5, //
                -0.5, 1.0, -0.5, 0.0, //
                0.0, -0.5, 1.0, -0.5, //
                -0.5, 0.0, -0.5, 1.0,
            ],
        );
        assert_relative_eq!(l, want, epsilon = 1e-12);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let m = grid(4, 3);
        let l = stiffness_matrix(&m).unwrap().to_dense();
        for i in 0..m.num_vertices() {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn identity_jacobians_reproduce_rest() {
        let m = grid(6, 5);
        let sys = PoissonSystem::new(&m).unwrap();
        let jac = vec![Mat3::identity(); m.num_faces()];
        let pos = sys.solve(&jac).unwrap();
        let diag = m.bbox_diagonal();
        for (p, q) in pos.iter().zip(&m.vertices) {
            assert!((p - q).norm() <= 1e-9 * diag, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn integrable_field_round_trips() {
        // gradients of an actual deformation are integrable, so the solve
        // must reproduce it up to the recentering convention
        let mut rng = StdRng::seed_from_u64(31);
        let m = grid(5, 4);
        let bent: Vec<Vec3> = m
            .vertices
            .iter()
            .map(|p| {
                Vec3::new(
                    p.x + 0.2 * (p.y * 3.0).sin(),
                    p.y,
                    0.3 * (p.x * 2.0).sin() + 0.05 * rng.gen::<f64>() * 0.0,
                )
            })
            .collect();
        let jac = m.face_gradient(&bent).unwrap();
        let sys = PoissonSystem::new(&m).unwrap();
        let pos = sys.solve(&jac).unwrap();
        // compare after aligning centroids
        let mean_b: Vec3 = bent.iter().sum::<Vec3>() / bent.len() as f64;
        let mean_p: Vec3 = pos.iter().sum::<Vec3>() / pos.len() as f64;
        for (p, q) in pos.iter().zip(&bent) {
            assert!(((p - mean_p) - (q - mean_b)).norm() < 1e-8);
        }
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(8);
        let m = grid(4, 4);
        let sys = PoissonSystem::new(&m).unwrap();
        let jac: Vec<Mat3> = (0..m.num_faces())
            .map(|_| Mat3::identity() + 0.3 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let pos = sys.solve(&jac).unwrap();

        // dense reference: assemble pinned system and solve with nalgebra
        let frames = m.face_frames().unwrap();
        let n = m.num_vertices();
        let mut l = stiffness_matrix(&m).unwrap().to_dense();
        let mut trace = 0.0;
        for f in &frames {
            for g in &f.grad {
                trace += f.area * g.norm_squared();
            }
        }
        l[(0, 0)] += trace.max(1.0) / n as f64;
        let chol = l.cholesky().unwrap();
        for r in 0..3 {
            let mut b = nalgebra::DVector::zeros(n);
            for (fi, f) in m.faces.iter().enumerate() {
                let row = jac[fi].row(r).transpose();
                for c in 0..3 {
                    b[f[c]] += frames[fi].area * frames[fi].grad[c].dot(&row);
                }
            }
            let y = chol.solve(&b);
            let mean = y.mean();
            let rest_mean = m.vertices.iter().map(|v| v[r]).sum::<f64>() / n as f64;
            for v in 0..n {
                assert_relative_eq!(pos[v][r], y[v] - mean + rest_mean, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn solution_is_affine_in_jacobians() {
        let mut rng = StdRng::seed_from_u64(4);
        let m = grid(3, 3);
        let sys = PoissonSystem::new(&m).unwrap();
        let rand_jac = |rng: &mut StdRng| -> Vec<Mat3> {
            (0..m.num_faces())
                .map(|_| Mat3::identity() + 0.2 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
                .collect()
        };
        let j1 = rand_jac(&mut rng);
        let j2 = rand_jac(&mut rng);
        let sum: Vec<Mat3> = j1.iter().zip(&j2).map(|(a, b)| a + b).collect();
        let p1 = sys.solve(&j1).unwrap();
        let p2 = sys.solve(&j2).unwrap();
        let ps = sys.solve(&sum).unwrap();
        // the recentering offset is constant, so it cancels in differences
        let t = sys.rest_centroids[0];
        for v in 0..m.num_vertices() {
            assert_relative_eq!(ps[v] - t, (p1[v] - t) + (p2[v] - t), epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_direction_never_enters_the_solve() {
        let mut rng = StdRng::seed_from_u64(15);
        let m = grid(3, 2);
        let sys = PoissonSystem::new(&m).unwrap();
        let jac: Vec<Mat3> = (0..m.num_faces())
            .map(|_| Mat3::identity() + 0.2 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let normals = sys.rest_normals().to_vec();
        let spiked: Vec<Mat3> = jac
            .iter()
            .zip(&normals)
            .map(|(j, n)| {
                let v = Vec3::new(rng.gen::<f64>(), rng.gen(), rng.gen());
                j + v * n.transpose()
            })
            .collect();
        let a = sys.solve(&jac).unwrap();
        let b = sys.solve(&spiked).unwrap();
        for v in 0..m.num_vertices() {
            assert!((a[v] - b[v]).norm() < 1e-9);
        }
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(77);
        let m = grid(2, 2);
        let sys = PoissonSystem::new(&m).unwrap();
        let jac: Vec<Mat3> = (0..m.num_faces())
            .map(|_| Mat3::identity() + 0.1 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect();
        // loss = <W, positions> for a fixed random W
        let w: Vec<Vec3> = (0..m.num_vertices())
            .map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let loss = |jac: &[Mat3]| -> f64 {
            let pos = sys.solve(jac).unwrap();
            pos.iter().zip(&w).map(|(p, g)| p.dot(g)).sum()
        };
        let grad = sys.solve_adjoint(&w).unwrap();
        let h = 1e-6;
        for fi in 0..m.num_faces() {
            for r in 0..3 {
                for c in 0..3 {
                    let mut jp = jac.to_vec();
                    let mut jm = jac.to_vec();
                    jp[fi][(r, c)] += h;
                    jm[fi][(r, c)] -= h;
                    let fd = (loss(&jp) - loss(&jm)) / (2.0 * h);
                    assert_relative_eq!(grad[fi][(r, c)], fd, epsilon = 1e-6, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let mut rng = StdRng::seed_from_u64(2);
        let m = grid(3, 3);
        let sys = PoissonSystem::new(&m).unwrap();
        let jac: Vec<Mat3> = (0..m.num_faces())
            .map(|_| Mat3::identity() + 0.2 * Mat3::from_fn(|_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let a = sys.solve(&jac).unwrap();
        let b = sys.solve(&jac).unwrap();
        for (p, q) in a.iter().zip(&b) {
            for r in 0..3 {
                assert_eq!(p[r].to_bits(), q[r].to_bits());
            }
        }
    }

    #[test]
    fn topology_id_tracks_connectivity_not_positions() {
        let m1 = grid(3, 3);
        let mut m2 = grid(3, 3);
        m2.vertices[0].x += 0.5;
        let m2 = Mesh::new(m2.vertices, m2.faces);
        assert_eq!(topology_id(&m1), topology_id(&m2));
        let m3 = grid(3, 4);
        assert_ne!(topology_id(&m1), topology_id(&m3));
    }

    #[test]
    fn two_components_recenter_independently() {
        // two separate triangles far apart
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(11.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let sys = PoissonSystem::new(&m).unwrap();
        let pos = sys.solve(&vec![Mat3::identity(); 2]).unwrap();
        for (p, q) in pos.iter().zip(&m.vertices) {
            assert!((p - q).norm() < 1e-9);
        }
    }
}
