//! Learnable deformation fields. The static field is a per-face Jacobian
//! table optimized directly; the dynamic field predicts a per-face Jacobian
//! offset from the face's canonical placement and a pose code.

mod hash;
mod mlp;
mod pose;

pub use hash::{HashGrid, HashGridCache, HashGridSpec};
pub use mlp::{Mlp, MlpCache};
pub use pose::PoseEncoder;

use crate::{Mat3, Vec3};
use rand::Rng;

pub fn mat3_to_rows(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

pub fn mat3_from_rows(v: &[f64]) -> Mat3 {
    Mat3::from_fn(|r, c| v[r * 3 + c])
}

/// Per-face Jacobians stored flat (nine row-major entries per face) so the
/// optimizer and checkpoints can treat them as one parameter vector.
/// Initialized to identities: the field starts as the rest deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticField {
    pub params: Vec<f64>,
}

impl StaticField {
    pub fn identity(num_faces: usize) -> Self {
        let mut params = vec![0.0; num_faces * 9];
        for f in 0..num_faces {
            params[f * 9] = 1.0;
            params[f * 9 + 4] = 1.0;
            params[f * 9 + 8] = 1.0;
        }
        Self { params }
    }

    pub fn from_jacobians(jac: &[Mat3]) -> Self {
        let mut params = Vec::with_capacity(jac.len() * 9);
        for j in jac {
            params.extend_from_slice(&mat3_to_rows(j));
        }
        Self { params }
    }

    pub fn num_faces(&self) -> usize {
        self.params.len() / 9
    }

    pub fn jacobian(&self, face: usize) -> Mat3 {
        mat3_from_rows(&self.params[face * 9..face * 9 + 9])
    }

    pub fn jacobians(&self) -> Vec<Mat3> {
        (0..self.num_faces()).map(|f| self.jacobian(f)).collect()
    }

    /// Accumulates a per-face gradient into a flat gradient buffer.
    pub fn scatter_grad(face: usize, d: &Mat3, grad: &mut [f64]) {
        let rows = mat3_to_rows(d);
        for (k, v) in rows.iter().enumerate() {
            grad[face * 9 + k] += v;
        }
    }
}

/// Hash-grid encoder plus MLP head predicting a 3x3 Jacobian offset per
/// query. Conditioning: normalized canonical face center (through the
/// grid), canonical face normal, pose code.
#[derive(Debug, Clone)]
pub struct DynamicField {
    pub grid: HashGrid,
    pub mlp: Mlp,
    pub pose_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DynamicFieldCache {
    grid: HashGridCache,
    mlp: MlpCache,
}

impl DynamicField {
    pub fn new(
        spec: HashGridSpec,
        hidden: &[usize],
        pose_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let grid = HashGrid::new(spec, rng);
        let mut sizes = vec![grid.output_dim() + 3 + pose_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(9);
        let mlp = Mlp::new(&sizes, rng);
        Self {
            grid,
            mlp,
            pose_dim,
        }
    }

    /// Zero at initialization thanks to the zero MLP head.
    pub fn forward(
        &self,
        center: Vec3,
        normal: Vec3,
        pose_code: &[f64],
    ) -> (Mat3, DynamicFieldCache) {
        assert_eq!(pose_code.len(), self.pose_dim);
        let (feats, grid_cache) = self.grid.forward(center);
        let mut input = feats;
        input.extend_from_slice(normal.as_slice());
        input.extend_from_slice(pose_code);
        let mlp_cache = self.mlp.forward(&input);
        let out = mat3_from_rows(mlp_cache.output());
        (
            out,
            DynamicFieldCache {
                grid: grid_cache,
                mlp: mlp_cache,
            },
        )
    }

    /// Accumulates gradient of a loss in the output Jacobian onto both
    /// parameter buffers.
    pub fn backward(
        &self,
        cache: &DynamicFieldCache,
        dout: &Mat3,
        grid_grad: &mut [f64],
        mlp_grad: &mut [f64],
    ) {
        let drows = mat3_to_rows(dout);
        let dinput = self.mlp.backward(&cache.mlp, &drows, mlp_grad);
        self.grid
            .backward(&cache.grid, &dinput[..self.grid.output_dim()], grid_grad);
    }
}
