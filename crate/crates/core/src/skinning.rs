//! Linear blend skinning on a bone hierarchy, with forward kinematics from
//! per-bone axis-angle rotations plus a root translation, the adjoint of the
//! skinning map, and nearest-neighbor transfer of skin weights between
//! vertex sets.

use crate::mesh::bbox;
use crate::{Mat3, Mat4, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkinError {
    #[error("bone {bone} lists parent {parent}, but parents must precede children")]
    ParentOrder { bone: usize, parent: usize },
    #[error("rest transform of bone {bone} is singular")]
    SingularRest { bone: usize },
    #[error("pose has {got} rotations for {expected} bones")]
    PoseLength { got: usize, expected: usize },
    #[error("skin weights cover {got} vertices, positions {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("weight row {vertex} references bone {bone}, skeleton has {bones}")]
    BoneIndex { vertex: usize, bone: usize, bones: usize },
}

/// Bone hierarchy. `rest[b]` maps bone-local coordinates to world at rest;
/// parents must come before their children.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub rest: Vec<Mat4>,
    pub parents: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn num_bones(&self) -> usize {
        self.rest.len()
    }
}

/// One frame of articulation: a rotation per bone and a root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Axis-angle (scaled axis) per bone.
    pub rotations: Vec<Vec3>,
    pub root_translation: Vec3,
}

impl Pose {
    pub fn rest(num_bones: usize) -> Self {
        Self {
            rotations: vec![Vec3::zeros(); num_bones],
            root_translation: Vec3::zeros(),
        }
    }

    /// Stacked parameter vector: rotations then the root translation.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rotations.len() * 3 + 3);
        for r in &self.rotations {
            out.extend_from_slice(r.as_slice());
        }
        out.extend_from_slice(self.root_translation.as_slice());
        out
    }

    pub fn unflatten(data: &[f64]) -> Self {
        assert!(data.len() >= 3 && data.len() % 3 == 0, "pose vector length");
        let n = data.len() / 3 - 1;
        let rotations = (0..n)
            .map(|b| Vec3::new(data[3 * b], data[3 * b + 1], data[3 * b + 2]))
            .collect();
        Self {
            rotations,
            root_translation: Vec3::new(
                data[data.len() - 3],
                data[data.len() - 2],
                data[data.len() - 1],
            ),
        }
    }
}

/// Per-vertex sparse skinning weights, bone indices ascending, rows
/// normalized to sum one.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    /// Keeps the `max_influences` largest weights of each dense row and
    /// renormalizes. Ties broken toward the lower bone index.
    pub fn from_dense(rows: &[Vec<f64>], max_influences: usize) -> Self {
        let rows = rows
            .iter()
            .map(|r| {
                let mut entries: Vec<(usize, f64)> = r
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                entries.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0))
                });
                entries.truncate(max_influences);
                entries.sort_by_key(|e| e.0);
                let total: f64 = entries.iter().map(|e| e.1).sum();
                if total > 0.0 {
                    for e in &mut entries {
                        e.1 /= total;
                    }
                }
                entries
            })
            .collect();
        Self { rows }
    }

    pub fn num_vertices(&self) -> usize {
        self.rows.len()
    }
}

/// World-space posing transform per bone: forward kinematics composed with
/// the inverse rest transform, so the rest pose yields identities.
pub fn pose_transforms(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Mat4>, SkinError> {
    let n = skeleton.num_bones();
    if pose.rotations.len() != n {
        return Err(SkinError::PoseLength {
            got: pose.rotations.len(),
            expected: n,
        });
    }
    let mut world = vec![Mat4::identity(); n];
    let mut out = vec![Mat4::identity(); n];
    for b in 0..n {
        let local_rot = nalgebra::Rotation3::new(pose.rotations[b]).to_homogeneous();
        world[b] = match skeleton.parents[b] {
            None => {
                Mat4::new_translation(&pose.root_translation) * skeleton.rest[b] * local_rot
            }
            Some(p) => {
                if p >= b {
                    return Err(SkinError::ParentOrder { bone: b, parent: p });
                }
                let rel = skeleton.rest[p]
                    .try_inverse()
                    .ok_or(SkinError::SingularRest { bone: p })?
                    * skeleton.rest[b];
                world[p] * rel * local_rot
            }
        };
        let inv_rest = skeleton.rest[b]
            .try_inverse()
            .ok_or(SkinError::SingularRest { bone: b })?;
        out[b] = world[b] * inv_rest;
    }
    Ok(out)
}

/// Applies linear blend skinning to the given world-space positions.
pub fn skin(
    positions: &[Vec3],
    weights: &SkinWeights,
    transforms: &[Mat4],
) -> Result<Vec<Vec3>, SkinError> {
    if weights.rows.len() != positions.len() {
        return Err(SkinError::WeightLength {
            got: weights.rows.len(),
            expected: positions.len(),
        });
    }
    let parts: Vec<(Mat3, Vec3)> = transforms.iter().map(split_affine).collect();
    let mut out = Vec::with_capacity(positions.len());
    for (v, (p, row)) in positions.iter().zip(&weights.rows).enumerate() {
        let mut q = Vec3::zeros();
        for &(b, w) in row {
            if b >= parts.len() {
                return Err(SkinError::BoneIndex {
                    vertex: v,
                    bone: b,
                    bones: parts.len(),
                });
            }
            let (lin, tr) = parts[b];
            q += w * (lin * p + tr);
        }
        out.push(q);
    }
    Ok(out)
}

/// Pullback of a gradient on posed positions to the unposed positions.
pub fn skin_backward(
    grad_posed: &[Vec3],
    weights: &SkinWeights,
    transforms: &[Mat4],
) -> Result<Vec<Vec3>, SkinError> {
    if weights.rows.len() != grad_posed.len() {
        return Err(SkinError::WeightLength {
            got: weights.rows.len(),
            expected: grad_posed.len(),
        });
    }
    let parts: Vec<(Mat3, Vec3)> = transforms.iter().map(split_affine).collect();
    let mut out = Vec::with_capacity(grad_posed.len());
    for (v, (g, row)) in grad_posed.iter().zip(&weights.rows).enumerate() {
        let mut d = Vec3::zeros();
        for &(b, w) in row {
            if b >= parts.len() {
                return Err(SkinError::BoneIndex {
                    vertex: v,
                    bone: b,
                    bones: parts.len(),
                });
            }
            d += w * (parts[b].0.transpose() * g);
        }
        out.push(d);
    }
    Ok(out)
}

fn split_affine(t: &Mat4) -> (Mat3, Vec3) {
    (
        t.fixed_view::<3, 3>(0, 0).into_owned(),
        t.fixed_view::<3, 1>(0, 3).into_owned(),
    )
}

/// Transfers skin weights from one vertex set to another by inverse-distance
/// blending over the `k` nearest sources. A destination vertex coinciding
/// with a source copies that row verbatim. Rows keep at most
/// `max_influences` bones.
pub fn derive_weights(
    src_positions: &[Vec3],
    src_weights: &SkinWeights,
    dst_positions: &[Vec3],
    k: usize,
    max_influences: usize,
) -> SkinWeights {
    assert_eq!(src_positions.len(), src_weights.rows.len());
    assert!(k >= 1 && !src_positions.is_empty());
    let (lo, hi) = bbox(src_positions);
    let coincident = 1e-9 * (hi - lo).norm().max(1e-300);

    let rows = dst_positions
        .iter()
        .map(|q| {
            let mut near: Vec<(f64, usize)> = src_positions
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm(), i))
                .collect();
            near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            near.truncate(k);
            if near[0].0 < coincident {
                return src_weights.rows[near[0].1].clone();
            }
            let mut acc = std::collections::BTreeMap::new();
            for &(d, i) in &near {
                let w = 1.0 / d;
                for &(b, bw) in &src_weights.rows[i] {
                    *acc.entry(b).or_insert(0.0) += w * bw;
                }
            }
            let mut entries: Vec<(usize, f64)> = acc.into_iter().collect();
            entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            entries.truncate(max_influences);
            entries.sort_by_key(|e| e.0);
            let total: f64 = entries.iter().map(|e| e.1).sum();
            for e in &mut entries {
                e.1 /= total;
            }
            entries
        })
        .collect();
    SkinWeights { rows }
}
