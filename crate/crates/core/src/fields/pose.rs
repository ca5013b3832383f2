//! Low-dimensional pose conditioning: a PCA basis fit to the training pose
//! vectors. Codes are projections onto the leading principal directions,
//! zero-padded when the data has less rank than the requested width.

use nalgebra::{DMatrix, DVector};

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEncoder {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, strongest first, at most `width`.
    pub basis: Vec<Vec<f64>>,
    /// Output code length; trailing entries beyond the data rank stay zero.
    pub width: usize,
}

impl PoseEncoder {
    /// Fits mean and principal directions to the given pose vectors.
    /// Eigenvalues below `RANK_TOL` times the largest are treated as rank
    /// deficiency. Direction signs are fixed so that each vector's entry of
    /// largest magnitude is positive.
    pub fn fit(poses: &[Vec<f64>], width: usize) -> Self {
        assert!(!poses.is_empty(), "cannot fit an encoder to zero poses");
        let d = poses[0].len();
        assert!(poses.iter().all(|p| p.len() == d), "ragged pose vectors");
        let t = poses.len();
        let mut mean = vec![0.0; d];
        for p in poses {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        if t < 2 || width == 0 || d == 0 {
            return Self {
                mean,
                basis: Vec::new(),
                width,
            };
        }

        let mut cov = DMatrix::zeros(d, d);
        let mut scale_sq = 0.0f64;
        for p in poses {
            let x = DVector::from_iterator(d, p.iter().zip(&mean).map(|(a, m)| a - m));
            cov += &x * x.transpose();
            scale_sq = scale_sq.max(p.iter().map(|v| v * v).sum());
        }
        cov /= (t - 1) as f64;

        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let lmax = eig.eigenvalues[order[0]].max(0.0);
        // the floor is tied to the pose magnitude as well, so rounding noise
        // around a constant pose set never manufactures rank
        let floor = RANK_TOL * lmax.max(scale_sq).max(f64::MIN_POSITIVE);
        let mut basis = Vec::new();
        for &i in order.iter().take(width) {
            if eig.eigenvalues[i] <= floor {
                break;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // deterministic sign: largest-magnitude entry positive
            let mut pivot = 0;
            for (k, x) in v.iter().enumerate() {
                if x.abs() > v[pivot].abs() {
                    pivot = k;
                }
            }
            if v[pivot] < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
            basis.push(v);
        }
        Self { mean, basis, width }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Projects a pose vector onto the basis; output length is `width`.
    pub fn encode(&self, pose: &[f64]) -> Vec<f64> {
        assert_eq!(pose.len(), self.mean.len(), "pose dimension mismatch");
        let mut out = vec![0.0; self.width];
        for (k, b) in self.basis.iter().enumerate() {
            out[k] = b
                .iter()
                .zip(pose.iter().zip(&self.mean))
                .map(|(bi, (x, m))| bi * (x - m))
                .sum();
        }
        out
    }
}
