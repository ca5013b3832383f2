//! Multiresolution hash-grid positional encoding. Each level overlays a
//! cubic lattice on the unit cube and trilinearly interpolates learned
//! per-vertex feature vectors; coarse levels index their lattice directly
//! (collision-free), finer levels fall back to a spatial hash into a
//! fixed-size table.

use crate::Vec3;
use rand::Rng;

const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];
const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridSpec {
    pub levels: usize,
    pub features: usize,
    pub table_log2: u32,
    pub base_resolution: usize,
    pub growth: f64,
}

impl Default for HashGridSpec {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            table_log2: 14,
            base_resolution: 4,
            growth: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    resolution: usize,
    offset: usize,
    entries: usize,
    direct: bool,
}

/// Learned encoding of positions in the unit cube; inputs outside are
/// clamped. All level tables are concatenated in one flat parameter vector.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub spec: HashGridSpec,
    pub params: Vec<f64>,
    levels: Vec<Level>,
}

/// Per-level corner indices and trilinear weights of one lookup.
#[derive(Debug, Clone)]
pub struct HashGridCache {
    corners: Vec<[(usize, f64); 8]>,
}

impl HashGrid {
    pub fn new(spec: HashGridSpec, rng: &mut impl Rng) -> Self {
        assert!(spec.levels > 0 && spec.features > 0 && spec.base_resolution > 0);
        assert!(spec.growth >= 1.0);
        let cap = 1usize << spec.table_log2;
        let mut levels = Vec::with_capacity(spec.levels);
        let mut offset = 0;
        for l in 0..spec.levels {
            let resolution =
                ((spec.base_resolution as f64) * spec.growth.powi(l as i32)).floor() as usize;
            let resolution = resolution.max(1);
            let dense = (resolution + 1).pow(3);
            let (entries, direct) = if dense <= cap {
                (dense, true)
            } else {
                (cap, false)
            };
            levels.push(Level {
                resolution,
                offset: offset * spec.features,
                entries,
                direct,
            });
            offset += entries;
        }
        let params = (0..offset * spec.features)
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        Self {
            spec,
            params,
            levels,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.spec.levels * self.spec.features
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn corner_index(level: &Level, x: usize, y: usize, z: usize) -> usize {
        if level.direct {
            let n1 = level.resolution + 1;
            x + y * n1 + z * n1 * n1
        } else {
            let h = (x as u64).wrapping_mul(HASH_PRIMES[0])
                ^ (y as u64).wrapping_mul(HASH_PRIMES[1])
                ^ (z as u64).wrapping_mul(HASH_PRIMES[2]);
            (h as usize) & (level.entries - 1)
        }
    }

    /// Encodes a point, returning the stacked per-level features and the
    /// lookup cache for the backward pass.
    pub fn forward(&self, p: Vec3) -> (Vec<f64>, HashGridCache) {
        let f = self.spec.features;
        let mut out = vec![0.0; self.output_dim()];
        let mut corners = Vec::with_capacity(self.levels.len());
        for (li, level) in self.levels.iter().enumerate() {
            let n = level.resolution;
            let mut cell = [0usize; 3];
            let mut frac = [0.0f64; 3];
            for d in 0..3 {
                let q = p[d].clamp(0.0, 1.0) * n as f64;
                let c = (q.floor() as usize).min(n - 1);
                cell[d] = c;
                frac[d] = q - c as f64;
            }
            let mut cache = [(0usize, 0.0f64); 8];
            for bit in 0..8 {
                let b = [(bit & 1), (bit >> 1) & 1, (bit >> 2) & 1];
                let mut w = 1.0;
                for d in 0..3 {
                    w *= if b[d] == 1 { frac[d] } else { 1.0 - frac[d] };
                }
                let idx = Self::corner_index(
                    level,
                    cell[0] + b[0],
                    cell[1] + b[1],
                    cell[2] + b[2],
                );
                cache[bit] = (level.offset + idx * f, w);
                for j in 0..f {
                    out[li * f + j] += w * self.params[level.offset + idx * f + j];
                }
            }
            corners.push(cache);
        }
        (out, HashGridCache { corners })
    }

    /// Scatters the output gradient back onto the tables.
    pub fn backward(&self, cache: &HashGridCache, dout: &[f64], grad: &mut [f64]) {
        assert_eq!(dout.len(), self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let f = self.spec.features;
        for (li, corners) in cache.corners.iter().enumerate() {
            for &(base, w) in corners {
                for j in 0..f {
                    grad[base + j] += w * dout[li * f + j];
                }
            }
        }
    }
}
