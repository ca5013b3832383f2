//! Small dense multilayer perceptron with tanh hidden activations, a linear
//! head and hand-written backward pass. Parameters live in one flat vector,
//! layout `[W0, b0, W1, b1, ..]` with weights row-major, so optimizer state
//! and checkpoints stay trivial.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Forward activations, input first, linear head output last.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    /// Xavier-uniform hidden layers, zero head: the network starts out as
    /// the constant zero function.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let last = sizes.len() - 2;
        for l in 0..sizes.len() - 1 {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            let s = (6.0 / (nin + nout) as f64).sqrt();
            for _ in 0..nin * nout {
                params.push(if l == last { 0.0 } else { rng.gen_range(-s..s) });
            }
            params.extend(std::iter::repeat(0.0).take(nout));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn forward(&self, input: &[f64]) -> MlpCache {
        assert_eq!(input.len(), self.sizes[0]);
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        for l in 0..layers {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let (woff, boff) = self.layer_offsets(l);
            let x = activations.last().unwrap();
            let mut y = vec![0.0; nout];
            for o in 0..nout {
                let mut z = self.params[boff + o];
                let row = &self.params[woff + o * nin..woff + (o + 1) * nin];
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                y[o] = if l < layers - 1 { z.tanh() } else { z };
            }
            activations.push(y);
        }
        MlpCache { activations }
    }

    /// Accumulates parameter gradients into `grad` (same layout as params)
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(dout.len(), self.output_dim());
        let layers = self.sizes.len() - 1;
        let mut g = dout.to_vec();
        for l in (0..layers).rev() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let (woff, boff) = self.layer_offsets(l);
            let x = &cache.activations[l];
            let a = &cache.activations[l + 1];
            // dz: through tanh on hidden layers, pass-through on the head
            let dz: Vec<f64> = if l < layers - 1 {
                g.iter().zip(a).map(|(gi, ai)| gi * (1.0 - ai * ai)).collect()
            } else {
                g.clone()
            };
            let mut gin = vec![0.0; nin];
            for o in 0..nout {
                grad[boff + o] += dz[o];
                let row = woff + o * nin;
                for i in 0..nin {
                    grad[row + i] += dz[o] * x[i];
                    gin[i] += self.params[row + i] * dz[o];
                }
            }
            g = gin;
        }
        g
    }
}
