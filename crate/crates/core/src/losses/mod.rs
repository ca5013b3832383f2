//! Scalar objectives for the geometry and appearance stages.
//!
//! Every loss returns its value together with the exact gradient with respect
//! to its prediction input, so the optimizer never differentiates numerically.
//! Predictions are masked before scoring; the gradients chain back through
//! that masking.

pub mod ssim;

pub use ssim::{gaussian_kernel, ssim, SsimResult, DEFAULT_SIGMA, DEFAULT_WINDOW};

use crate::img::Image;
use crate::Mat3;
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("image shapes differ: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("SSIM window must be odd and at least 3, got {window}")]
    BadWindow { window: usize },
    #[error("expected a single-channel image, got {channels} channels")]
    NotSingleChannel { channels: usize },
    #[error("loss weight {name} must be nonnegative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("Huber delta must be positive, got {delta}")]
    BadDelta { delta: f64 },
}

fn require_same_shape(a: &Image, b: &Image) -> Result<(), LossError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch {
            expected: (a.width, a.height, a.channels),
            got: (b.width, b.height, b.channels),
        })
    }
}

fn require_mask_shape(pred: &Image, mask: &Image) -> Result<(), LossError> {
    if mask.width == pred.width
        && mask.height == pred.height
        && (mask.channels == 1 || mask.channels == pred.channels)
    {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch {
            expected: (pred.width, pred.height, 1),
            got: (mask.width, mask.height, mask.channels),
        })
    }
}

/// Weights and knobs shared by both training stages.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Geometry-stage multipliers: diffuse, mask, regularizer, depth ranking.
    pub lambda_diffuse: f64,
    pub lambda_mask: f64,
    pub lambda_reg: f64,
    pub lambda_depth: f64,
    /// Appearance-stage multipliers: masked L1 and SSIM dissimilarity.
    pub alpha_l1: f64,
    pub alpha_ssim: f64,
    pub huber_delta: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// Depth-ranking pairs drawn per frame per iteration.
    pub depth_pairs: usize,
    /// Depth-ranking margin as a fraction of the scene diagonal.
    pub depth_margin_rel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_diffuse: 1.0,
            lambda_mask: 0.5,
            lambda_reg: 0.01,
            lambda_depth: 0.1,
            alpha_l1: 0.8,
            alpha_ssim: 0.2,
            huber_delta: 0.1,
            ssim_window: DEFAULT_WINDOW,
            ssim_sigma: DEFAULT_SIGMA,
            depth_pairs: 1024,
            depth_margin_rel: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let named = [
            ("lambda_diffuse", self.lambda_diffuse),
            ("lambda_mask", self.lambda_mask),
            ("lambda_reg", self.lambda_reg),
            ("lambda_depth", self.lambda_depth),
            ("alpha_l1", self.alpha_l1),
            ("alpha_ssim", self.alpha_ssim),
            ("ssim_sigma", self.ssim_sigma),
            ("depth_margin_rel", self.depth_margin_rel),
        ];
        for (name, value) in named {
            if !(value >= 0.0) {
                return Err(LossError::NegativeWeight { name, value });
            }
        }
        if self.ssim_window % 2 == 0 || self.ssim_window < 3 {
            return Err(LossError::BadWindow {
                window: self.ssim_window,
            });
        }
        if !(self.huber_delta > 0.0) {
            return Err(LossError::BadDelta {
                delta: self.huber_delta,
            });
        }
        Ok(())
    }
}

/// A scalar loss with its gradient image (same shape as the prediction).
#[derive(Debug, Clone)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Image,
}

/// Mean Huber penalty per sample: quadratic inside `delta`, linear outside.
pub fn huber(pred: &Image, target: &Image, delta: f64) -> Result<ImageLoss, LossError> {
    require_same_shape(pred, target)?;
    if !(delta > 0.0) {
        return Err(LossError::BadDelta { delta });
    }
    let n = pred.data.len() as f64;
    let mut grad = Image::zeros(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        if d.abs() <= delta {
            sum += 0.5 * d * d;
            grad.data[i] = d / n;
        } else {
            sum += delta * (d.abs() - 0.5 * delta);
            grad.data[i] = delta * d.signum() / n;
        }
    }
    Ok(ImageLoss {
        value: sum / n,
        grad,
    })
}

/// Mean squared error over all samples.
pub fn l_mask(pred: &Image, target: &Image) -> Result<ImageLoss, LossError> {
    require_same_shape(pred, target)?;
    let n = pred.data.len() as f64;
    let mut grad = Image::zeros(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        sum += d * d;
        grad.data[i] = 2.0 * d / n;
    }
    Ok(ImageLoss {
        value: sum / n,
        grad,
    })
}

/// Huber plus SSIM dissimilarity of the masked prediction against the target.
#[derive(Debug, Clone)]
pub struct DiffuseLoss {
    pub value: f64,
    pub huber_term: f64,
    pub ssim_term: f64,
    /// Gradient with respect to the unmasked prediction.
    pub grad: Image,
}

pub fn l_diffuse(
    pred: &Image,
    gt: &Image,
    mask: &Image,
    weights: &LossWeights,
) -> Result<DiffuseLoss, LossError> {
    require_same_shape(pred, gt)?;
    require_mask_shape(pred, mask)?;
    let masked = pred.masked(mask);
    let h = huber(&masked, gt, weights.huber_delta)?;
    let s = ssim(&masked, gt, weights.ssim_window, weights.ssim_sigma)?;
    let ssim_term = 1.0 - s.mean;
    let mut grad = Image::zeros(pred.width, pred.height, pred.channels);
    for i in 0..grad.data.len() {
        grad.data[i] = h.grad.data[i] - s.grad.data[i];
    }
    let grad = grad.masked(mask);
    Ok(DiffuseLoss {
        value: h.value + ssim_term,
        huber_term: h.value,
        ssim_term,
        grad,
    })
}

/// Squared Frobenius deviation from the identity, summed over faces.
#[derive(Debug, Clone)]
pub struct RegLoss {
    pub value: f64,
    pub grad: Vec<Mat3>,
}

pub fn l_reg(jacobians: &[Mat3]) -> RegLoss {
    let mut value = 0.0;
    let grad = jacobians
        .iter()
        .map(|j| {
            let d = j - Mat3::identity();
            value += d.norm_squared();
            2.0 * d
        })
        .collect();
    RegLoss { value, grad }
}

/// Ordinal depth supervision over sampled pixel pairs.
#[derive(Debug, Clone)]
pub struct DepthLoss {
    pub value: f64,
    pub grad: Image,
    /// Pairs that the ground truth actually ordered.
    pub pairs_used: usize,
    /// No pair could be ordered; the value is zero and carries no signal.
    pub degenerate: bool,
}

/// Draws index pairs (with replacement, distinct endpoints) from the pixels
/// covered in both images. Exposed so oracles can replay the exact sample.
pub fn sample_depth_pairs(
    covered: &[usize],
    n_pairs: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    if covered.len() < 2 {
        return Vec::new();
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let a = covered[rng.gen_range(0..covered.len())];
        let b = covered[rng.gen_range(0..covered.len())];
        if a != b {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Hinge on predicted depth order: for each sampled pair the ground truth
/// names the nearer pixel, and the prediction pays when it disagrees by more
/// than `-margin`. Normalized by the number of ordered pairs.
pub fn l_depth(
    pred: &Image,
    gt: &Image,
    covered: &[usize],
    n_pairs: usize,
    margin: f64,
    rng: &mut impl Rng,
) -> Result<DepthLoss, LossError> {
    require_same_shape(pred, gt)?;
    if pred.channels != 1 {
        return Err(LossError::NotSingleChannel {
            channels: pred.channels,
        });
    }
    let mut grad = Image::zeros(pred.width, pred.height, 1);
    let pairs = sample_depth_pairs(covered, n_pairs, rng);
    let mut active = Vec::new();
    let mut used = 0usize;
    let mut sum = 0.0;
    for (a, b) in pairs {
        let (near, far) = if gt.data[a] < gt.data[b] {
            (a, b)
        } else if gt.data[b] < gt.data[a] {
            (b, a)
        } else {
            continue;
        };
        used += 1;
        let hinge = pred.data[near] - pred.data[far] + margin;
        if hinge > 0.0 {
            sum += hinge;
            active.push((near, far));
        }
    }
    if used == 0 {
        return Ok(DepthLoss {
            value: 0.0,
            grad,
            pairs_used: 0,
            degenerate: true,
        });
    }
    let inv = 1.0 / used as f64;
    for (near, far) in active {
        grad.data[near] += inv;
        grad.data[far] -= inv;
    }
    Ok(DepthLoss {
        value: sum * inv,
        grad,
        pairs_used: used,
        degenerate: false,
    })
}

/// Raw per-term values of the geometry objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeoTerms {
    pub diffuse: f64,
    pub mask: f64,
    pub reg: f64,
    pub depth: f64,
}

/// Weighted combination with the per-term contributions kept for logging.
#[derive(Debug, Clone, Copy)]
pub struct GeoLoss {
    pub value: f64,
    pub raw: GeoTerms,
    pub weighted: GeoTerms,
}

pub fn l_geo(terms: GeoTerms, weights: &LossWeights) -> GeoLoss {
    let weighted = GeoTerms {
        diffuse: weights.lambda_diffuse * terms.diffuse,
        mask: weights.lambda_mask * terms.mask,
        reg: weights.lambda_reg * terms.reg,
        depth: weights.lambda_depth * terms.depth,
    };
    GeoLoss {
        value: weighted.diffuse + weighted.mask + weighted.reg + weighted.depth,
        raw: terms,
        weighted,
    }
}

/// Masked L1 plus SSIM dissimilarity for the appearance stage.
#[derive(Debug, Clone)]
pub struct TexLoss {
    pub value: f64,
    pub l1_term: f64,
    pub ssim_term: f64,
    /// Gradient with respect to the unmasked prediction.
    pub grad: Image,
}

pub fn l_tex(
    pred: &Image,
    gt: &Image,
    mask: &Image,
    weights: &LossWeights,
) -> Result<TexLoss, LossError> {
    require_same_shape(pred, gt)?;
    require_mask_shape(pred, mask)?;
    let masked = pred.masked(mask);
    let ch = pred.channels;

    // L1 averages over the pixels inside the mask only, so uncovered
    // background never dilutes the color error.
    let inside: Vec<usize> = (0..pred.width * pred.height)
        .filter(|&p| mask.data[p * mask.channels] > 0.5)
        .collect();
    let n = (inside.len() * ch) as f64;
    let mut l1 = 0.0;
    let mut l1_grad = Image::zeros(pred.width, pred.height, ch);
    if !inside.is_empty() {
        for &p in &inside {
            for c in 0..ch {
                let i = p * ch + c;
                let d = masked.data[i] - gt.data[i];
                l1 += d.abs();
                l1_grad.data[i] = d.signum() / n;
            }
        }
        l1 /= n;
    }

    let s = ssim(&masked, gt, weights.ssim_window, weights.ssim_sigma)?;
    let ssim_term = 1.0 - s.mean;
    let mut grad = Image::zeros(pred.width, pred.height, ch);
    for i in 0..grad.data.len() {
        grad.data[i] = weights.alpha_l1 * l1_grad.data[i] - weights.alpha_ssim * s.grad.data[i];
    }
    let grad = grad.masked(mask);
    Ok(TexLoss {
        value: weights.alpha_l1 * l1 + weights.alpha_ssim * ssim_term,
        l1_term: l1,
        ssim_term,
        grad,
    })
}
