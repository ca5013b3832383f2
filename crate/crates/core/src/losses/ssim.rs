//! Structural similarity over valid Gaussian windows, with an exact backward.
//!
//! Window statistics are separable Gaussian correlations; only fully interior
//! windows count, so image borders never dilute the score. The gradient flows
//! through every statistic the first image touches.

use super::LossError;
use crate::img::Image;

pub const DEFAULT_WINDOW: usize = 11;
pub const DEFAULT_SIGMA: f64 = 1.5;

// Stability constants for unit dynamic range.
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps centered on the window.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut taps: Vec<f64> = (0..window)
        .map(|i| {
            let d = (i as isize - half) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Mean SSIM over all valid windows and channels, plus the gradient of that
/// mean with respect to the first image and the channel-averaged per-window
/// map (valid-mode: (w - window + 1) x (h - window + 1), row-major).
#[derive(Debug, Clone)]
pub struct SsimResult {
    pub mean: f64,
    pub grad: Image,
    pub map: Vec<f64>,
    pub map_width: usize,
    pub map_height: usize,
}

/// Valid-mode correlation of one plane with a separable kernel.
fn correlate_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in kernel.iter().enumerate() {
                acc += t * plane[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, t) in kernel.iter().enumerate() {
                acc += t * horiz[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of `correlate_valid`: scatters per-window values back to pixels.
fn scatter_valid(m: &[f64], ow: usize, oh: usize, kernel: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut vert = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = m[y * ow + x];
            if v == 0.0 {
                continue;
            }
            for (j, t) in kernel.iter().enumerate() {
                vert[(y + j) * ow + x] += t * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = vert[y * ow + x];
            if v == 0.0 {
                continue;
            }
            for (i, t) in kernel.iter().enumerate() {
                out[y * w + x + i] += t * v;
            }
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image, window: usize, sigma: f64) -> Result<SsimResult, LossError> {
    if !a.same_shape(b) {
        return Err(LossError::ShapeMismatch {
            expected: (a.width, a.height, a.channels),
            got: (b.width, b.height, b.channels),
        });
    }
    if window % 2 == 0 || window < 3 {
        return Err(LossError::BadWindow { window });
    }
    if a.width < window || a.height < window {
        return Err(LossError::ImageTooSmall {
            width: a.width,
            height: a.height,
            window,
        });
    }
    let (w, h, ch) = (a.width, a.height, a.channels);
    let kernel = gaussian_kernel(window, sigma);
    let ow = w - window + 1;
    let oh = h - window + 1;
    let nwin = ow * oh;
    let count = (nwin * ch) as f64;

    let mut grad = Image::zeros(w, h, ch);
    let mut map = vec![0.0; nwin];
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[i * ch + c]).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[i * ch + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

        let e1 = correlate_valid(&x, w, h, &kernel);
        let e2 = correlate_valid(&y, w, h, &kernel);
        let e11 = correlate_valid(&xx, w, h, &kernel);
        let e22 = correlate_valid(&yy, w, h, &kernel);
        let e12 = correlate_valid(&xy, w, h, &kernel);

        // Per-window partials with respect to the statistics the first image
        // feeds: m1 for E[x], m11 for E[x^2], m12 for E[xy].
        let mut m1 = vec![0.0; nwin];
        let mut m11 = vec![0.0; nwin];
        let mut m12 = vec![0.0; nwin];
        for p in 0..nwin {
            let a1 = 2.0 * e1[p] * e2[p] + C1;
            let b1 = e1[p] * e1[p] + e2[p] * e2[p] + C1;
            let a2 = 2.0 * (e12[p] - e1[p] * e2[p]) + C2;
            let b2 = (e11[p] - e1[p] * e1[p]) + (e22[p] - e2[p] * e2[p]) + C2;
            let d = b1 * b2;
            let s = a1 * a2 / d;
            total += s;
            map[p] += s / ch as f64;
            m1[p] = (2.0 * e2[p] * (a2 - a1) - s * 2.0 * e1[p] * (b2 - b1)) / d;
            m11[p] = -s / b2;
            m12[p] = 2.0 * a1 / d;
        }

        let g1 = scatter_valid(&m1, ow, oh, &kernel, w, h);
        let g11 = scatter_valid(&m11, ow, oh, &kernel, w, h);
        let g12 = scatter_valid(&m12, ow, oh, &kernel, w, h);
        for i in 0..w * h {
            grad.data[i * ch + c] = (g1[i] + 2.0 * x[i] * g11[i] + y[i] * g12[i]) / count;
        }
    }
    Ok(SsimResult {
        mean: total / count,
        grad,
        map,
        map_width: ow,
        map_height: oh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_image(w: usize, h: usize, ch: usize, seed: u64) -> Image {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut img = Image::zeros(w, h, ch);
        for v in &mut img.data {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        let sum: f64 = k.iter().sum();
        assert_relative_eq!(sum, 1.0, max_relative = 1e-14);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
        assert!(k[5] > k[0]);
    }

    #[test]
    fn self_similarity_is_one_with_zero_gradient() {
        let img = random_image(16, 16, 1, 7);
        let r = ssim(&img, &img, 11, 1.5).unwrap();
        assert!((r.mean - 1.0).abs() <= 1e-9, "mean {}", r.mean);
        // SSIM is maximized at equality, so the gradient there vanishes.
        for g in &r.grad.data {
            assert!(g.abs() < 1e-9, "grad {g}");
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = random_image(18, 14, 1, 1);
        let b = random_image(18, 14, 1, 2);
        let ab = ssim(&a, &b, 11, 1.5).unwrap().mean;
        let ba = ssim(&b, &a, 11, 1.5).unwrap().mean;
        assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn bounded_by_one_in_magnitude() {
        for seed in 0..5 {
            let a = random_image(16, 16, 1, seed);
            let b = random_image(16, 16, 1, seed + 100);
            let r = ssim(&a, &b, 11, 1.5).unwrap();
            assert!(r.mean.abs() <= 1.0 + 1e-12);
            assert!(r.mean < 1.0);
        }
    }

    #[test]
    fn matches_direct_window_oracle() {
        let a = random_image(15, 13, 1, 3);
        let b = random_image(15, 13, 1, 4);
        let window = 5;
        let sigma = 1.5;
        let r = ssim(&a, &b, window, sigma).unwrap();

        let k1 = gaussian_kernel(window, sigma);
        let mut total = 0.0;
        let mut count = 0usize;
        for wy in 0..=(13 - window) {
            for wx in 0..=(15 - window) {
                let (mut e1, mut e2, mut e11, mut e22, mut e12) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..window {
                    for i in 0..window {
                        let wgt = k1[i] * k1[j];
                        let x = a.get(wx + i, wy + j, 0);
                        let y = b.get(wx + i, wy + j, 0);
                        e1 += wgt * x;
                        e2 += wgt * y;
                        e11 += wgt * x * x;
                        e22 += wgt * y * y;
                        e12 += wgt * x * y;
                    }
                }
                let c1 = 0.0001;
                let c2 = 0.0009;
                let num = (2.0 * e1 * e2 + c1) * (2.0 * (e12 - e1 * e2) + c2);
                let den = (e1 * e1 + e2 * e2 + c1)
                    * ((e11 - e1 * e1) + (e22 - e2 * e2) + c2);
                total += num / den;
                count += 1;
            }
        }
        assert_relative_eq!(r.mean, total / count as f64, max_relative = 1e-12);
    }

    #[test]
    fn constant_images_follow_closed_form() {
        let a = Image::filled(16, 16, 1, 0.0);
        let b = Image::filled(16, 16, 1, 0.5);
        let r = ssim(&a, &b, 11, 1.5).unwrap();
        // Zero variance: the structure factor cancels and only luminance
        // remains, C1 / (0.25 + C1).
        let expected = 0.0001 / (0.25 + 0.0001);
        assert_relative_eq!(r.mean, expected, max_relative = 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(16, 16, 2, 11);
        let b = random_image(16, 16, 2, 12);
        let r = ssim(&a, &b, 11, 1.5).unwrap();
        let h = 1e-5;
        let mut checked = 0;
        for idx in (0..a.data.len()).step_by(17) {
            let mut ap = a.clone();
            ap.data[idx] += h;
            let up = ssim(&ap, &b, 11, 1.5).unwrap().mean;
            let mut am = a.clone();
            am.data[idx] -= h;
            let um = ssim(&am, &b, 11, 1.5).unwrap().mean;
            let fd = (up - um) / (2.0 * h);
            let an = r.grad.data[idx];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-3 * fd.abs(),
                "idx {idx}: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = random_image(8, 8, 1, 0);
        let b = random_image(8, 8, 1, 1);
        assert!(matches!(
            ssim(&a, &b, 11, 1.5),
            Err(LossError::ImageTooSmall { .. })
        ));
        assert!(matches!(
            ssim(&a, &b, 4, 1.5),
            Err(LossError::BadWindow { .. })
        ));
        let c = random_image(9, 8, 1, 2);
        assert!(matches!(
            ssim(&a, &c, 5, 1.5),
            Err(LossError::ShapeMismatch { .. })
        ));
    }
}
