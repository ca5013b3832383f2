//! Exponentially decaying vertex noise. The noised positions feed the
//! renderer only; gradients pass to the clean positions unchanged, so the
//! noise needs no backward counterpart.

use crate::Vec3;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

pub fn noise_sigma(iteration: u64, sigma0: f64, tau: f64) -> f64 {
    sigma0 * (-(iteration as f64) / tau).exp()
}

/// Adds gaussian noise with std `noise_sigma(iteration, ..)` to every
/// coordinate. The RNG is derived from `seed` and `iteration` alone, so a
/// given step's noise is reproducible in isolation.
pub fn vertex_noise(
    positions: &[Vec3],
    iteration: u64,
    sigma0: f64,
    tau: f64,
    seed: u64,
) -> Vec<Vec3> {
    let sigma = noise_sigma(iteration, sigma0, tau);
    if sigma == 0.0 {
        return positions.to_vec();
    }
    let mut rng = StdRng::seed_from_u64(seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, sigma).unwrap();
    positions
        .iter()
        .map(|p| {
            Vec3::new(
                p.x + normal.sample(&mut rng),
                p.y + normal.sample(&mut rng),
                p.z + normal.sample(&mut rng),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_sigma_is_bitwise_identity() {
        let positions = vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(-0.0, 5.0, 1e-12)];
        let out = vertex_noise(&positions, 0, 0.0, 50.0, 42);
        for (a, b) in out.iter().zip(&positions) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn iteration_zero_has_empirical_std_sigma0() {
        let sigma0 = 0.5;
        let positions = vec![Vec3::zeros(); 10_000];
        let out = vertex_noise(&positions, 0, sigma0, 50.0, 9);
        let samples: Vec<f64> = out.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - sigma0).abs() / sigma0 < 0.05,
            "empirical std {std} vs {sigma0}"
        );
        assert!(mean.abs() < 0.05 * sigma0);
    }

    #[test]
    fn sigma_at_tau_is_sigma0_over_e() {
        let sigma0 = 0.02;
        assert_relative_eq!(
            noise_sigma(50, sigma0, 50.0),
            sigma0 / std::f64::consts::E,
            max_relative = 1e-12
        );
    }

    #[test]
    fn sigma_decays_strictly_monotonically() {
        let sigma0 = 0.01;
        for k in 0..300u64 {
            assert!(noise_sigma(k + 1, sigma0, 50.0) < noise_sigma(k, sigma0, 50.0));
        }
    }

    #[test]
    fn same_seed_and_iteration_reproduce_bitwise() {
        let positions = vec![Vec3::new(1.0, 2.0, 3.0); 16];
        let a = vertex_noise(&positions, 7, 0.01, 50.0, 1234);
        let b = vertex_noise(&positions, 7, 0.01, 50.0, 1234);
        assert_eq!(a, b);
        let c = vertex_noise(&positions, 8, 0.01, 50.0, 1234);
        assert_ne!(a, c);
    }
}
