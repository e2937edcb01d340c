//! Seeded random number helpers shared by every sampler in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed` for a named purpose, so that
/// e.g. the dataset and the initialization can share a user-facing seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Writes a point drawn uniformly from the sphere of the given radius.
pub fn fill_sphere<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) {
    loop {
        fill_gaussian(rng, out);
        let norm = norm(out);
        if norm > 1e-300 {
            let s = radius / norm;
            for v in out.iter_mut() {
                *v *= s;
            }
            return;
        }
    }
}

pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    fill_sphere(rng, 1.0, &mut v);
    v
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_have_requested_radius() {
        let mut rng = rng_from_seed(3);
        let mut v = vec![0.0; 7];
        for _ in 0..100 {
            fill_sphere(&mut rng, 0.25, &mut v);
            assert!((norm(&v) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
