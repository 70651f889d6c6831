//! Shared data generators for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use brakefilter::{AugmentedSample, ObservationVector};

/// Labeled samples from well-separated clusters, the shape EM sees after
/// segmentation.
pub fn clustered_samples(n: usize, clusters: usize, seed: u64) -> Vec<AugmentedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = rng.random_range(0..clusters);
            let center_r = 25.0 + 18.0 * c as f64;
            let center_v = 10.0 + 4.0 * c as f64;
            let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
            let xi = ObservationVector::new(
                center_r + gauss(),
                center_v + 0.5 * gauss(),
                0.8 * gauss(),
                center_r / center_v + 0.3 * gauss(),
            )
            .unwrap();
            AugmentedSample::new(xi, u8::from(c % 2 == 0 && rng.random_range(0.0..1.0) < 0.8))
                .unwrap()
        })
        .collect()
}

/// A plausible observation stream for filter throughput measurements.
pub fn observation_stream(n: usize, seed: u64) -> Vec<ObservationVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.random_range(12.0..110.0);
            let v = rng.random_range(6.0..40.0);
            ObservationVector::new(r, v, rng.random_range(-6.0..6.0), r / v).unwrap()
        })
        .collect()
}
