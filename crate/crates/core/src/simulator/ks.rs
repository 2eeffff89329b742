use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::traveltime::TravelTimeDistribution;

pub const MIN_KS_SAMPLES: usize = 1000;

/// sup_t |F̂(t) − F(t)|, checked on both sides of every sample point so
/// that atoms of either CDF are handled.
pub fn ks_distance(samples: &[f64], dist: &TravelTimeDistribution) -> Result<f64> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_KS_SAMPLES, got: samples.len() });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = j as f64 / n;
        d = d.max((at - dist.cdf(x)).abs()).max((dist.cdf_before(x) - below).abs());
        i = j;
    }
    Ok(d)
}

/// `n` draws from `dist` by inverting its CDF.
pub fn inverse_cdf_samples(dist: &TravelTimeDistribution, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| dist.quantile(rng.random::<f64>())).collect()
}
