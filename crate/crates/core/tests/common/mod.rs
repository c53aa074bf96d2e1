#![allow(dead_code)]

use iit_core::ReducedParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(f: [f64; 5]) -> Option<ReducedParams<f64>> {
    ReducedParams::new(f[0], 0.9 * f[1], 0.27 * f[2], 0.3 * f[3], 1.0, (0.9 * f[4]).min(1.0)).ok()
}

/// Parameter sets within 15% of the reference reduced model that satisfy
/// the bistability condition.
pub fn reduced_params() -> impl Strategy<Value = ReducedParams<f64>> {
    proptest::array::uniform5(0.85..1.15f64).prop_filter_map("bistability", build)
}

/// `count` such sets drawn from a fixed seed.
pub fn sample_params(seed: u64, count: usize) -> Vec<ReducedParams<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let f: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.85..1.15));
        out.extend(build(f));
    }
    out
}
