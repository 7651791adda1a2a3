//! Fixtures shared by the criterion benches.

use ppd_core::{util, PromptPolicy, TokenDistribution};

/// Deterministic values in `[0, 1)` from a counter hash.
pub fn uniform_stream(seed: u64, len: usize) -> Vec<f64> {
    (0..len as u64)
        .map(|i| (util::mix64(seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15)) >> 11) as f64 / (1u64 << 53) as f64)
        .collect()
}

/// A policy of `m` random rows over `n` entries.
pub fn random_policy(m: usize, n: usize, seed: u64) -> PromptPolicy {
    let rows = (0..m)
        .map(|i| {
            let raw: Vec<f64> = uniform_stream(seed + i as u64, n).iter().map(|x| x + 0.01).collect();
            let total: f64 = raw.iter().sum();
            TokenDistribution::new(raw.iter().map(|x| x / total).collect()).expect("valid row")
        })
        .collect();
    PromptPolicy::from_distributions(rows).expect("valid policy")
}

/// `count` points in `dim` dimensions.
pub fn random_points(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| uniform_stream(seed.wrapping_add(i as u64 * 7919), dim))
        .collect()
}
