//! Small crate-internal helpers.

/// SplitMix64 step; derives independent RNG streams from a master seed so
/// sub-systems never share state.
pub(crate) fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Percentile by nearest-rank on a sorted copy; `q` in [0, 1].
pub(crate) fn percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of an empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Median / interquartile range of a sample.
pub(crate) fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let median = percentile(samples, 0.5);
    let iqr = percentile(samples, 0.75) - percentile(samples, 0.25);
    (median, iqr)
}
